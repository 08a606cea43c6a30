"""Shared domain types: distributions, draft sequences/bundles, generation state, random streams."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SUM_TOL = 1e-9
ZERO_MASS = 1e-12

_MASK64 = (1 << 64) - 1
_INV53 = 1.0 / (1 << 53)
_GOLDEN = 0x9E3779B97F4A7C15

# plain integer ids; no tokenizer exists
Token = int


class ZeroMass(ValueError):
    """Raised when a vector to be normalized carries (numerically) no mass."""


class InvalidDistribution(ValueError):
    pass


class Distribution:
    """Immutable next-token probability vector over a small vocabulary."""

    __slots__ = ("probs", "_cdf")

    def __init__(self, probs, *, check: bool = True):
        arr = np.array(probs, dtype=np.float64)
        if check:
            if arr.ndim != 1 or arr.size == 0:
                raise InvalidDistribution(f"expected a non-empty vector, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise InvalidDistribution(f"entries must be finite and non-negative: {arr}")
            total = float(arr.sum())
            if abs(total - 1.0) > SUM_TOL:
                raise InvalidDistribution(f"entries sum to {total!r}, not 1")
        arr.flags.writeable = False
        self.probs = arr
        self._cdf: Optional[list[float]] = None

    @classmethod
    def point_mass(cls, vocab_size: int, token: Token) -> "Distribution":
        key = (vocab_size, token)
        dist = _POINT_MASSES.get(key)
        if dist is None:
            probs = np.zeros(vocab_size)
            probs[token] = 1.0
            dist = _POINT_MASSES[key] = cls(probs, check=False)
        return dist

    @classmethod
    def uniform(cls, vocab_size: int) -> "Distribution":
        return cls(np.full(vocab_size, 1.0 / vocab_size))

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __getitem__(self, token: Token) -> float:
        return float(self.probs[token])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Distribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def __repr__(self) -> str:
        return f"Distribution({np.array2string(self.probs, precision=4, separator=', ')})"

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[0]

    def argmax(self) -> Token:
        # ties resolve to the lowest id
        return int(np.argmax(self.probs))

    def ranked(self) -> list[Token]:
        """Token ids by descending probability, ties by ascending id."""
        return [int(i) for i in np.lexsort((np.arange(len(self)), -self.probs))]

    def sample(self, u: float) -> Token:
        """Inverse-CDF draw for a uniform ``u`` in [0, 1)."""
        if self._cdf is None:
            self._cdf = np.cumsum(self.probs).tolist()
        cdf = self._cdf
        idx = bisect.bisect_right(cdf, u * cdf[-1])
        if idx >= len(cdf):
            idx = len(cdf) - 1
        # never land on a zero-probability token through float slop
        while self.probs[idx] <= 0.0:
            idx -= 1
        return idx

    def tolist(self) -> list[float]:
        return self.probs.tolist()


_POINT_MASSES: dict[tuple[int, int], Distribution] = {}


def normalize(raw: Sequence[float] | np.ndarray) -> Distribution:
    """Scale a non-negative vector to sum to one.

    Raises ZeroMass when the total is below 1e-12; the caller picks the fallback.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if np.any(arr < 0):
        raise InvalidDistribution(f"negative entries in {arr}")
    total = float(arr.sum())
    if total < ZERO_MASS:
        raise ZeroMass(f"vector has total mass {total!r}")
    return Distribution(arr / total, check=False)


@dataclass(frozen=True)
class DraftSequence:
    """One speculated token run with the draft distribution recorded at each step.

    ``sampled`` says how the tokens were chosen. Greedy (argmax) drafts put all
    proposal mass on the chosen token, so verification must treat the proposal
    as a point mass rather than as ``dists[t]``.
    """

    tokens: tuple[Token, ...]
    dists: tuple[Distribution, ...]
    sampled: bool = False
    _tails: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValueError("a draft sequence needs at least one token")
        if len(self.tokens) != len(self.dists):
            raise ValueError("tokens and dists must have the same length")
        for tok, dist in zip(self.tokens, self.dists):
            if not 0 <= tok < len(dist):
                raise ValueError(f"token {tok} outside vocabulary of size {len(dist)}")
            if dist.probs[tok] <= 0.0:
                raise ValueError(f"drafted token {tok} has zero draft probability")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def first_token_prob(self) -> float:
        return self.dists[0][self.tokens[0]]

    def proposal(self, t: int) -> Distribution:
        """Distribution the token at position ``t`` was actually drawn from."""
        if self.sampled:
            return self.dists[t]
        return Distribution.point_mass(len(self.dists[t]), self.tokens[t])

    def tail(self, start: int) -> Optional["DraftSequence"]:
        """Suffix from ``start`` on, or None when nothing is left."""
        if start >= len(self.tokens):
            return None
        out = self._tails.get(start)
        if out is None:
            out = self._tails[start] = DraftSequence(self.tokens[start:], self.dists[start:], self.sampled)
        return out


@dataclass(frozen=True)
class DraftBundle:
    sequences: tuple[DraftSequence, ...]
    first_dist: Distribution
    theta: float
    budget_used: int

    def __post_init__(self):
        if not self.sequences:
            raise ValueError("bundle must hold at least one sequence")
        firsts = [seq.tokens[0] for seq in self.sequences]
        if len(set(firsts)) != len(firsts):
            raise ValueError(f"first tokens must be pairwise distinct: {firsts}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta out of range: {self.theta}")
        for seq in self.sequences[1:]:
            if not seq.first_token_prob > self.theta:
                raise ValueError("branch sequence does not clear the threshold")
        if self.budget_used != sum(len(seq) for seq in self.sequences):
            raise ValueError("budget_used must equal the total drafted tokens")

    @property
    def s(self) -> int:
        return len(self.sequences)

    @property
    def first_tokens(self) -> list[Token]:
        return [seq.tokens[0] for seq in self.sequences]


def mix_seed(seed: int, index: int) -> int:
    """Output ``index`` of a SplitMix64 generator seeded with ``seed``.

    Random access by index is what makes the streams below counter-based; the
    same function derives independent per-sample seeds.
    """
    z = (int(seed) + (int(index) + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RandomStream:
    """Counter-based uniform stream: draw ``k`` is a pure function of (seed, k).

    Identical seed and draw order give identical draws no matter which thread
    makes them; no generator state beyond the counter is carried.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def uniform(self) -> float:
        """Next draw in [0, 1) with 53 bits of resolution."""
        k = self.counter
        self.counter = k + 1
        return (mix_seed(self.seed, k) >> 11) * _INV53

    def uniforms(self, n: int) -> list[float]:
        k = self.counter
        self.counter = k + n
        seed = self.seed
        return [(mix_seed(seed, i) >> 11) * _INV53 for i in range(k, k + n)]

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, counter={self.counter})"


@dataclass
class GenerationState:
    """Verified prefix plus the unverified tail carried into the next iteration."""

    verified: list[Token]
    rng_draft: RandomStream
    rng_verify: RandomStream
    unverified: Optional[DraftSequence] = None
    prompt_len: int = field(default=0)

    @property
    def n(self) -> int:
        return len(self.verified)

    @property
    def generated(self) -> list[Token]:
        return self.verified[self.prompt_len:]

    def context(self) -> list[Token]:
        """Input shared by both workers: verified prefix followed by the unverified tail."""
        if self.unverified is None:
            return list(self.verified)
        return self.verified + list(self.unverified.tokens)
