"""Lossless verification: deferred tail check, multi-sequence first-token check, and baseline SpS.

Draw order on the verification stream is fixed: the tail draws ``len(tail)``
uniforms up front (plus one for a resample), then each bundle sequence draws
one uniform in bundle order (plus one for the fallback).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import DraftBundle, DraftSequence, Distribution, RandomStream, Token, ZeroMass, normalize

# bundle sequences are tried in descending first-token draft probability
BUNDLE_ORDER = "descending_first_token_prob"


@dataclass(frozen=True)
class PrefixOutcome:
    """Result of checking last iteration's unverified tail.

    ``rejected_at is None`` means every tail token was accepted; otherwise the
    tail is cut at ``rejected_at`` and ``resample`` replaces that token.
    """

    rejected_at: Optional[int] = None
    resample: Optional[Token] = None

    @property
    def all_accepted(self) -> bool:
        return self.rejected_at is None


@dataclass(frozen=True)
class BundleOutcome:
    """``seq_index`` of the accepted sequence, or ``None`` when all were rejected.

    ``token`` is the token committed at the bundle position either way.
    """

    seq_index: Optional[int]
    token: Token

    @property
    def accepted(self) -> bool:
        return self.seq_index is not None


def accept_test(p_tok: float, q_tok: float, r: float) -> bool:
    if q_tok <= 0.0:
        raise ValueError("drafted token must have positive draft probability")
    return r < p_tok / q_tok


def residual(p: Distribution, q: Distribution) -> Distribution:
    """norm(max(p - q, 0)); raises ZeroMass when p <= q everywhere."""
    if len(p) != len(q):
        raise ValueError("distributions differ in length")
    return normalize(np.maximum(p.probs - q.probs, 0.0))


_RESIDUAL_MEMO: dict = {}
_RESIDUAL_MEMO_MAX = 65536


def _residual_or_p(p: Distribution, q: Distribution) -> Distribution:
    # the memo holds p and q themselves, so their ids cannot be recycled while cached
    key = (id(p), id(q))
    hit = _RESIDUAL_MEMO.get(key)
    if hit is not None and hit[0] is p and hit[1] is q:
        return hit[2]
    try:
        out = residual(p, q)
    except ZeroMass:
        # rejection had probability zero; only float underflow lands here
        out = p
    if len(_RESIDUAL_MEMO) >= _RESIDUAL_MEMO_MAX:
        _RESIDUAL_MEMO.clear()
    _RESIDUAL_MEMO[key] = (p, q, out)
    return out


def verify_prefix(tail: DraftSequence, target_dists: Sequence[Distribution], rng: RandomStream) -> PrefixOutcome:
    """Speculative-sampling check of the tail, oldest position first."""
    if len(target_dists) != len(tail):
        raise ValueError(f"{len(target_dists)} target distributions for a tail of {len(tail)}")
    draws = rng.uniforms(len(tail))
    for j, (tok, p, r) in enumerate(zip(tail.tokens, target_dists, draws)):
        q = tail.proposal(j)
        if not accept_test(p[tok], q[tok], r):
            return PrefixOutcome(rejected_at=j, resample=_residual_or_p(p, q).sample(rng.uniform()))
    return PrefixOutcome()


def verify_bundle(bundle: DraftBundle, p_n: Distribution, rng: RandomStream) -> BundleOutcome:
    """Try each sequence's first token against the running residual of ``p_n``.

    After a rejection the candidate's proposal mass is removed from the running
    target distribution, so the next candidate is tested against what remains;
    the marginal of the committed token is exactly ``p_n``.
    """
    current = p_n
    for i, seq in enumerate(bundle.sequences):
        tok = seq.tokens[0]
        q = seq.proposal(0)
        if accept_test(current[tok], q[tok], rng.uniform()):
            return BundleOutcome(seq_index=i, token=tok)
        current = _residual_or_p(current, q)
    return BundleOutcome(seq_index=None, token=current.sample(rng.uniform()))


def sps_verify(
    draft_tokens: Sequence[Token],
    draft_dists: Sequence[Distribution],
    target_dists: Sequence[Distribution],
    rng: RandomStream,
) -> tuple[int, Token]:
    """Classic speculative sampling: longest accepted prefix plus one resampled or bonus token.

    ``draft_tokens[t]`` must have been sampled from ``draft_dists[t]``;
    ``target_dists`` carries one extra entry for the bonus position.
    """
    gamma = len(draft_tokens)
    if len(draft_dists) != gamma or len(target_dists) != gamma + 1:
        raise ValueError("need gamma draft distributions and gamma + 1 target distributions")
    draws = rng.uniforms(gamma)
    for i, (tok, q, p, r) in enumerate(zip(draft_tokens, draft_dists, target_dists, draws)):
        if not accept_test(p[tok], q[tok], r):
            return i, _residual_or_p(p, q).sample(rng.uniform())
    return gamma, target_dists[gamma].sample(rng.uniform())
