"""Backoff Markov-table language models standing in for the target and draft networks.

File format (UTF-8, ``#`` starts a comment line)::

    vocab 3
    order 1
    temperature 1.0          # optional
    ctx 0 : 0.9 0.05 0.05
    ctx 2,1 : 0.2 0.3 0.5    # context tokens oldest first, at most ``order`` of them
    default : 0.4 0.4 0.2    # mandatory backoff row
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import SUM_TOL, Distribution, InvalidDistribution, Token


class ParseError(ValueError):
    pass


class InvalidModel(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    vocab_size: int
    order: int
    table: Mapping[tuple[Token, ...], Distribution]
    temperature: float = 1.0
    _rows: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.vocab_size < 2:
            raise InvalidModel(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.order < 0:
            raise InvalidModel(f"order must be >= 0, got {self.order}")
        if not self.temperature > 0:
            raise InvalidModel(f"temperature must be positive, got {self.temperature}")
        if () not in self.table:
            raise InvalidModel("missing default row")
        for ctx, dist in self.table.items():
            if len(ctx) > self.order:
                raise InvalidModel(f"context {ctx} longer than order {self.order}")
            if any(not 0 <= t < self.vocab_size for t in ctx):
                raise InvalidModel(f"context {ctx} outside vocabulary")
            if len(dist) != self.vocab_size:
                raise InvalidModel(f"row for {ctx} has {len(dist)} entries, expected {self.vocab_size}")
        object.__setattr__(
            self, "_rows", {ctx: _apply_temperature(d, self.temperature) for ctx, d in self.table.items()}
        )

    def with_temperature(self, temperature: float) -> "ModelSpec":
        if temperature == self.temperature:
            return self
        return replace(self, temperature=temperature)

    def lookup(self, context: Sequence[Token]) -> Distribution:
        rows = self._rows
        k = min(self.order, len(context))
        while k > 0:
            row = rows.get(tuple(context[-k:]))
            if row is not None:
                return row
            k -= 1
        return rows[()]


def _apply_temperature(dist: Distribution, temperature: float) -> Distribution:
    if temperature == 1.0:
        return dist
    probs = dist.probs
    scaled = np.zeros_like(probs)
    pos = probs > 0
    # work in log space so small temperatures do not underflow
    logs = np.log(probs[pos]) / temperature
    scaled[pos] = np.exp(logs - logs.max())
    return Distribution(scaled / scaled.sum())


def forward(model: ModelSpec, context: Sequence[Token]) -> Distribution:
    """Next-token distribution for the longest matching context suffix, temperature-adjusted."""
    return model.lookup(context)


def forward_scored(model: ModelSpec, context: Sequence[Token], candidates: Sequence[Token]) -> list[Distribution]:
    """Distribution at the position of every candidate, as one batched pass.

    ``result[t] == forward(model, context + candidates[:t])``.
    """
    if not candidates:
        raise ValueError("forward_scored needs at least one candidate")
    seq = list(context)
    out = []
    for tok in candidates:
        out.append(model.lookup(seq))
        seq.append(tok)
    return out


def parse_model(text: str, source: str = "<string>") -> ModelSpec:
    vocab = order = None
    temperature = 1.0
    rows: dict[tuple[Token, ...], list[float]] = {}

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if ":" in line:
            head, _, body = line.partition(":")
            head = head.strip()
            try:
                probs = [float(x) for x in body.split()]
            except ValueError as exc:
                raise ParseError(f"{where}: bad probability list: {exc}") from None
            if head == "default":
                ctx: tuple[Token, ...] = ()
            elif head.startswith("ctx"):
                ctx_text = head[3:].strip()
                try:
                    ctx = tuple(int(t) for t in ctx_text.replace(" ", "").split(",") if t != "")
                except ValueError:
                    raise ParseError(f"{where}: bad context {ctx_text!r}") from None
                if not ctx:
                    raise ParseError(f"{where}: empty context; use 'default'")
            else:
                raise ParseError(f"{where}: unknown row kind {head!r}")
            if ctx in rows:
                raise ParseError(f"{where}: duplicate row for context {ctx}")
            rows[ctx] = probs
            continue

        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"{where}: expected 'key value', got {line!r}")
        key, value = parts
        try:
            if key == "vocab":
                vocab = int(value)
            elif key == "order":
                order = int(value)
            elif key == "temperature":
                temperature = float(value)
            else:
                raise ParseError(f"{where}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"{where}: bad value for {key}: {value!r}") from None

    if vocab is None:
        raise ParseError(f"{source}: missing 'vocab' header")
    if order is None:
        order = 0
    if () not in rows:
        raise InvalidModel(f"{source}: missing default row")

    table = {}
    for ctx, probs in rows.items():
        if len(probs) != vocab:
            raise InvalidModel(f"{source}: row {ctx or 'default'} has {len(probs)} entries, vocab is {vocab}")
        total = math.fsum(probs)
        if abs(total - 1.0) > SUM_TOL:
            raise InvalidModel(f"{source}: row {ctx or 'default'} sums to {total!r}")
        try:
            table[ctx] = Distribution(probs)
        except InvalidDistribution as exc:
            raise InvalidModel(f"{source}: row {ctx or 'default'}: {exc}") from None
    return ModelSpec(vocab_size=vocab, order=order, table=table, temperature=temperature)


def load_model(path) -> ModelSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8: {exc}") from None
    return parse_model(text, source=str(path))


def dump_model(model: ModelSpec) -> str:
    lines = [f"vocab {model.vocab_size}", f"order {model.order}"]
    if model.temperature != 1.0:
        lines.append(f"temperature {model.temperature!r}")
    for ctx in sorted(model.table, key=lambda c: (len(c), c)):
        probs = " ".join(repr(float(p)) for p in model.table[ctx].probs)
        head = "default" if not ctx else "ctx " + ",".join(str(t) for t in ctx)
        lines.append(f"{head} : {probs}")
    return "\n".join(lines) + "\n"


def save_model(model: ModelSpec, path) -> None:
    Path(path).write_text(dump_model(model), encoding="utf-8")


def _all_contexts(vocab: int, order: int):
    ctxs = [()]
    frontier = [()]
    for _ in range(order):
        frontier = [c + (t,) for c in frontier for t in range(vocab)]
        ctxs.extend(frontier)
    return ctxs


def _exact(probs: np.ndarray) -> Distribution:
    probs = probs / probs.sum()
    # push the rounding residue onto the largest entry so files round-trip within tolerance
    probs[np.argmax(probs)] += 1.0 - probs.sum()
    return Distribution(probs)


def random_model(rng: np.random.Generator, vocab_size: int, order: int = 1, concentration: float = 0.5) -> ModelSpec:
    """Dense random backoff table with Dirichlet rows over every context up to ``order``."""
    table = {
        ctx: _exact(rng.dirichlet(np.full(vocab_size, concentration)))
        for ctx in _all_contexts(vocab_size, order)
    }
    return ModelSpec(vocab_size=vocab_size, order=order, table=table)


def perturbed(rng: np.random.Generator, model: ModelSpec, mix: float = 0.3, concentration: float = 0.5) -> ModelSpec:
    """Draft-like copy: each row blended with fresh Dirichlet noise (``mix`` = noise weight)."""
    table = {}
    for ctx, dist in model.table.items():
        noise = rng.dirichlet(np.full(model.vocab_size, concentration))
        table[ctx] = _exact((1.0 - mix) * dist.probs + mix * noise)
    return ModelSpec(vocab_size=model.vocab_size, order=model.order, table=table, temperature=model.temperature)


def deterministic_chain(vocab_size: int, step: int = 1) -> ModelSpec:
    """Order-1 one-hot model: token t is always followed by (t + step) mod V."""
    table = {(t,): Distribution.point_mass(vocab_size, (t + step) % vocab_size) for t in range(vocab_size)}
    table[()] = Distribution.point_mass(vocab_size, 0)
    return ModelSpec(vocab_size=vocab_size, order=1, table=table)


def noisy_chain(rng: np.random.Generator, vocab_size: int, confidence: float, step: int = 1) -> ModelSpec:
    """Order-1 model that follows ``t -> (t + step) mod V`` with probability ``confidence``.

    The leftover mass is spread over the other tokens with Dirichlet(1) weights.
    Two such models with the same ``step`` make a high-agreement draft/target pair.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    table = {}
    for prev in [None, *range(vocab_size)]:
        nxt = 0 if prev is None else (prev + step) % vocab_size
        row = np.empty(vocab_size)
        row[nxt] = confidence
        row[np.arange(vocab_size) != nxt] = (1.0 - confidence) * rng.dirichlet(np.ones(vocab_size - 1))
        table[() if prev is None else (prev,)] = _exact(row)
    return ModelSpec(vocab_size=vocab_size, order=1, table=table)
