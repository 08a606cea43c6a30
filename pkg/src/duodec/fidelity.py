"""Empirical output-law checks against the target model's exact per-position marginals."""

from __future__ import annotations

import copy
from collections import defaultdict
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Token, mix_seed
from .engine import EngineConfig, InlineDraftWorker, ThreadedDraftWorker, run_duo, run_sps, run_vanilla
from .models import ModelSpec, forward
from .simclock import BUILTIN_PROFILES, DEFAULT_PROFILE, DeviceProfile, VirtualClock

TV_THRESHOLD = 0.01
DEFAULT_POSITIONS = 4


def tv_distance(a, b) -> float:
    return 0.5 * float(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)).sum())


def exact_position_laws(target: ModelSpec, prompt: Sequence[Token], positions: int, temperature: float = 1.0) -> np.ndarray:
    """Marginal law of each of the first ``positions`` generated tokens, by exhaustive propagation.

    The state carried between positions is the last ``order`` tokens, which is
    all the backoff table ever looks at.
    """
    target = target.with_temperature(temperature)
    order = target.order
    vocab = target.vocab_size

    def key(tokens: tuple) -> tuple:
        return tokens[-order:] if order else ()

    frontier = {key(tuple(prompt)): 1.0}
    laws = np.zeros((positions, vocab))
    for pos in range(positions):
        nxt: dict = defaultdict(float)
        for state, weight in frontier.items():
            probs = forward(target, list(state)).probs
            laws[pos] += weight * probs
            for tok in np.flatnonzero(probs):
                nxt[key(state + (int(tok),))] += weight * probs[tok]
        frontier = nxt
    return laws


def exact_sequence_law(target: ModelSpec, prompt: Sequence[Token], length: int, temperature: float = 1.0) -> dict:
    """Probability of every length-``length`` continuation (small vocabularies only)."""
    target = target.with_temperature(temperature)
    law = {(): 1.0}
    for _ in range(length):
        nxt = {}
        for seq, weight in law.items():
            probs = forward(target, list(prompt) + list(seq)).probs
            for tok in np.flatnonzero(probs):
                nxt[seq + (int(tok),)] = weight * probs[tok]
        law = nxt
    return law


def _reseeded(config: EngineConfig, index: int) -> EngineConfig:
    # dataclasses.replace and copy.copy are too slow for the per-sample loop
    out = object.__new__(EngineConfig)
    fields = out.__dict__
    fields.update(config.__dict__)
    fields["draft_seed"] = mix_seed(config.draft_seed, index)
    fields["verify_seed"] = mix_seed(config.verify_seed, index)
    return out


def sample_runs(
    target: ModelSpec,
    draft: Optional[ModelSpec],
    prompt: Sequence[Token],
    config: EngineConfig,
    samples: int,
    positions: int = DEFAULT_POSITIONS,
    profile: Optional[DeviceProfile] = None,
    workers: str = "thread",
) -> Iterable[list[Token]]:
    """Yield the first ``positions`` tokens of ``samples`` independent runs.

    Run ``i`` uses seeds derived from the configured seeds and ``i``, so the
    sample set does not depend on how the work is split up.
    """
    profile = profile or BUILTIN_PROFILES[DEFAULT_PROFILE]
    config = copy.copy(config)
    object.__setattr__(config, "max_new_tokens", positions)
    config.validate()
    mode = config.mode
    if mode == "duo":
        t_draft = draft.with_temperature(config.temperature)
        worker_cls = ThreadedDraftWorker if workers == "thread" else InlineDraftWorker
        with worker_cls(t_draft, config.gamma, config.s_max) as worker:
            for i in range(samples):
                res = run_duo(target, draft, prompt, _reseeded(config, i), VirtualClock(profile), worker=worker)
                yield res.tokens[:positions]
    elif mode == "sps":
        for i in range(samples):
            yield run_sps(target, draft, prompt, _reseeded(config, i), VirtualClock(profile)).tokens[:positions]
    else:
        for i in range(samples):
            yield run_vanilla(target, prompt, _reseeded(config, i), VirtualClock(profile)).tokens[:positions]


def empirical_position_laws(runs: Iterable[list[Token]], vocab_size: int, positions: int) -> np.ndarray:
    counts = np.zeros((positions, vocab_size))
    n = 0
    for tokens in runs:
        for pos, tok in enumerate(tokens):
            counts[pos, tok] += 1
        n += 1
    return counts / max(n, 1)


def fidelity_report(
    target: ModelSpec,
    draft: Optional[ModelSpec],
    prompt: Sequence[Token],
    config: EngineConfig,
    samples: int,
    positions: int = DEFAULT_POSITIONS,
    threshold: float = TV_THRESHOLD,
    profile: Optional[DeviceProfile] = None,
    workers: str = "thread",
) -> dict:
    """TV distance between the empirical and exact law at each of the first ``positions`` tokens."""
    exact = exact_position_laws(target, prompt, positions, config.temperature)
    runs = sample_runs(target, draft, prompt, config, samples, positions, profile, workers)
    empirical = empirical_position_laws(runs, target.vocab_size, positions)
    tvs = [tv_distance(empirical[k], exact[k]) for k in range(positions)]
    return {
        "mode": config.mode,
        "samples": samples,
        "threshold": threshold,
        "positions": [{"position": k, "tv": tv} for k, tv in enumerate(tvs)],
        "max_tv": max(tvs),
        "pass": max(tvs) <= threshold,
    }
