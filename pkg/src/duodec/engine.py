"""Generation loops (vanilla, sequential SpS, parallel draft/target decoding) and hardware-aware budgeting."""

from __future__ import annotations

import logging
import math
import queue
import random
import statistics
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

from .core import GenerationState, RandomStream, Token
from .drafting import DEFAULT_MAX_SEQUENCES, draft_dynamic, extend_greedy
from .models import ModelSpec, forward, forward_scored
from .simclock import Comm, Draft, TargetPass, Verify, VirtualClock, WallClock
from .verify import sps_verify, verify_bundle, verify_prefix

log = logging.getLogger(__name__)

MODES = ("vanilla", "sps", "duo")
GAMMA_CAP = 256
CALIBRATION_WARMUP = 5


class ConfigError(ValueError):
    pass


class DegenerateTiming(RuntimeError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    mode: str = "duo"
    gamma: int = 8
    s_max: int = DEFAULT_MAX_SEQUENCES
    max_new_tokens: int = 32
    temperature: float = 1.0
    draft_seed: int = 0
    verify_seed: int = 1
    budget_policy: str = "fixed"  # or "calibrated"
    gamma_cap: int = GAMMA_CAP
    probe_len: int = 8
    calibration_trials: int = 10

    def validate(self) -> "EngineConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.budget_policy not in ("fixed", "calibrated"):
            raise ConfigError(f"budget_policy must be 'fixed' or 'calibrated', got {self.budget_policy!r}")
        if not 2 <= self.gamma <= self.gamma_cap:
            raise ConfigError(f"gamma must lie in [2, {self.gamma_cap}], got {self.gamma}")
        if self.s_max < 1:
            raise ConfigError(f"s_max must be >= 1, got {self.s_max}")
        if self.max_new_tokens < 1:
            raise ConfigError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.probe_len < 1:
            raise ConfigError(f"probe_len must be >= 1, got {self.probe_len}")
        if self.calibration_trials < 10:
            raise ConfigError(f"calibration needs >= 10 trials, got {self.calibration_trials}")
        return self


@dataclass(slots=True)
class IterationRecord:
    draft_time: float
    target_time: float
    verify_time: float
    comm_time: float
    tokens_processed: int
    sequence_count: int
    accepted: int
    elapsed: float = 0.0

    def as_json(self) -> dict:
        return {
            "draft_ms": self.draft_time,
            "target_ms": self.target_time,
            "verify_ms": self.verify_time,
            "comm_ms": self.comm_time,
            "iteration_ms": self.elapsed,
            "tokens_processed": self.tokens_processed,
            "accepted": self.accepted,
            "s": self.sequence_count,
        }


@dataclass
class GenerationResult:
    """Emitted tokens (prompt excluded) and timing; all times in ms."""

    tokens: list[Token]
    iterations: list[IterationRecord]
    ttft: float
    total_time: float
    mode: str = "duo"
    gamma: Optional[int] = None

    @property
    def tps(self) -> float:
        if self.total_time <= 0:
            return math.inf
        return len(self.tokens) / (self.total_time / 1e3)

    def as_json(self) -> dict:
        return {
            "mode": self.mode,
            "gamma": self.gamma,
            "tokens": list(self.tokens),
            "tps": self.tps,
            "ttft_ms": self.ttft,
            "total_ms": self.total_time,
            "iterations": [rec.as_json() for rec in self.iterations],
        }


class SchedulingFuzzer:
    """Injects random short sleeps into worker code paths to shake up thread interleavings."""

    def __init__(self, seed: int = 0, max_delay_ms: float = 0.5):
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self.max_delay_ms = max_delay_ms

    def __call__(self) -> None:
        with self._lock:
            delay = self._rng.random() * self.max_delay_ms
        time.sleep(delay / 1e3)


def _noop() -> None:
    pass


class _Drafter:
    """draft_dynamic with a memo keyed on the only context tokens the backoff table can see."""

    def __init__(self, draft: ModelSpec, gamma: int, s_max: int):
        self.draft = draft
        self.gamma = gamma
        self.s_max = s_max
        self._memo: dict = {}

    def __call__(self, context: Sequence[Token]):
        order = self.draft.order
        key = tuple(context[-order:]) if order else ()
        bundle = self._memo.get(key)
        if bundle is None:
            bundle = draft_dynamic(self.draft, context, self.gamma, self.s_max)
            self._memo[key] = bundle
        return bundle


class InlineDraftWorker:
    """Draft role executed in the caller's thread; same contract as ThreadedDraftWorker."""

    def __init__(self, draft: ModelSpec, gamma: int, s_max: int, jitter: Optional[Callable[[], None]] = None):
        self._drafter = _Drafter(draft, gamma, s_max)
        self._jitter = jitter or _noop
        self._pending = None

    def submit(self, context: Sequence[Token]) -> None:
        self._pending = list(context)

    def collect(self):
        self._jitter()
        t0 = time.perf_counter()
        bundle = self._drafter(self._pending)
        return bundle, Draft(bundle.budget_used, elapsed_ms=(time.perf_counter() - t0) * 1e3)

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ThreadedDraftWorker(InlineDraftWorker):
    """Draft role on a long-lived thread.

    One message pair per iteration: the target side sends the current prefix
    in, the bundle comes back out. ``collect`` is the blocking rendezvous.
    """

    def __init__(self, draft: ModelSpec, gamma: int, s_max: int, jitter: Optional[Callable[[], None]] = None):
        super().__init__(draft, gamma, s_max, jitter)
        self._inbox: queue.SimpleQueue = queue.SimpleQueue()
        self._outbox: queue.SimpleQueue = queue.SimpleQueue()
        self._thread = threading.Thread(target=self._loop, name="draft-worker", daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        while True:
            context = self._inbox.get()
            if context is None:
                return
            try:
                self._jitter()
                t0 = time.perf_counter()
                bundle = self._drafter(context)
                event = Draft(bundle.budget_used, elapsed_ms=(time.perf_counter() - t0) * 1e3)
                self._jitter()
                self._outbox.put((bundle, event))
            except BaseException as exc:  # surfaced on the target side
                self._outbox.put(exc)

    def submit(self, context: Sequence[Token]) -> None:
        self._inbox.put(list(context))

    def collect(self):
        out = self._outbox.get()
        if isinstance(out, BaseException):
            raise out
        return out

    def close(self) -> None:
        if self._thread.is_alive():
            self._inbox.put(None)
            self._thread.join()


def _check_prompt(prompt: Sequence[Token], *models: ModelSpec) -> list[Token]:
    vocab = models[0].vocab_size
    for m in models[1:]:
        if m.vocab_size != vocab:
            raise ConfigError(f"target and draft vocabularies differ ({vocab} vs {m.vocab_size})")
    tokens = [int(t) for t in prompt]
    bad = [t for t in tokens if not 0 <= t < vocab]
    if bad:
        raise ConfigError(f"prompt tokens {bad} outside vocabulary of size {vocab}")
    return tokens


def _new_state(prompt: list[Token], config: EngineConfig) -> GenerationState:
    return GenerationState(
        verified=list(prompt),
        rng_draft=RandomStream(config.draft_seed),
        rng_verify=RandomStream(config.verify_seed),
        prompt_len=len(prompt),
    )


def run_vanilla(target: ModelSpec, prompt: Sequence[Token], config: EngineConfig, clock=None) -> GenerationResult:
    """One target forward and one sampled token per iteration."""
    prompt = _check_prompt(prompt, target)
    target = target.with_temperature(config.temperature)
    clock = clock or WallClock()
    state = _new_state(prompt, config)
    records = []
    start = clock.now()
    ttft = None
    while state.n - state.prompt_len < config.max_new_tokens:
        t_iter = clock.now()
        t0 = time.perf_counter()
        p = forward(target, state.verified)
        tok = p.sample(state.rng_verify.uniform())
        event = TargetPass(1, elapsed_ms=(time.perf_counter() - t0) * 1e3)
        clock.advance(event)
        state.verified.append(tok)
        if ttft is None:
            ttft = clock.now() - start
        records.append(IterationRecord(0.0, clock.duration(event), 0.0, 0.0, 1, 0, 0, clock.now() - t_iter))
    return GenerationResult(state.generated, records, ttft, clock.now() - start, mode="vanilla")


def _sample_draft(draft: ModelSpec, context: list[Token], gamma: int, rng: RandomStream):
    seq = list(context)
    tokens, dists = [], []
    for _ in range(gamma):
        q = forward(draft, seq)
        tok = q.sample(rng.uniform())
        tokens.append(tok)
        dists.append(q)
        seq.append(tok)
    return tokens, dists


def run_sps(target: ModelSpec, draft: ModelSpec, prompt: Sequence[Token], config: EngineConfig, clock=None) -> GenerationResult:
    """Baseline speculative sampling: draft gamma sampled tokens, then one scored target pass.

    Draft and target latencies accrue back to back.
    """
    prompt = _check_prompt(prompt, target, draft)
    target = target.with_temperature(config.temperature)
    draft = draft.with_temperature(config.temperature)
    clock = clock or WallClock()
    gamma = config.gamma
    state = _new_state(prompt, config)
    records = []
    start = clock.now()
    ttft = None
    while state.n - state.prompt_len < config.max_new_tokens:
        t_iter = clock.now()
        ctx = state.verified

        t0 = time.perf_counter()
        tokens, dists = _sample_draft(draft, ctx, gamma, state.rng_draft)
        draft_event = Draft(gamma, elapsed_ms=(time.perf_counter() - t0) * 1e3)
        clock.advance(draft_event)

        t0 = time.perf_counter()
        target_dists = forward_scored(target, ctx, tokens) + [forward(target, ctx + tokens)]
        target_event = TargetPass(gamma + 1, elapsed_ms=(time.perf_counter() - t0) * 1e3)
        clock.advance(target_event)

        t0 = time.perf_counter()
        accepted, nxt = sps_verify(tokens, dists, target_dists, state.rng_verify)
        state.verified.extend(tokens[:accepted])
        state.verified.append(nxt)
        verify_event = Verify(elapsed_ms=(time.perf_counter() - t0) * 1e3)
        clock.advance(verify_event)

        if ttft is None:
            ttft = clock.now() - start
        records.append(
            IterationRecord(
                draft_time=clock.duration(draft_event),
                target_time=clock.duration(target_event),
                verify_time=clock.duration(verify_event),
                comm_time=0.0,
                tokens_processed=accepted + 1,
                sequence_count=1,
                accepted=accepted,
                elapsed=clock.now() - t_iter,
            )
        )
    return GenerationResult(state.generated, records, ttft, clock.now() - start, mode="sps", gamma=gamma)


def run_duo(
    target: ModelSpec,
    draft: ModelSpec,
    prompt: Sequence[Token],
    config: EngineConfig,
    clock=None,
    worker: Optional[InlineDraftWorker] = None,
    jitter: Optional[Callable[[], None]] = None,
) -> GenerationResult:
    """Parallel draft/target decoding with deferred verification of the previous draft.

    Each iteration both roles see the same input (verified prefix plus the
    unverified tail). The draft worker builds a multi-sequence bundle while the
    target scores the tail positions plus the next position. After the
    rendezvous the tail is verified first; only if it survives intact is the
    bundle checked, and the accepted sequence's remainder becomes the new tail.

    ``worker`` lets callers reuse one draft worker across runs; by default a
    fresh threaded worker is started and shut down around the call.
    """
    prompt = _check_prompt(prompt, target, draft)
    target = target.with_temperature(config.temperature)
    draft = draft.with_temperature(config.temperature)
    clock = clock or WallClock()
    jitter = jitter or _noop
    owns_worker = worker is None
    if owns_worker:
        worker = ThreadedDraftWorker(draft, config.gamma, config.s_max, jitter=jitter)

    state = _new_state(prompt, config)
    rng = state.rng_verify
    wall = not clock.simulated
    perf = time.perf_counter
    records = []
    start = clock.now()
    ttft = None
    try:
        while state.n - state.prompt_len < config.max_new_tokens:
            t_iter = clock.now()
            ctx = state.context()
            worker.submit(ctx)

            jitter()
            tail = state.unverified
            t0 = perf() if wall else 0.0
            tail_p = forward_scored(target, state.verified, tail.tokens) if tail is not None else []
            p_n = forward(target, ctx)
            target_event = TargetPass(len(tail_p) + 1, elapsed_ms=(perf() - t0) * 1e3 if wall else None)

            t0 = perf() if wall else 0.0
            bundle, draft_event = worker.collect()
            comm_event = Comm(elapsed_ms=(perf() - t0) * 1e3 if wall else None)

            t0 = perf() if wall else 0.0
            committed = accepted = 0
            check_bundle = True
            if tail is not None:
                outcome = verify_prefix(tail, tail_p, rng)
                if outcome.all_accepted:
                    state.verified.extend(tail.tokens)
                    committed = accepted = len(tail)
                else:
                    j = outcome.rejected_at
                    state.verified.extend(tail.tokens[:j])
                    state.verified.append(outcome.resample)
                    committed, accepted = j + 1, j
                    check_bundle = False  # drafted on top of a rejected token
                state.unverified = None
            if check_bundle:
                outcome = verify_bundle(bundle, p_n, rng)
                state.verified.append(outcome.token)
                committed += 1
                if outcome.accepted:
                    accepted += 1
                    state.unverified = bundle.sequences[outcome.seq_index].tail(1)
            verify_event = Verify(elapsed_ms=(perf() - t0) * 1e3 if wall else None)

            # the two roles overlap; the exchange and verification follow in sequence
            d_draft, d_target = clock.duration(draft_event), clock.duration(target_event)
            d_comm, d_verify = clock.duration(comm_event), clock.duration(verify_event)
            now = clock.advance_ms(max(d_draft, d_target) + d_comm + d_verify)
            if ttft is None:
                ttft = now - start
            records.append(
                IterationRecord(d_draft, d_target, d_verify, d_comm, committed, bundle.s, accepted, now - t_iter)
            )
    finally:
        if owns_worker:
            worker.close()
    return GenerationResult(state.generated, records, ttft, clock.now() - start, mode="duo", gamma=config.gamma)


def calibrate(target: ModelSpec, draft: ModelSpec, probe_len: int = 8, trials: int = 10, clock=None) -> float:
    """Cost coefficient: median target pass time at ``probe_len`` over median draft step time."""
    if trials < 10:
        raise ConfigError(f"calibration needs >= 10 trials, got {trials}")
    clock = clock or WallClock()
    context = [0]
    candidates, _ = extend_greedy(draft, context, probe_len)
    target_times, draft_times = [], []
    for i in range(CALIBRATION_WARMUP + trials):
        _, t_target = clock.measure(TargetPass(probe_len), lambda: forward_scored(target, context, candidates))
        _, t_draft = clock.measure(Draft(1), lambda: forward(draft, context))
        if i >= CALIBRATION_WARMUP:
            target_times.append(t_target)
            draft_times.append(t_draft)
    draft_median = statistics.median(draft_times)
    if draft_median < clock.resolution_ms:
        raise DegenerateTiming(f"draft step median {draft_median} ms is below clock resolution")
    return statistics.median(target_times) / draft_median


def choose_budget(c: float, cap: int = GAMMA_CAP) -> int:
    if not c > 0:
        raise ValueError(f"cost coefficient must be positive, got {c}")
    # round half up; never below 2 so the drafting threshold is defined
    return min(cap, max(2, math.floor(c + 0.5)))


def calibrated_budget(
    target: ModelSpec,
    draft: ModelSpec,
    clock,
    probe_len: int = 8,
    trials: int = 10,
    cap: int = GAMMA_CAP,
    max_rounds: int = 8,
) -> tuple[float, int, int]:
    """Re-probe at the chosen budget until it is self-consistent.

    In steady state the target pass covers ``gamma`` positions, so the probe
    width is moved to the budget it implies. Returns (c, gamma, probe_len).
    """
    probe = probe_len
    for _ in range(max_rounds):
        c = calibrate(target, draft, probe, trials, clock)
        gamma = choose_budget(c, cap)
        if gamma == probe:
            break
        probe = gamma
    return c, gamma, probe


def generate(
    target: ModelSpec,
    draft: Optional[ModelSpec],
    prompt: Sequence[Token],
    config: EngineConfig,
    clock=None,
    workers: str = "thread",
    **duo_kwargs,
) -> GenerationResult:
    """Dispatch on ``config.mode``; resolves a calibrated budget first if asked to.

    ``workers="inline"`` runs the draft role in the calling thread (same output,
    less overhead); ``"thread"`` gives it a thread of its own.
    """
    config.validate()
    if config.mode != "vanilla" and draft is None:
        raise ConfigError(f"mode {config.mode!r} needs a draft model")
    if config.mode != "vanilla" and config.budget_policy == "calibrated":
        calib_clock = VirtualClock(clock.profile) if isinstance(clock, VirtualClock) else WallClock()
        _, gamma, _ = calibrated_budget(
            target, draft, calib_clock, config.probe_len, config.calibration_trials, config.gamma_cap
        )
        config = replace(config, gamma=gamma)
        log.info("calibrated budget gamma=%d", gamma)
    if config.mode == "vanilla":
        return run_vanilla(target, prompt, config, clock)
    if config.mode == "sps":
        return run_sps(target, draft, prompt, config, clock)
    if workers == "inline" and "worker" not in duo_kwargs:
        worker = InlineDraftWorker(draft.with_temperature(config.temperature), config.gamma, config.s_max)
        return run_duo(target, draft, prompt, config, clock, worker=worker, **duo_kwargs)
    if workers not in ("thread", "inline"):
        raise ConfigError(f"workers must be 'thread' or 'inline', got {workers!r}")
    return run_duo(target, draft, prompt, config, clock, **duo_kwargs)
