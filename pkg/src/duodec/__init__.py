"""Parallel draft/target speculative decoding with toy n-gram models and a latency simulator."""

__version__ = "0.1.0"

from .core import (
    Distribution,
    DraftBundle,
    DraftSequence,
    GenerationState,
    InvalidDistribution,
    RandomStream,
    ZeroMass,
    mix_seed,
    normalize,
)
from .drafting import draft_dynamic, extend_greedy
from .engine import (
    ConfigError,
    DegenerateTiming,
    EngineConfig,
    GenerationResult,
    InlineDraftWorker,
    IterationRecord,
    SchedulingFuzzer,
    ThreadedDraftWorker,
    calibrate,
    calibrated_budget,
    choose_budget,
    generate,
    run_duo,
    run_sps,
    run_vanilla,
)
from .models import (
    InvalidModel,
    ModelSpec,
    ParseError,
    deterministic_chain,
    forward,
    forward_scored,
    load_model,
    noisy_chain,
    parse_model,
    perturbed,
    random_model,
    save_model,
)
from .simclock import BUILTIN_PROFILES, DeviceProfile, ProfileError, VirtualClock, WallClock, load_profile
from .verify import accept_test, residual, sps_verify, verify_bundle, verify_prefix

__all__ = [
    "BUILTIN_PROFILES",
    "ConfigError",
    "DegenerateTiming",
    "DeviceProfile",
    "Distribution",
    "DraftBundle",
    "DraftSequence",
    "EngineConfig",
    "GenerationResult",
    "GenerationState",
    "InlineDraftWorker",
    "InvalidDistribution",
    "InvalidModel",
    "IterationRecord",
    "ModelSpec",
    "ParseError",
    "ProfileError",
    "RandomStream",
    "SchedulingFuzzer",
    "ThreadedDraftWorker",
    "VirtualClock",
    "WallClock",
    "ZeroMass",
    "accept_test",
    "calibrate",
    "calibrated_budget",
    "choose_budget",
    "deterministic_chain",
    "draft_dynamic",
    "extend_greedy",
    "forward",
    "forward_scored",
    "generate",
    "load_model",
    "load_profile",
    "mix_seed",
    "noisy_chain",
    "normalize",
    "parse_model",
    "perturbed",
    "random_model",
    "residual",
    "run_duo",
    "run_sps",
    "run_vanilla",
    "save_model",
    "sps_verify",
    "verify_bundle",
    "verify_prefix",
]
