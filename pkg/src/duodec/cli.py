"""Command-line entry point: generate | bench | calibrate | fidelity | profile.

Exit codes: 0 success, 2 usage/config error, 3 model/profile load failure,
4 fidelity check failed.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import logging
import sys
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from . import __version__
from .engine import (
    MODES,
    ConfigError,
    DegenerateTiming,
    EngineConfig,
    calibrated_budget,
    generate,
)
from .fidelity import TV_THRESHOLD, fidelity_report
from .models import InvalidModel, ModelSpec, ParseError, load_model
from .simclock import DEFAULT_PROFILE, DeviceProfile, ProfileError, VirtualClock, WallClock, load_profile

log = logging.getLogger("duodec")

EXIT_OK, EXIT_CONFIG, EXIT_LOAD, EXIT_FIDELITY = 0, 2, 3, 4
MIN_FIDELITY_SAMPLES = 10_000

# config-file key -> (argparse dest, converter)
_CONFIG_KEYS = {
    "mode": ("mode", str),
    "modes": ("modes", str),
    "target": ("target", str),
    "draft": ("draft", str),
    "profile": ("profile", str),
    "prompt": ("prompt", str),
    "prompt_file": ("prompt_file", str),
    "gamma": ("gamma", int),
    "smax": ("smax", int),
    "max_tokens": ("max_tokens", int),
    "temperature": ("temperature", float),
    "seed_draft": ("seed_draft", int),
    "seed_verify": ("seed_verify", int),
    "budget_policy": ("budget_policy", str),
    "probe_len": ("probe_len", int),
    "trials": ("trials", int),
    "samples": ("samples", int),
    "positions": ("positions", int),
    "clock": ("clock", str),
    "workers": ("workers", str),
    "out": ("out", str),
}

_DEFAULTS = {
    "mode": "duo",
    "modes": None,
    "target": None,
    "draft": None,
    "profile": DEFAULT_PROFILE,
    "prompt": None,
    "prompt_file": None,
    "gamma": 8,
    "smax": 8,
    "max_tokens": 32,
    "temperature": 1.0,
    "seed_draft": 0,
    "seed_verify": 1,
    "budget_policy": "fixed",
    "probe_len": 8,
    "trials": 10,
    "samples": 200_000,
    "positions": 4,
    "clock": "sim",
    "workers": "thread",
    "out": None,
}


def load_schema(command: str) -> dict:
    """JSON schema shipped for a subcommand's output records."""
    path = importlib.resources.files("duodec") / "schemas" / f"{command}.schema.json"
    return json.loads(path.read_text(encoding="utf-8"))


class LoadError(RuntimeError):
    pass


@dataclass
class RunManifest:
    """Everything one command needs, after merging the config file and flags."""

    config: EngineConfig
    target: ModelSpec
    draft: Optional[ModelSpec]
    profile: DeviceProfile
    prompt: list[int]
    clock_kind: str = "sim"
    workers: str = "thread"
    out: Optional[str] = None
    modes: list[str] = field(default_factory=list)
    samples: int = 200_000
    positions: int = 4

    def clock(self):
        return VirtualClock(self.profile) if self.clock_kind == "sim" else WallClock()


def read_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition(" ")
        value = value.strip()
        if key not in _CONFIG_KEYS or not value:
            raise ConfigError(f"{path}:{lineno}: expected '<key> <value>' with key in {sorted(_CONFIG_KEYS)}")
        dest, conv = _CONFIG_KEYS[key]
        try:
            values[dest] = conv(value)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return values


def _parse_tokens(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"prompt must be integer token ids, got {text!r}") from None


def _load_model(path: str, role: str) -> ModelSpec:
    try:
        return load_model(path)
    except FileNotFoundError:
        raise LoadError(f"{role} model not found: {path}") from None
    except (OSError, ParseError, InvalidModel) as exc:
        raise LoadError(f"cannot load {role} model: {exc}") from None


def build_manifest(args: argparse.Namespace, needs_draft: bool) -> RunManifest:
    opts = dict(_DEFAULTS)
    if args.config:
        opts.update(read_config_file(args.config))
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value

    if opts["mode"] not in MODES:
        raise ConfigError(f"--mode must be one of {MODES}")
    modes = [m.strip() for m in opts["modes"].split(",")] if opts["modes"] else []
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r} in --modes")
    if opts["clock"] not in ("sim", "wall"):
        raise ConfigError("--clock must be 'sim' or 'wall'")
    if opts["workers"] not in ("thread", "inline"):
        raise ConfigError("--workers must be 'thread' or 'inline'")
    if not opts["target"]:
        raise ConfigError("a target model is required (--target)")
    if needs_draft and not opts["draft"]:
        raise ConfigError("this mode needs a draft model (--draft)")

    if opts["prompt_file"]:
        try:
            prompt = _parse_tokens(Path(opts["prompt_file"]).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read prompt file: {exc}") from None
    elif opts["prompt"] is not None:
        prompt = _parse_tokens(opts["prompt"])
    else:
        prompt = [0]

    config = EngineConfig(
        mode=opts["mode"],
        gamma=opts["gamma"],
        s_max=opts["smax"],
        max_new_tokens=opts["max_tokens"],
        temperature=opts["temperature"],
        draft_seed=opts["seed_draft"],
        verify_seed=opts["seed_verify"],
        budget_policy=opts["budget_policy"],
        probe_len=opts["probe_len"],
        calibration_trials=opts["trials"],
    ).validate()

    target = _load_model(opts["target"], "target")
    draft = _load_model(opts["draft"], "draft") if opts["draft"] else None
    try:
        profile = load_profile(opts["profile"])
    except ProfileError as exc:
        raise LoadError(str(exc)) from None
    if draft is not None and draft.vocab_size != target.vocab_size:
        raise ConfigError(f"target and draft vocabularies differ ({target.vocab_size} vs {draft.vocab_size})")
    bad = [t for t in prompt if not 0 <= t < target.vocab_size]
    if bad:
        raise ConfigError(f"prompt tokens {bad} outside vocabulary of size {target.vocab_size}")

    return RunManifest(
        config=config,
        target=target,
        draft=draft,
        profile=profile,
        prompt=prompt,
        clock_kind=opts["clock"],
        workers=opts["workers"],
        out=opts["out"],
        modes=modes,
        samples=opts["samples"],
        positions=opts["positions"],
    )


def _run(m: RunManifest, config: EngineConfig):
    return generate(m.target, m.draft, m.prompt, config, m.clock(), workers=m.workers)


class _Output:
    def __init__(self, path: Optional[str]):
        self.path = path
        self.lines: list[str] = []

    def emit(self, obj) -> None:
        self.lines.append(json.dumps(obj, sort_keys=True))

    def close(self) -> None:
        text = "\n".join(self.lines) + "\n"
        if self.path:
            Path(self.path).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)


def cmd_generate(m: RunManifest, out: _Output) -> int:
    out.emit(_run(m, m.config).as_json())
    return EXIT_OK


def cmd_bench(m: RunManifest, out: _Output) -> int:
    modes = m.modes or list(MODES)
    results = {mode: _run(m, _with_mode(m.config, mode)) for mode in modes}
    base = results.get("vanilla")
    for mode in modes:
        res = results[mode]
        out.emit(
            {
                "mode": mode,
                "gamma": res.gamma,
                "tokens": len(res.tokens),
                "tps": res.tps,
                "phi": res.tps / base.tps if base else None,
                "ttft_ms": res.ttft,
                "relative_ttft": res.ttft / base.ttft if base else None,
            }
        )
    return EXIT_OK


def cmd_calibrate(m: RunManifest, out: _Output) -> int:
    clock = m.clock()
    c, gamma, probe = calibrated_budget(
        m.target, m.draft, clock, m.config.probe_len, m.config.calibration_trials, m.config.gamma_cap
    )
    out.emit({"c": c, "gamma": gamma, "probe_len": probe, "trials": m.config.calibration_trials, "profile": m.profile.name})
    return EXIT_OK


def cmd_fidelity(m: RunManifest, out: _Output, explicit_mode: bool) -> int:
    if m.samples < MIN_FIDELITY_SAMPLES:
        raise ConfigError(f"--samples must be >= {MIN_FIDELITY_SAMPLES}")
    if m.modes:
        modes = m.modes
    elif explicit_mode:
        modes = [m.config.mode]
    else:
        modes = list(MODES)
    if any(mode != "vanilla" for mode in modes) and m.draft is None:
        raise ConfigError("sps and duo fidelity checks need a draft model (--draft)")
    reports = [
        fidelity_report(
            m.target,
            m.draft,
            m.prompt,
            _with_mode(m.config, mode),
            m.samples,
            positions=m.positions,
            threshold=TV_THRESHOLD,
            profile=m.profile,
            workers=m.workers,
        )
        for mode in modes
    ]
    passed = all(r["pass"] for r in reports)
    out.emit({"reports": reports, "pass": passed})
    return EXIT_OK if passed else EXIT_FIDELITY


def cmd_profile(m: RunManifest, out: _Output) -> int:
    res = _run(m, m.config)
    for i, rec in enumerate(res.iterations):
        out.emit({"iteration": i, **rec.as_json()})
    hist = Counter(rec.sequence_count for rec in res.iterations if rec.sequence_count > 0)
    n = len(res.iterations)
    out.emit(
        {
            "summary": True,
            "mode": res.mode,
            "gamma": res.gamma,
            "iterations": n,
            "tokens": len(res.tokens),
            "mean_tokens_processed": sum(r.tokens_processed for r in res.iterations) / n,
            "mean_iteration_ms": sum(r.elapsed for r in res.iterations) / n,
            "sequence_histogram": {str(k): hist[k] for k in sorted(hist)},
        }
    )
    return EXIT_OK


def _with_mode(config: EngineConfig, mode: str) -> EngineConfig:
    return replace(config, mode=mode)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file; flags override it")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--modes", help="comma-separated modes (bench, fidelity)")
    common.add_argument("--target", help="target model file")
    common.add_argument("--draft", help="draft model file")
    common.add_argument("--profile", help="device profile file or builtin name (matched, balanced, equal)")
    common.add_argument("--prompt", help="prompt token ids, e.g. '0,3,1'")
    common.add_argument("--prompt-file", dest="prompt_file", help="prompt token ids, one per line")
    common.add_argument("--gamma", type=int, help="draft budget")
    common.add_argument("--smax", type=int, help="max draft sequences per iteration")
    common.add_argument("--max-tokens", dest="max_tokens", type=int, help="tokens to generate (L)")
    common.add_argument("--temperature", type=float)
    common.add_argument("--seed-draft", dest="seed_draft", type=int)
    common.add_argument("--seed-verify", dest="seed_verify", type=int)
    common.add_argument("--budget-policy", dest="budget_policy", choices=("fixed", "calibrated"))
    common.add_argument("--probe-len", dest="probe_len", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--positions", type=int)
    common.add_argument("--clock", choices=("sim", "wall"))
    common.add_argument("--workers", choices=("thread", "inline"))
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="duodec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="generate tokens and write the result as JSON")
    sub.add_parser("bench", parents=[common], help="compare TPS, speedup and TTFT across modes")
    sub.add_parser("calibrate", parents=[common], help="measure the cost coefficient and pick the budget")
    sub.add_parser("fidelity", parents=[common], help="TV distance of each mode to the target law")
    sub.add_parser("profile", parents=[common], help="per-iteration timing breakdown")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")

    cmd = args.command
    try:
        if cmd == "calibrate":
            needs_draft = True
        elif cmd in ("bench", "fidelity"):
            needs_draft = False  # checked per mode once modes are known
        else:
            mode = args.mode or (read_config_file(args.config).get("mode") if args.config else None) or _DEFAULTS["mode"]
            needs_draft = mode != "vanilla"
        manifest = build_manifest(args, needs_draft)
        if cmd == "bench" and any(m != "vanilla" for m in (manifest.modes or MODES)) and manifest.draft is None:
            raise ConfigError("sps and duo need a draft model (--draft)")
        out = _Output(manifest.out)
        if cmd == "generate":
            status = cmd_generate(manifest, out)
        elif cmd == "bench":
            status = cmd_bench(manifest, out)
        elif cmd == "calibrate":
            status = cmd_calibrate(manifest, out)
        elif cmd == "fidelity":
            status = cmd_fidelity(manifest, out, explicit_mode=args.mode is not None)
        else:
            status = cmd_profile(manifest, out)
        out.close()
        return status
    except ConfigError as exc:
        print(f"duodec: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LoadError as exc:
        print(f"duodec: {exc}", file=sys.stderr)
        return EXIT_LOAD
    except DegenerateTiming as exc:
        print(f"duodec: calibration failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
