"""Virtual and wall clocks with a simple affine device-latency model (all times in ms)."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceProfile:
    """Per-forward latencies for the draft (CPU-side) and target (GPU-side) roles.

    A target pass over ``k`` positions costs ``target_base + target_slope * k``.
    ``verify_ms`` defaults to 1% of a single-position target pass.
    """

    draft_per_token: float
    target_base: float
    target_slope: float
    comm_latency: float
    verify_ms: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        if self.draft_per_token <= 0 or self.comm_latency <= 0:
            raise ProfileError("draft_per_token and comm_latency must be > 0")
        if self.target_slope < 0 or self.target_pass(1) <= 0:
            raise ProfileError("target pass cost must be positive and non-decreasing in width")
        if self.verify_ms is not None and self.verify_ms <= 0:
            raise ProfileError("verify_ms must be > 0")

    def target_pass(self, width: int) -> float:
        return self.target_base + self.target_slope * width

    @property
    def verify_cost(self) -> float:
        return self.verify_ms if self.verify_ms is not None else 0.01 * self.target_pass(1)


# matched: drafting 8 tokens (8 * 3 ms) costs the same as verifying 8 (20 + 8 * 0.5 ms)
BUILTIN_PROFILES = {
    "matched": DeviceProfile(3.0, 20.0, 0.5, 0.2, name="matched"),
    "balanced": DeviceProfile(1.0, 24.0, 0.0, 0.2, name="balanced"),
    "equal": DeviceProfile(1.0, 1.0, 0.0, 0.01, name="equal"),
}
DEFAULT_PROFILE = "matched"

_PROFILE_KEYS = {
    "draft_per_token_ms": "draft_per_token",
    "target_base_ms": "target_base",
    "target_slope_ms": "target_slope",
    "comm_ms": "comm_latency",
    "verify_ms": "verify_ms",
}


def parse_profile(text: str, source: str = "<string>") -> DeviceProfile:
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in _PROFILE_KEYS:
            raise ProfileError(f"{source}:{lineno}: expected '<key> <ms>' with key in {sorted(_PROFILE_KEYS)}")
        try:
            values[_PROFILE_KEYS[parts[0]]] = float(parts[1])
        except ValueError:
            raise ProfileError(f"{source}:{lineno}: bad number {parts[1]!r}") from None
    missing = {"draft_per_token", "target_base", "target_slope", "comm_latency"} - set(values)
    if missing:
        raise ProfileError(f"{source}: missing keys {sorted(missing)}")
    return DeviceProfile(**values, name=Path(source).stem)


def load_profile(name_or_path: Union[str, Path]) -> DeviceProfile:
    """Builtin profile name, or path to a profile file."""
    if isinstance(name_or_path, str) and name_or_path in BUILTIN_PROFILES:
        return BUILTIN_PROFILES[name_or_path]
    path = Path(name_or_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ProfileError(f"cannot read profile {name_or_path}: {exc}") from None
    return parse_profile(text, source=str(path))


def dump_profile(profile: DeviceProfile) -> str:
    lines = [
        f"draft_per_token_ms {profile.draft_per_token!r}",
        f"target_base_ms {profile.target_base!r}",
        f"target_slope_ms {profile.target_slope!r}",
        f"comm_ms {profile.comm_latency!r}",
    ]
    if profile.verify_ms is not None:
        lines.append(f"verify_ms {profile.verify_ms!r}")
    return "\n".join(lines) + "\n"


@dataclass(slots=True)
class Draft:
    tokens: int
    elapsed_ms: Optional[float] = None

    def cost(self, profile: DeviceProfile) -> float:
        return profile.draft_per_token * self.tokens


@dataclass(slots=True)
class TargetPass:
    width: int
    elapsed_ms: Optional[float] = None

    def cost(self, profile: DeviceProfile) -> float:
        return profile.target_pass(self.width)


@dataclass(slots=True)
class Comm:
    elapsed_ms: Optional[float] = None

    def cost(self, profile: DeviceProfile) -> float:
        return profile.comm_latency


@dataclass(slots=True)
class Verify:
    elapsed_ms: Optional[float] = None

    def cost(self, profile: DeviceProfile) -> float:
        return profile.verify_cost


Event = Union[Draft, TargetPass, Comm, Verify]


def event_duration(profile: DeviceProfile, event: Event) -> float:
    return event.cost(profile)


class VirtualClock:
    """Deterministic clock: time moves only through profile-priced events."""

    resolution_ms = 1e-9
    simulated = True

    def __init__(self, profile: DeviceProfile):
        self.profile = profile
        self._now = 0.0

    def now(self) -> float:
        return self._now

    def duration(self, event: Event) -> float:
        return event.cost(self.profile)

    def advance(self, event: Event) -> float:
        self._now += event.cost(self.profile)
        return self._now

    def parallel_advance(self, draft_event: Event, target_event: Event) -> float:
        self._now += max(draft_event.cost(self.profile), target_event.cost(self.profile))
        return self._now

    def advance_ms(self, ms: float) -> float:
        """Advance by an already-priced duration."""
        self._now += ms
        return self._now

    def measure(self, event: Event, fn):
        """Run ``fn`` and price it as ``event``; returns (result, duration)."""
        return fn(), self.duration(event)


class WallClock:
    """Real elapsed time; events report their own measured ``elapsed_ms``."""

    resolution_ms = time.get_clock_info("perf_counter").resolution * 1e3
    simulated = False

    def __init__(self):
        self._start = time.perf_counter()

    def now(self) -> float:
        return (time.perf_counter() - self._start) * 1e3

    def duration(self, event: Event) -> float:
        return event.elapsed_ms or 0.0

    def advance(self, event: Event) -> float:
        return self.now()

    def parallel_advance(self, draft_event: Event, target_event: Event) -> float:
        return self.now()

    def advance_ms(self, ms: float) -> float:
        return self.now()

    def measure(self, event: Event, fn):
        t0 = time.perf_counter()
        out = fn()
        return out, (time.perf_counter() - t0) * 1e3
