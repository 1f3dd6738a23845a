"""Driving cycles: loading, validation, synthesis and source/target partitions."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hevtl.errors import ConfigError, CycleParseError, CycleValidationError
from hevtl.powertrain import A_MAX, V_MAX

PROFILES = ("urban", "suburban", "highway")


@dataclass(frozen=True)
class DrivingCycle:
    id: str
    dt: float
    speed: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        speed = np.array(self.speed, dtype=float)
        accel = np.array(self.accel, dtype=float)
        if not self.dt > 0:
            raise CycleValidationError(0, f"dt must be positive, got {self.dt}")
        if speed.ndim != 1 or speed.size < 2:
            raise CycleValidationError(0, "a cycle needs at least two samples")
        if accel.shape != speed.shape:
            raise CycleValidationError(0, "speed and accel lengths differ")
        _check_bounds(speed, accel)
        speed.setflags(write=False)
        accel.setflags(write=False)
        object.__setattr__(self, "speed", speed)
        object.__setattr__(self, "accel", accel)

    def __len__(self):
        return self.speed.size

    @property
    def duration(self) -> float:
        return self.speed.size * self.dt


def _check_bounds(speed, accel):
    for name, arr, lo, hi in (("speed", speed, 0.0, V_MAX), ("accel", accel, -A_MAX, A_MAX)):
        bad = np.flatnonzero(~np.isfinite(arr) | (arr < lo) | (arr > hi))
        if bad.size:
            i = int(bad[0])
            raise CycleValidationError(i, f"{name} {arr[i]} outside [{lo}, {hi}]")


def derive_accel(speed, dt):
    """Forward difference; the final sample gets zero acceleration."""
    speed = np.asarray(speed, dtype=float)
    accel = np.zeros_like(speed)
    accel[:-1] = np.diff(speed) / dt
    return accel


def from_speed(cycle_id: str, speed, dt: float = 1.0) -> DrivingCycle:
    speed = np.asarray(speed, dtype=float)
    return DrivingCycle(cycle_id, dt, speed, derive_accel(speed, dt))


def load_cycle(path, dt: float = 1.0, cycle_id: str | None = None) -> DrivingCycle:
    """Read a speed trace.

    Accepts either the ``t,speed_mps[,accel_mps2]`` CSV layout or a bare file
    with one speed value per line. Acceleration is derived when the file does
    not carry it.
    """
    path = Path(path)
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    speeds, accels = [], []
    has_accel = None
    col = 0
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            cells = [c.strip() for c in row]
            if lineno == 1 and not _is_number(cells[0]):
                header = [c.lower() for c in cells]
                if "speed_mps" not in header:
                    raise CycleParseError(path, lineno, "header lacks a speed_mps column")
                col = header.index("speed_mps")
                has_accel = "accel_mps2" in header
                acol = header.index("accel_mps2") if has_accel else None
                continue
            try:
                speeds.append(float(cells[col]))
                if has_accel:
                    accels.append(float(cells[acol]))
            except (ValueError, IndexError):
                raise CycleParseError(path, lineno, f"malformed record {','.join(row)!r}") from None
    if len(speeds) < 2:
        raise CycleParseError(path, 0, "need at least two speed records")
    speed = np.array(speeds)
    if has_accel:
        accel = np.array(accels)
    else:
        bad = np.flatnonzero((speed < 0) | (speed > V_MAX) | ~np.isfinite(speed))
        if bad.size:
            i = int(bad[0])
            raise CycleValidationError(i, f"speed {speed[i]} outside [0, {V_MAX}]")
        accel = derive_accel(speed, dt)
    return DrivingCycle(cycle_id or path.stem, dt, speed, accel)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def write_cycle(cycle: DrivingCycle, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "speed_mps", "accel_mps2"])
        for i, (v, a) in enumerate(zip(cycle.speed, cycle.accel)):
            w.writerow([repr(i * cycle.dt), repr(float(v)), repr(float(a))])


@dataclass(frozen=True)
class _Profile:
    targets: tuple  # cruise-speed range, m/s
    p_stop: float  # chance that a new target is a full stop
    idle_s: tuple  # idle-dwell range, s
    accel: tuple  # acceleration magnitude range, m/s^2
    p_retarget: float  # per-second chance of leaving cruise
    noise: float  # cruise speed jitter, m/s^2


_PROFILES = {
    "urban": _Profile((4.0, 14.0), 0.45, (5, 25), (0.8, 2.0), 0.06, 0.25),
    "suburban": _Profile((10.0, 22.0), 0.2, (4, 15), (0.6, 1.6), 0.04, 0.2),
    "highway": _Profile((22.0, 33.0), 0.0, (0, 0), (0.4, 1.2), 0.03, 0.15),
}


def synthesize_cycle(seed: int, duration: float = 300.0, profile: str = "urban",
                     dt: float = 1.0, cycle_id: str | None = None) -> DrivingCycle:
    """Markov-chain speed walk over idle / transient / cruise regimes."""
    if duration < 60:
        raise ConfigError(f"duration must be at least 60 s, got {duration}")
    if profile not in _PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {PROFILES}")
    prof = _PROFILES[profile]
    rng = np.random.default_rng([seed, PROFILES.index(profile)])
    n = int(round(duration / dt))

    def new_target():
        if rng.random() < prof.p_stop:
            return 0.0
        return rng.uniform(*prof.targets)

    speed = np.zeros(n)
    v = 0.0
    regime = "idle" if prof.p_stop > 0 else "transient"
    idle_left = rng.integers(prof.idle_s[0], prof.idle_s[1] + 1) if regime == "idle" else 0
    target = rng.uniform(*prof.targets)
    rate = rng.uniform(*prof.accel)
    for k in range(n):
        speed[k] = v
        if regime == "idle":
            a = 0.0
            idle_left -= 1
            if idle_left <= 0:
                regime, target, rate = "transient", rng.uniform(*prof.targets), rng.uniform(*prof.accel)
        elif regime == "transient":
            gap = target - v
            a = np.sign(gap) * min(rate, abs(gap) / dt)
            if abs(gap) <= rate * dt:
                if target == 0.0:
                    regime = "idle"
                    idle_left = rng.integers(prof.idle_s[0], prof.idle_s[1] + 1)
                else:
                    regime = "cruise"
        else:
            a = rng.normal(0.0, prof.noise)
            if rng.random() < prof.p_retarget:
                regime, target, rate = "transient", new_target(), rng.uniform(*prof.accel)
        a = float(np.clip(a, -A_MAX, A_MAX))
        v = float(np.clip(v + a * dt, 0.0, V_MAX))
    return from_speed(cycle_id or f"{profile}-{seed}", speed, dt)


def synthetic_suite(n: int, seed: int = 0, duration: float = 300.0,
                    profiles=PROFILES) -> list[DrivingCycle]:
    """``n`` cycles cycling through ``profiles``, ids ``cycle-01`` ..."""
    return [
        synthesize_cycle(seed * 1000 + i, duration, profiles[i % len(profiles)],
                         cycle_id=f"cycle-{i + 1:02d}")
        for i in range(n)
    ]


@dataclass(frozen=True)
class CyclePartition:
    source: tuple
    target: tuple
    includes_target_in_source: bool = field(init=False)

    def __post_init__(self):
        if not self.source or not self.target:
            raise ConfigError("source and target sets must both be non-empty")
        object.__setattr__(self, "source", tuple(self.source))
        object.__setattr__(self, "target", tuple(self.target))
        object.__setattr__(self, "includes_target_in_source",
                           all(t in self.source for t in self.target))


def make_partition(cycles, n_source: int, target_ids, include_targets: bool) -> CyclePartition:
    """Pick ``n_source`` source cycles in input order, with or without the targets."""
    ids = [c.id for c in cycles]
    target_ids = list(target_ids)
    missing = [t for t in target_ids if t not in ids]
    if missing:
        raise ConfigError(f"target ids not among cycles: {missing}")
    if n_source < 1 or n_source > len(ids):
        raise ConfigError(f"n_source={n_source} must lie in [1, {len(ids)}]")
    others = [i for i in ids if i not in target_ids]
    if include_targets:
        if n_source < len(target_ids):
            raise ConfigError(f"n_source={n_source} cannot hold {len(target_ids)} targets")
        source = target_ids + others[: n_source - len(target_ids)]
    else:
        if n_source > len(others):
            raise ConfigError(f"only {len(others)} non-target cycles for n_source={n_source}")
        source = others[:n_source]
    return CyclePartition(tuple(source), tuple(target_ids))
