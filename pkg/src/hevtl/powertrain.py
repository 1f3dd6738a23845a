"""Backward-facing powertrain physics.

Wheel power request, internal-resistance battery, static engine fuel map and
the engine/battery power split. Functions accept scalars or numpy arrays so
the dynamic-programming oracle can sweep whole torque grids at once.

Sign convention: battery power is positive when discharging.
"""
from __future__ import annotations

import bisect
import dataclasses
import functools
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from hevtl.errors import CheckpointFormatError, DomainError, InfeasiblePowerError, LimitError

RPM_TO_RAD = 2.0 * math.pi / 60.0

V_MAX = 45.0
A_MAX = 5.0

ENGINE_MAP_VERSION = 1


@dataclass(frozen=True)
class EngineMap:
    """Gridded fuel-rate map plus the torque -> speed operating line.

    ``fuel`` has shape (len(torques), len(speeds)) in g/s. ``line_torque`` and
    ``line_speed`` are the knots of a piecewise-linear, monotone operating
    line through the low-BSFC region.
    """

    torques: np.ndarray
    speeds: np.ndarray
    fuel: np.ndarray
    line_torque: np.ndarray
    line_speed: np.ndarray
    version: int = ENGINE_MAP_VERSION

    def __post_init__(self):
        for name in ("torques", "speeds", "fuel", "line_torque", "line_speed"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.fuel.shape != (self.torques.size, self.speeds.size):
            raise CheckpointFormatError("engine map grid shape does not match its axes")
        if np.any(np.diff(self.torques) <= 0) or np.any(np.diff(self.speeds) <= 0):
            raise CheckpointFormatError("engine map axes must be strictly increasing")
        if np.any(np.diff(self.line_speed) < 0):
            raise CheckpointFormatError("operating line must be monotone")

    @property
    def torque_range(self) -> tuple[float, float]:
        return float(self.torques[0]), float(self.torques[-1])

    @property
    def speed_range(self) -> tuple[float, float]:
        return float(self.speeds[0]), float(self.speeds[-1])

    def line_speed_at(self, t_ice):
        """Engine speed (rpm) on the operating line for torque ``t_ice``."""
        return np.interp(t_ice, self.line_torque, self.line_speed)

    def optimal_line(self, power):
        """Invert the operating line: engine power (W) -> (torque Nm, speed rpm)."""
        tq = np.linspace(self.torques[0], self.torques[-1], 2001)
        pw = tq * self.line_speed_at(tq) * RPM_TO_RAD
        t = np.interp(power, pw, tq)
        return t, self.line_speed_at(t)


def load_engine_map(path: str | Path) -> EngineMap:
    """Read an engine map in the versioned CSV layout written by ``scripts/make_engine_map.py``."""
    text = Path(path).read_text(encoding="utf-8")
    return _parse_engine_map(text, str(path))


def _parse_engine_map(text: str, origin: str) -> EngineMap:
    version = None
    line_knots = None
    rows = []
    header = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("version:"):
                version = int(body.split(":", 1)[1])
            elif body.startswith("optimal_line:"):
                knots = body.split(":", 1)[1].split()
                line_knots = [tuple(float(x) for x in k.split(":")) for k in knots]
            continue
        cells = line.split(",")
        if header is None:
            header = [float(c) for c in cells[1:]]
        else:
            rows.append([float(c) for c in cells])
    if version != ENGINE_MAP_VERSION:
        raise CheckpointFormatError(f"{origin}: unsupported engine map version {version!r}")
    if header is None or not rows or line_knots is None:
        raise CheckpointFormatError(f"{origin}: incomplete engine map")
    grid = np.array(rows)
    lt, ls = zip(*line_knots)
    return EngineMap(
        torques=grid[:, 0], speeds=np.array(header), fuel=grid[:, 1:],
        line_torque=np.array(lt), line_speed=np.array(ls), version=version,
    )


@functools.lru_cache(maxsize=None)
def default_engine_map() -> EngineMap:
    text = resources.files("hevtl").joinpath("data/engine_map_v1.csv").read_text(encoding="utf-8")
    return _parse_engine_map(text, "engine_map_v1.csv")


@dataclass(frozen=True)
class ComponentLimits:
    speed_min: float
    speed_max: float
    torque_min: float
    torque_max: float

    def check(self, name, speed, torque):
        if not (self.speed_min <= speed <= self.speed_max):
            raise LimitError(f"{name} speed {speed} outside [{self.speed_min}, {self.speed_max}]")
        if not (self.torque_min <= torque <= self.torque_max):
            raise LimitError(f"{name} torque {torque} outside [{self.torque_min}, {self.torque_max}]")


def _default_limits():
    # Motor and generator values are not published; these are permissive boxes.
    return {
        "Mot": ComponentLimits(-10000.0, 10000.0, -400.0, 400.0),
        "Gen": ComponentLimits(-10000.0, 10000.0, -200.0, 200.0),
        "ICE": ComponentLimits(0.0, 4500.0, 0.0, 115.0),
    }


@dataclass(frozen=True)
class PowertrainParams:
    m_v: float = 1325.0
    f: float = 0.012
    g: float = 9.8
    rho: float = 1.225
    A_a: float = 2.16
    C_D: float = 0.26
    V_oc: float = 150.0
    r_0: float = 0.25
    Q_cap: float = 8.1  # Ah
    soc_ref: float = 0.65
    lambda_soc: float = 1000.0
    soc_min: float = 0.4
    soc_max: float = 0.9
    p_bat_min: float = -20000.0
    p_bat_max: float = 20000.0
    eta_drv: float = 0.95
    eta_regen: float = 0.90
    nominal_voltage: float = 200.0  # metadata only; V_oc drives the battery model
    engine: EngineMap = field(default_factory=default_engine_map, compare=False, repr=False)
    limits: dict = field(default_factory=_default_limits, compare=False, repr=False)

    def __post_init__(self):
        positive = ("m_v", "f", "g", "rho", "A_a", "C_D", "V_oc", "r_0", "Q_cap",
                    "soc_ref", "lambda_soc", "p_bat_max", "eta_drv", "eta_regen")
        for name in positive:
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive")
        if not self.p_bat_min < 0:
            raise DomainError("p_bat_min must be negative (charging)")
        if not (0.0 <= self.soc_min < self.soc_ref < self.soc_max <= 1.0):
            raise DomainError("need 0 <= soc_min < soc_ref < soc_max <= 1")
        if self.p_bat_max > self.p_bat_ceiling:
            raise DomainError(f"p_bat_max exceeds V_oc^2/(4 r_0) = {self.p_bat_ceiling}")
        if self.eta_drv > 1 or self.eta_regen > 1:
            raise DomainError("driveline efficiencies must not exceed 1")

    @property
    def p_bat_ceiling(self) -> float:
        return self.V_oc ** 2 / (4.0 * self.r_0)

    @property
    def q_coulombs(self) -> float:
        return self.Q_cap * 3600.0

    def replace(self, **changes) -> "PowertrainParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        """Scalar fields only (engine map and limits are referenced, not inlined)."""
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if f.name not in ("engine", "limits")}


def road_load_terms(params: PowertrainParams, v, a):
    """Rolling, aerodynamic and inertial power (W) at speed ``v`` and acceleration ``a``."""
    p_ro = params.m_v * params.g * params.f * v
    p_ae = 0.5 * params.rho * params.A_a * params.C_D * v * v * v
    p_ine = params.m_v * a * v
    return p_ro, p_ae, p_ine


def power_request(params: PowertrainParams, v, a):
    if np.any(np.asarray(v) < 0) or np.any(np.asarray(v) > V_MAX):
        raise DomainError(f"speed {v} outside [0, {V_MAX}] m/s")
    if np.any(np.abs(np.asarray(a)) > A_MAX):
        raise DomainError(f"acceleration {a} outside [-{A_MAX}, {A_MAX}] m/s^2")
    p_ro, p_ae, p_ine = road_load_terms(params, v, a)
    return p_ro + p_ae + p_ine


def _check_battery_power(params, p_bat):
    p = np.asarray(p_bat, dtype=float)
    if np.any(p > params.p_bat_ceiling):
        raise InfeasiblePowerError(
            f"battery power {p_bat} W exceeds internal-resistance ceiling {params.p_bat_ceiling} W")
    if np.any(p > params.p_bat_max) or np.any(p < params.p_bat_min):
        raise LimitError(f"battery power {p_bat} W outside [{params.p_bat_min}, {params.p_bat_max}]")
    return p


def battery_current(params: PowertrainParams, p_bat):
    """Current (A) drawn at terminal power ``p_bat`` under the internal-resistance model."""
    p = _check_battery_power(params, p_bat)
    disc = params.V_oc ** 2 - 4.0 * params.r_0 * p
    return (params.V_oc - np.sqrt(disc)) / (2.0 * params.r_0)


def terminal_voltage(params: PowertrainParams, current):
    return params.V_oc - current * params.r_0


def soc_derivative(params: PowertrainParams, p_bat):
    """d(SOC)/dt in 1/s; negative while discharging."""
    return -battery_current(params, p_bat) / params.q_coulombs


def fuel_rate(emap: EngineMap, t_ice, w_ice):
    """Bilinear fuel-rate lookup (g/s). Zero torque means the engine is stopped."""
    t = np.asarray(t_ice, dtype=float)
    w = np.asarray(w_ice, dtype=float)
    t_lo, t_hi = emap.torque_range
    w_lo, w_hi = emap.speed_range
    if np.any(t < t_lo) or np.any(t > t_hi):
        raise DomainError(f"engine torque {t_ice} outside [{t_lo}, {t_hi}] Nm")
    running = t > 0
    bad_speed = ((w != 0) & ((w < w_lo) | (w > w_hi))) | (running & (w == 0))
    if np.any(bad_speed):
        raise DomainError(f"engine speed {w_ice} outside {{0}} U [{w_lo}, {w_hi}] rpm")

    ws = np.where(running, w, w_lo)
    i = np.clip(np.searchsorted(emap.torques, t, side="right") - 1, 0, emap.torques.size - 2)
    j = np.clip(np.searchsorted(emap.speeds, ws, side="right") - 1, 0, emap.speeds.size - 2)
    x = (t - emap.torques[i]) / (emap.torques[i + 1] - emap.torques[i])
    y = (ws - emap.speeds[j]) / (emap.speeds[j + 1] - emap.speeds[j])
    F = emap.fuel
    val = (F[i, j] * (1 - x) * (1 - y) + F[i + 1, j] * x * (1 - y)
           + F[i, j + 1] * (1 - x) * y + F[i + 1, j + 1] * x * y)
    out = np.where(running, val, 0.0)
    return float(out) if out.ndim == 0 else out


def engine_operating_point(emap: EngineMap, t_ice):
    """Speed (rpm), shaft power (W) and fuel rate (g/s) for a torque command.

    The engine is speed-decoupled from the wheels and always settles on the
    operating line; zero torque switches it off.
    """
    t = np.asarray(t_ice, dtype=float)
    t_lo, t_hi = emap.torque_range
    if np.any(t < t_lo) or np.any(t > t_hi):
        raise DomainError(f"engine torque {t_ice} outside [{t_lo}, {t_hi}] Nm")
    w = np.where(t > 0, emap.line_speed_at(t), 0.0)
    p = t * w * RPM_TO_RAD
    fuel = fuel_rate(emap, t, w)
    if t.ndim == 0:
        return float(w), float(p), float(fuel)
    return w, p, fuel


def split_power(params: PowertrainParams, p_req, t_ice):
    """Divide the wheel request between engine and battery.

    Returns ``(p_ice, p_bat, clamped)``. A deficit is drawn from the battery
    through the driveline efficiency; a surplus (regeneration or engine
    charging) reaches the battery at the regeneration efficiency. Battery
    power beyond its limits is clamped and flagged; excess braking power
    goes to the friction brakes.
    """
    _, p_ice, _ = engine_operating_point(params.engine, t_ice)
    net = np.asarray(p_req, dtype=float) - p_ice
    p_bat = np.where(net >= 0, net / params.eta_drv, net * params.eta_regen)
    clipped = np.clip(p_bat, params.p_bat_min, params.p_bat_max)
    clamped = clipped != p_bat
    if clipped.ndim == 0:
        return float(p_ice), float(clipped), bool(clamped)
    return p_ice, clipped, clamped


def delivered_battery_power(params: PowertrainParams, p_bat):
    """Power the battery contributes at the wheels, after driveline losses."""
    p = np.asarray(p_bat, dtype=float)
    out = np.where(p >= 0, p * params.eta_drv, p / params.eta_regen)
    return float(out) if out.ndim == 0 else out


def check_component_limits(params: PowertrainParams, component: str, speed, torque):
    try:
        lim = params.limits[component]
    except KeyError:
        raise DomainError(f"unknown component {component!r}") from None
    lim.check(component, speed, torque)


def step_power_flow(params: PowertrainParams, v: float, a: float, t_ice: float):
    """Scalar fast path used inside the environment loop.

    Same arithmetic as ``power_request`` / ``split_power`` /
    ``engine_operating_point`` / ``soc_derivative`` but on plain floats, with
    the caller responsible for range checks. Returns
    ``(p_req, p_ice, p_bat, clamped, fuel_gps, dsoc_dt)``.
    """
    p_req = (params.m_v * params.g * params.f * v
             + 0.5 * params.rho * params.A_a * params.C_D * v * v * v
             + params.m_v * a * v)
    emap = params.engine
    if t_ice > 0.0:
        w = _line_scalar(emap, t_ice)
        p_ice = t_ice * w * RPM_TO_RAD
        fuel = _fuel_scalar(emap, t_ice, w)
    else:
        p_ice = 0.0
        fuel = 0.0
    net = p_req - p_ice
    p_bat = net / params.eta_drv if net >= 0 else net * params.eta_regen
    clamped = False
    if p_bat > params.p_bat_max:
        p_bat, clamped = params.p_bat_max, True
    elif p_bat < params.p_bat_min:
        p_bat, clamped = params.p_bat_min, True
    disc = params.V_oc ** 2 - 4.0 * params.r_0 * p_bat
    current = (params.V_oc - math.sqrt(disc)) / (2.0 * params.r_0)
    return p_req, p_ice, p_bat, clamped, fuel, -current / params.q_coulombs


def _fuel_scalar(emap, t, w):
    tq, sp, F = _grid_lists(emap)
    i = min(max(bisect.bisect_right(tq, t) - 1, 0), len(tq) - 2)
    j = min(max(bisect.bisect_right(sp, w) - 1, 0), len(sp) - 2)
    x = (t - tq[i]) / (tq[i + 1] - tq[i])
    y = (w - sp[j]) / (sp[j + 1] - sp[j])
    return (F[i][j] * (1 - x) * (1 - y) + F[i + 1][j] * x * (1 - y)
            + F[i][j + 1] * (1 - x) * y + F[i + 1][j + 1] * x * y)


def _line_scalar(emap, t):
    lt, ls = _line_lists(emap)
    k = min(max(bisect.bisect_right(lt, t) - 1, 0), len(lt) - 2)
    return ls[k] + (t - lt[k]) * (ls[k + 1] - ls[k]) / (lt[k + 1] - lt[k])


_GRID_CACHE: dict = {}


def _line_lists(emap):
    key = ("line", id(emap))
    hit = _GRID_CACHE.get(key)
    if hit is None or hit[0] is not emap:
        hit = (emap, emap.line_torque.tolist(), emap.line_speed.tolist())
        _GRID_CACHE[key] = hit
    return hit[1:]


def _grid_lists(emap):
    key = id(emap)
    hit = _GRID_CACHE.get(key)
    if hit is None or hit[0] is not emap:
        hit = (emap, emap.torques.tolist(), emap.speeds.tolist(), emap.fuel.tolist())
        _GRID_CACHE[key] = hit
    return hit[1:]
