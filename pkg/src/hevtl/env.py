"""Episodic energy-management MDP over one driving cycle.

State is (speed, acceleration, SOC); the action is engine torque; the reward
is the negated stage cost (fuel grams plus the below-reference SOC penalty).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hevtl import powertrain as pt
from hevtl.cycles import DrivingCycle
from hevtl.errors import DomainError

T_MAX = 115.0

OBS_SCALE = np.array([1.0 / pt.V_MAX, 1.0 / pt.A_MAX, 1.0 / 0.35])
OBS_SHIFT = np.array([0.0, 0.0, 0.65])


@dataclass(frozen=True)
class Observation:
    v: float
    a: float
    soc: float

    def normalized(self) -> np.ndarray:
        return normalize(np.array([self.v, self.a, self.soc]))


def normalize(raw):
    """Fixed affine scaling shared by every cycle, so transferred networks see the same inputs."""
    return (np.asarray(raw, dtype=float) - OBS_SHIFT) * OBS_SCALE


@dataclass
class EnvState:
    t: int
    soc: float
    cycle: DrivingCycle


@dataclass(frozen=True)
class StepResult:
    obs: Observation
    reward: float
    done: bool
    info: dict


def soc_penalty(params: pt.PowertrainParams, soc, dt=1.0):
    """Quadratic charge-sustaining penalty; zero at or above the reference."""
    delta = np.minimum(np.asarray(soc, dtype=float) - params.soc_ref, 0.0)
    out = params.lambda_soc * delta * delta * dt
    return float(out) if out.ndim == 0 else out


class HevEnv:
    def __init__(self, params: pt.PowertrainParams | None = None):
        self.params = params or pt.PowertrainParams()
        self.state: EnvState | None = None
        self.clamp_events = 0

    def reset(self, cycle: DrivingCycle, soc0: float | None = None) -> Observation:
        p = self.params
        soc0 = p.soc_ref if soc0 is None else soc0
        if not (p.soc_min <= soc0 <= p.soc_max):
            raise DomainError(f"initial SOC {soc0} outside [{p.soc_min}, {p.soc_max}]")
        self.state = EnvState(0, float(soc0), cycle)
        self.clamp_events = 0
        self._speed = cycle.speed.tolist()
        self._accel = cycle.accel.tolist()
        return self._observe(0)

    def _observe(self, t):
        return Observation(self._speed[t], self._accel[t], self.state.soc)

    @property
    def done(self) -> bool:
        return self.state.t >= len(self.state.cycle)

    def step(self, t_ice: float) -> StepResult:
        if self.state is None:
            raise DomainError("step() before reset()")
        if self.done:
            raise DomainError("episode already finished")
        if not (0.0 <= t_ice <= T_MAX) or math.isnan(t_ice):
            raise DomainError(f"engine torque {t_ice} outside [0, {T_MAX}] Nm")
        st, p = self.state, self.params
        dt = st.cycle.dt
        v, a = self._speed[st.t], self._accel[st.t]
        p_req, p_ice, p_bat, clamped, fuel_rate, dsoc = pt.step_power_flow(p, v, a, float(t_ice))
        soc_raw = st.soc + dsoc * dt
        soc = min(max(soc_raw, 0.0), 1.0)
        if soc != soc_raw:
            self.clamp_events += 1
        fuel_g = fuel_rate * dt
        delta = min(soc - p.soc_ref, 0.0)
        penalty = p.lambda_soc * delta * delta * dt
        st.soc = soc
        st.t += 1
        done = self.done
        obs = self._observe(len(st.cycle) - 1 if done else st.t)
        info = {"fuel_g": fuel_g, "soc_penalty": penalty, "clamped": clamped or soc != soc_raw,
                "p_req": p_req, "p_ice": p_ice, "p_bat": p_bat, "v": v, "a": a}
        return StepResult(obs, -(fuel_g + penalty), done, info)


TRAJECTORY_COLUMNS = ("t", "v", "a", "soc", "t_ice", "p_req", "p_ice", "p_bat", "fuel_g", "reward")


@dataclass
class Trajectory:
    """Per-step record of an episode. ``soc`` is the value after the step."""

    columns: dict

    def __len__(self):
        return len(self.columns["t"])

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.columns["reward"]))

    @property
    def fuel_g(self) -> float:
        return float(np.sum(self.columns["fuel_g"]))

    @property
    def cost(self) -> float:
        return -self.total_reward

    def discounted_return(self, gamma: float) -> float:
        r = np.asarray(self.columns["reward"])
        return float(np.sum(r * gamma ** np.arange(r.size)))

    def to_csv(self, path) -> None:
        write_table(path, TRAJECTORY_COLUMNS, [self.columns[c] for c in TRAJECTORY_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        return cls(read_table(path))


def write_table(path, header, columns):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def read_table(path) -> dict:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {}
    for k, name in enumerate(header):
        vals = [r[k] for r in body]
        try:
            cols[name] = np.array([float(v) if v != "" else np.nan for v in vals])
        except ValueError:
            cols[name] = vals
    return cols


def rollout(policy, cycle: DrivingCycle, soc0: float | None = None, seed: int = 0,
            params: pt.PowertrainParams | None = None, gamma: float = 1.0,
            start: int = 0):
    """Run ``policy(obs, rng) -> torque`` over the cycle.

    Returns ``(trajectory, total_reward, discounted_return)``; the total is
    undiscounted, the discounted return uses ``gamma``.
    """
    env = HevEnv(params)
    obs = env.reset(cycle, soc0)
    env.state.t = start
    if start < len(cycle):
        obs = env._observe(start)
    rng = np.random.default_rng(seed)
    cols = {c: [] for c in TRAJECTORY_COLUMNS}
    while not env.done:
        t = env.state.t
        t_ice = float(policy(obs, rng))
        res = env.step(t_ice)
        i = res.info
        for name, val in (("t", t), ("v", i["v"]), ("a", i["a"]), ("soc", env.state.soc),
                          ("t_ice", t_ice), ("p_req", i["p_req"]), ("p_ice", i["p_ice"]),
                          ("p_bat", i["p_bat"]), ("fuel_g", i["fuel_g"]), ("reward", res.reward)):
            cols[name].append(val)
        obs = res.obs
    traj = Trajectory({k: np.asarray(v) for k, v in cols.items()})
    return traj, traj.total_reward, traj.discounted_return(gamma)
