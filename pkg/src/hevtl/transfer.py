"""Expert/student transfer and the experiment harness built on it.

An expert is trained from a cold start on a set of source cycles and saved
with its provenance. A student loads every weight and bias of the expert,
starts a fresh optimizer and trains on the target cycles with the same
hyperparameters. The three experiments compare source-set sizes, source
sets with and without the targets, and warm against cold starts.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hevtl import net, ppo
from hevtl import powertrain as pt
from hevtl.cycles import make_partition
from hevtl.env import write_table
from hevtl.errors import ConfigError, TransferIncompatibilityError

MODES = ("cold", "warm")
# Budget knobs may differ between expert and student; everything else must match.
BUDGET_FIELDS = ("n_iterations",)


def transfer_digest(hyper: ppo.Hyperparams) -> str:
    d = {k: v for k, v in hyper.to_dict().items() if k not in BUDGET_FIELDS}
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class TransferExperiment:
    partition: object
    hyper: ppo.Hyperparams
    seeds: tuple
    mode: str = "warm"
    expert_checkpoint: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.mode == "warm" and not self.expert_checkpoint:
            raise ConfigError("warm mode requires an expert checkpoint")


@dataclass
class RunRecord:
    """One (seed, mode) training run on the targets."""

    seed: int
    mode: str
    label: str
    episode_rewards: np.ndarray
    value_loss: np.ndarray  # per episode, from the update that consumed it
    loss: np.ndarray
    final_rewards: dict  # target id -> deterministic evaluation reward
    wall_s: float = 0.0

    @property
    def initial_reward(self) -> float:
        return float(np.mean(self.episode_rewards[:5]))

    @property
    def final_reward(self) -> float:
        return float(np.mean(list(self.final_rewards.values())))

    def episodes_to(self, fraction: float = 0.9) -> int:
        """First episode whose normalized cumulative reward reaches ``fraction``."""
        curve = normalize_curve(np.cumsum(self.episode_rewards) / np.arange(1, len(self.episode_rewards) + 1))
        hit = np.nonzero(curve >= fraction)[0]
        return int(hit[0]) + 1 if hit.size else -1


@dataclass
class ExperimentReport:
    name: str
    runs: list = field(default_factory=list)

    def pairs(self):
        return sorted({(r.seed, r.mode, r.label) for r in self.runs})

    def find(self, seed, mode, label=""):
        for r in self.runs:
            if (r.seed, r.mode, r.label) == (seed, mode, label):
                return r
        raise KeyError((seed, mode, label))

    def summary_rows(self):
        """One row per (label, seed, mode, target)."""
        rows = []
        for r in self.runs:
            for tid, val in sorted(r.final_rewards.items()):
                rows.append({"label": r.label, "seed": r.seed, "mode": r.mode, "target": tid,
                             "final_reward": val, "initial_reward": r.initial_reward,
                             "first_value_loss": float(r.value_loss[0]) if r.value_loss.size else float("nan"),
                             "episodes_to_90pct": r.episodes_to(0.9)})
        return rows

    def curve_rows(self):
        rows = []
        for r in self.runs:
            avg = np.cumsum(r.episode_rewards) / np.arange(1, len(r.episode_rewards) + 1)
            norm = normalize_curve(avg)
            for i in range(len(r.episode_rewards)):
                rows.append({"label": r.label, "seed": r.seed, "mode": r.mode, "episode": i + 1,
                             "total_reward": r.episode_rewards[i], "cumulative_mean": avg[i],
                             "normalized": norm[i], "loss": r.loss[i], "value_loss": r.value_loss[i]})
        return rows

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, rows in (("summary", self.summary_rows()), ("curves", self.curve_rows())):
            if not rows:
                continue
            cols = list(rows[0])
            path = out / f"{self.name}_{name}.csv"
            write_table(path, cols, [[row[c] for row in rows] for c in cols])
            paths.append(path)
        return paths


def normalize_curve(values) -> np.ndarray:
    """Min-max scaling that sends the best (largest) value to 1 and the worst to 0."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.ones_like(v)
    return (v - lo) / (hi - lo)


def train_expert(source_cycles, hyper: ppo.Hyperparams, seed: int, path=None,
                 layout: net.NetLayout | None = None, powertrain: pt.PowertrainParams | None = None,
                 episode_budget: int | None = None):
    """Cold-start training on the source set; returns (params, log, metadata)."""
    if not source_cycles:
        raise ConfigError("expert needs at least one source cycle")
    layout = layout or net.NetLayout()
    init = net.init_params(layout, seed=seed)
    params, log = ppo.train(hyper, source_cycles, init, seed=seed, powertrain=powertrain,
                            episode_budget=episode_budget)
    meta = {
        "role": "expert",
        "source_ids": [c.id for c in source_cycles],
        "seed": int(seed),
        "hyper": hyper.to_dict(),
        "hyper_digest": transfer_digest(hyper),
        "episodes": len(log.episodes),
        "iterations": len(log.updates),
    }
    if path is not None:
        net.save_params(params, path, meta)
    return params, log, meta


def load_expert(checkpoint, layout: net.NetLayout | None = None, hyper: ppo.Hyperparams | None = None,
                allow_hyper_change: bool = False):
    params, meta = net.read_checkpoint(checkpoint)
    layout = layout or net.NetLayout()
    if params.layout != layout:
        raise TransferIncompatibilityError(
            f"checkpoint layout {params.layout.to_dict()} does not match {layout.to_dict()}")
    if hyper is not None and not allow_hyper_change:
        stored = meta.get("hyper_digest")
        if stored is not None and stored != transfer_digest(hyper):
            raise TransferIncompatibilityError(
                "hyperparameters differ from the expert's; pass allow_hyper_change to override")
    return params, meta


def warm_start(checkpoint, target_cycles, hyper: ppo.Hyperparams, seed: int,
               layout: net.NetLayout | None = None, allow_hyper_change: bool = False,
               powertrain: pt.PowertrainParams | None = None, episode_budget: int | None = None):
    """Student training initialized from the expert. The optimizer starts fresh."""
    init, _ = load_expert(checkpoint, layout, hyper, allow_hyper_change)
    return ppo.train(hyper, target_cycles, init, seed=seed, powertrain=powertrain,
                     episode_budget=episode_budget)


def _record(params, log, seed, mode, label, targets, powertrain, wall_s=0.0):
    rows = list(log.rows())
    finals = {c.id: ppo.evaluate(params, c, powertrain)[1] for c in targets}
    return RunRecord(seed, mode, label,
                     np.array([r["total_reward"] for r in rows]),
                     np.array([r["value_loss"] for r in rows]),
                     np.array([r["loss"] for r in rows]),
                     finals, wall_s)


def run_tl_vs_no_tl(targets, checkpoint, hyper: ppo.Hyperparams, seeds, episodes: int = 100,
                    layout: net.NetLayout | None = None, powertrain: pt.PowertrainParams | None = None,
                    allow_hyper_change: bool = False, label: str = "") -> ExperimentReport:
    """Paired cold and warm runs on the targets, same env seed and episode budget."""
    layout = layout or net.NetLayout()
    expert, _ = load_expert(checkpoint, layout, hyper, allow_hyper_change)
    report = ExperimentReport("tl")
    for seed in seeds:
        for mode in MODES:
            init = expert if mode == "warm" else net.init_params(layout, seed=seed)
            t0 = time.perf_counter()
            params, log = ppo.train(hyper, targets, init, seed=seed, powertrain=powertrain,
                                    episode_budget=episodes)
            report.runs.append(_record(params, log, seed, mode, label, targets, powertrain,
                                       time.perf_counter() - t0))
    return report


def _select(cycles, ids):
    by_id = {c.id: c for c in cycles}
    return [by_id[i] for i in ids]


def _expert_then_student(sources, targets, hyper, seed, layout, powertrain, expert_episodes,
                         student_episodes, label, report, workdir):
    ck = Path(workdir) / f"expert_{label}_seed{seed}.ckpt"
    train_expert(sources, hyper, seed, ck, layout, powertrain, expert_episodes)
    params, log = warm_start(ck, targets, hyper, seed, layout, powertrain=powertrain,
                             episode_budget=student_episodes)
    report.runs.append(_record(params, log, seed, "warm", label, targets, powertrain))


def run_ablation_source_count(all_cycles, counts, target_ids, hyper: ppo.Hyperparams, seeds, workdir,
                              episodes_per_source: int = 20, student_episodes: int = 100,
                              layout: net.NetLayout | None = None,
                              powertrain: pt.PowertrainParams | None = None) -> ExperimentReport:
    """Experts on growing source sets (targets always included), each warm-started on the targets.

    The expert budget scales with the source count so every source cycle
    gets the same number of episodes.
    """
    counts = [int(c) for c in counts]
    if max(counts) > len(all_cycles):
        raise ConfigError(f"source count {max(counts)} exceeds the {len(all_cycles)} available cycles")
    layout = layout or net.NetLayout()
    report = ExperimentReport("source_count")
    for count in counts:
        part = make_partition(all_cycles, count, target_ids, include_targets=True)
        for seed in seeds:
            _expert_then_student(_select(all_cycles, part.source), _select(all_cycles, part.target),
                                 hyper, seed, layout, powertrain,
                                 episodes_per_source * count, student_episodes, str(count), report, workdir)
    return report


def run_ablation_target_inclusion(all_cycles, n_source: int, target_ids, hyper: ppo.Hyperparams, seeds,
                                  workdir, episodes_per_source: int = 20, student_episodes: int = 100,
                                  layout: net.NetLayout | None = None,
                                  powertrain: pt.PowertrainParams | None = None) -> ExperimentReport:
    """Paired include/exclude arms with the same seeds and budgets."""
    layout = layout or net.NetLayout()
    report = ExperimentReport("target_inclusion")
    arms = (("include", make_partition(all_cycles, n_source, target_ids, True)),
            ("exclude", make_partition(all_cycles, n_source, target_ids, False)))
    for seed in seeds:
        for label, part in arms:
            _expert_then_student(_select(all_cycles, part.source), _select(all_cycles, part.target),
                                 hyper, seed, layout, powertrain,
                                 episodes_per_source * n_source, student_episodes, label, report, workdir)
    return report
