"""Run configuration: YAML file -> dataclasses, with defaults for every field.

An empty file (or no file) is a valid config: it trains on a synthetic
suite of urban/suburban/highway cycles with the default powertrain and
hyperparameters.

Schema (all keys optional)::

    seed: 0
    output_dir: runs/default
    soc0: 0.65
    powertrain: {<PowertrainParams field>: value, ...}
    hyper:      {<Hyperparams field>: value, ...}
    network:    {hidden: [64, 64], activation: tanh}
    cycles:
      suite: {n: 10, seed: 0, duration: 300, profiles: [urban, suburban, highway]}
      files: [path/to/a.csv, ...]           # appended after the suite
      synth: [{seed: 7, duration: 300, profile: urban, id: urban-7}, ...]
      dt: 1.0
    partition: {n_source: 5, targets: [cycle-01], include_targets: true}
    experiment:
      seeds: [0, 1, 2, 3, 4]
      episodes: 100                  # student episode budget
      expert_episodes: null          # null -> hyper.n_iterations iterations
      episodes_per_source: 20        # source-count ablation
      counts: [2, 4, 8]
      expert_checkpoint: null
      allow_hyper_change: false

Seed splitting: a component seed is the first word of
``SeedSequence([seed, crc32(name)])``, so changing one component's name
never moves another component's stream.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from hevtl import powertrain as pt
from hevtl.cycles import PROFILES, load_cycle, make_partition, synthesize_cycle, synthetic_suite
from hevtl.errors import ConfigError, DomainError
from hevtl.net import NetLayout
from hevtl.ppo import Hyperparams

OUTPUT_ENV = "HEVTL_OUTPUT_DIR"


def derive_seed(seed: int, name: str) -> int:
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class SuiteSpec:
    n: int = 10
    seed: int = 0
    duration: float = 300.0
    profiles: tuple = PROFILES


@dataclass(frozen=True)
class CycleSpec:
    suite: SuiteSpec | None = field(default_factory=SuiteSpec)
    files: tuple = ()
    synth: tuple = ()
    dt: float = 1.0


@dataclass(frozen=True)
class PartitionSpec:
    n_source: int = 5
    targets: tuple = ("cycle-01",)
    include_targets: bool = True


@dataclass(frozen=True)
class ExperimentSpec:
    seeds: tuple = (0, 1, 2, 3, 4)
    episodes: int = 100
    expert_episodes: int | None = None
    episodes_per_source: int = 20
    counts: tuple = (2, 4, 8)
    expert_checkpoint: str | None = None
    allow_hyper_change: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    soc0: float | None = None
    powertrain: pt.PowertrainParams = field(default_factory=pt.PowertrainParams)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    network: NetLayout = field(default_factory=NetLayout)
    cycles: CycleSpec = field(default_factory=CycleSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)
    source_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "soc0": self.soc0,
            "powertrain": self.powertrain.to_dict(),
            "hyper": self.hyper.to_dict(),
            "network": self.network.to_dict(),
            "cycles": _plain(dataclasses.asdict(self.cycles)),
            "partition": _plain(dataclasses.asdict(self.partition)),
            "experiment": _plain(dataclasses.asdict(self.experiment)),
        }

    def digest(self) -> str:
        """Hash of the resolved config; the output directory is excluded on purpose."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()[:16]

    def resolved_output(self, override: str | None = None) -> Path:
        return Path(override or os.environ.get(OUTPUT_ENV) or self.output_dir)

    def component_seed(self, name: str) -> int:
        return derive_seed(self.seed, name)

    # -- cycles --------------------------------------------------------

    def load_cycles(self):
        spec = self.cycles
        out = []
        if spec.suite is not None and spec.suite.n > 0:
            out += synthetic_suite(spec.suite.n, spec.suite.seed, spec.suite.duration,
                                   tuple(spec.suite.profiles))
        for entry in spec.synth:
            out.append(synthesize_cycle(int(entry.get("seed", 0)), float(entry.get("duration", 300.0)),
                                        entry.get("profile", "urban"), spec.dt, entry.get("id")))
        base = Path(self.source_path).parent if self.source_path else Path(".")
        for f in spec.files:
            path = Path(f) if Path(f).is_absolute() else base / f
            out.append(load_cycle(path, spec.dt))
        ids = [c.id for c in out]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ConfigError(f"cycles: duplicate ids {dup}")
        if not out:
            raise ConfigError("cycles: no cycles configured")
        return out

    def partition_cycles(self, cycles=None):
        cycles = cycles if cycles is not None else self.load_cycles()
        p = self.partition
        part = make_partition(cycles, p.n_source, p.targets, p.include_targets)
        by_id = {c.id: c for c in cycles}
        return part, [by_id[i] for i in part.source], [by_id[i] for i in part.target]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, block, where: str, **extra):
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(block).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(block) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {unknown}")
    kwargs = dict(block)
    for k, v in kwargs.items():
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (ConfigError, DomainError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(raw: dict | None, source_path: str | None = None) -> RunConfig:
    raw = dict(raw or {})
    top = {f.name for f in dataclasses.fields(RunConfig)} - {"source_path"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"config: unknown top-level key(s) {unknown}")
    cyc = dict(raw.get("cycles") or {})
    if "suite" in cyc and cyc["suite"] is not None:
        cyc["suite"] = _build(SuiteSpec, cyc["suite"], "cycles.suite")
    cyc["synth"] = tuple(cyc.get("synth") or ())
    for i, entry in enumerate(cyc["synth"]):
        if not isinstance(entry, dict):
            raise ConfigError(f"cycles.synth[{i}]: expected a mapping")
        if entry.get("profile", "urban") not in PROFILES:
            raise ConfigError(f"cycles.synth[{i}].profile: must be one of {PROFILES}")
    cycles = _build(CycleSpec, cyc, "cycles")
    base = Path(source_path).parent if source_path else Path(".")
    for i, f in enumerate(cycles.files):
        path = Path(f) if Path(f).is_absolute() else base / f
        if not path.is_file():
            raise ConfigError(f"cycles.files[{i}]: no such file {path}")
    net_block = dict(raw.get("network") or {})
    cfg = RunConfig(
        seed=int(raw.get("seed", 0)),
        output_dir=str(raw.get("output_dir", "runs/default")),
        soc0=raw.get("soc0"),
        powertrain=_build(pt.PowertrainParams, raw.get("powertrain"), "powertrain"),
        hyper=_build(Hyperparams, raw.get("hyper"), "hyper"),
        network=_build(NetLayout, net_block, "network"),
        cycles=cycles,
        partition=_build(PartitionSpec, raw.get("partition"), "partition"),
        experiment=_build(ExperimentSpec, raw.get("experiment"), "experiment"),
        source_path=source_path,
    )
    p = cfg.powertrain
    if cfg.soc0 is not None and not (p.soc_min <= float(cfg.soc0) <= p.soc_max):
        raise ConfigError(f"soc0: {cfg.soc0} outside [{p.soc_min}, {p.soc_max}]")
    if not cfg.experiment.seeds:
        raise ConfigError("experiment.seeds: must be non-empty")
    return cfg


def load_config(path=None) -> RunConfig:
    if path is None:
        return config_from_dict({})
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, str(path))


