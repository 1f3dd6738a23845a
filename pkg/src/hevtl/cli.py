"""Command-line entry point: ``hevtl <command> ...``.

Every command writes tidy CSVs plus a ``manifest.json`` into the output
directory (``--out``, else $HEVTL_OUTPUT_DIR, else the config's
``output_dir``). Exit codes: 0 ok, 2 config, 3 data, 4 training,
5 transfer incompatibility, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from hevtl import __version__, net, oracle, ppo, transfer
from hevtl.config import load_config
from hevtl.cycles import PROFILES, load_cycle, synthesize_cycle, write_cycle
from hevtl.env import rollout, write_table
from hevtl.errors import (
    CheckpointFormatError, ConfigError, DataError, DomainError, HevError, TrainingError,
    TransferIncompatibilityError,
)

log = logging.getLogger("hevtl")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING, EXIT_INCOMPATIBLE = 0, 1, 2, 3, 4, 5


def resolve_cycle(spec: str, dt: float = 1.0):
    """A file path, or ``synth:<profile>:<seed>[:<duration>]``."""
    if spec.startswith("synth:"):
        parts = spec.split(":")
        if len(parts) not in (3, 4) or parts[1] not in PROFILES:
            raise ConfigError(f"bad synthetic cycle spec {spec!r}; use synth:<profile>:<seed>[:<duration>]")
        try:
            seed = int(parts[2])
            duration = float(parts[3]) if len(parts) == 4 else 300.0
        except ValueError:
            raise ConfigError(f"bad synthetic cycle spec {spec!r}") from None
        return synthesize_cycle(seed, duration, parts[1], dt, f"{parts[1]}-{seed}")
    path = Path(spec)
    if not path.is_file():
        raise ConfigError(f"cycle file not found: {path}")
    return load_cycle(path, dt)


def write_manifest(out: Path, command: str, cfg, extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "versions": {"hevtl": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "seed": cfg.seed,
    }
    manifest["config"].pop("output_dir")
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _setup(args):
    cfg = load_config(args.config)
    out = cfg.resolved_output(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


# -- commands ------------------------------------------------------------

def cmd_train(args) -> int:
    cfg, out = _setup(args)
    _, sources, _ = cfg.partition_cycles()
    seed = cfg.component_seed("train")
    params, tlog, meta = transfer.train_expert(sources, cfg.hyper, seed, out / "expert.ckpt",
                                               cfg.network, cfg.powertrain, cfg.experiment.expert_episodes)
    tlog.to_csv(out / "training_log.csv")
    write_manifest(out, "train", cfg, {"train_seed": seed, "source_ids": meta["source_ids"]})
    print(f"trained on {len(sources)} source cycles, {len(tlog.episodes)} episodes -> {out / 'expert.ckpt'}")
    return EXIT_OK


def evaluate_checkpoint(params, cycle, powertrain, soc0):
    traj, total = ppo.evaluate(params, cycle, powertrain, soc0)
    return traj, {"cycle": cycle.id, "total_reward": total, "fuel_g": traj.fuel_g,
                  "terminal_soc": float(traj.columns["soc"][-1])}


def cmd_eval(args) -> int:
    cfg, out = _setup(args)
    params = net.load_params(args.checkpoint, cfg.network)
    cycle = resolve_cycle(args.cycle, cfg.cycles.dt)
    soc0 = args.soc0 if args.soc0 is not None else cfg.soc0
    traj, report = evaluate_checkpoint(params, cycle, cfg.powertrain, soc0)
    traj.to_csv(out / "trajectory.csv")
    write_table(out / "eval.csv", list(report), [[v] for v in report.values()])
    write_manifest(out, "eval", cfg, {"checkpoint": str(args.checkpoint), "cycle": args.cycle})
    print(f"total_reward {report['total_reward']:.6f}  fuel_g {report['fuel_g']:.6f}  "
          f"terminal_soc {report['terminal_soc']:.6f}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    cfg, out = _setup(args)
    ckpt = args.checkpoint or cfg.experiment.expert_checkpoint
    if not ckpt:
        raise ConfigError("transfer needs --checkpoint or experiment.expert_checkpoint")
    _, _, targets = cfg.partition_cycles()
    seed = cfg.component_seed("transfer")
    params, tlog = transfer.warm_start(ckpt, targets, cfg.hyper, seed, cfg.network,
                                       cfg.experiment.allow_hyper_change or args.allow_hyper_change,
                                       cfg.powertrain, cfg.experiment.episodes)
    net.save_params(params, out / "student.ckpt", {"role": "student", "expert": str(ckpt),
                                                   "target_ids": [c.id for c in targets], "seed": seed})
    tlog.to_csv(out / "training_log.csv")
    write_manifest(out, "transfer", cfg, {"transfer_seed": seed, "expert": str(ckpt)})
    print(f"student trained for {len(tlog.episodes)} episodes -> {out / 'student.ckpt'}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg, out = _setup(args)
    cycles = cfg.load_cycles()
    exp = cfg.experiment
    seeds = list(exp.seeds)
    targets = list(cfg.partition.targets)
    if args.kind == "source-count":
        report = transfer.run_ablation_source_count(
            cycles, exp.counts, targets, cfg.hyper, seeds, out, exp.episodes_per_source, exp.episodes,
            cfg.network, cfg.powertrain)
    elif args.kind == "target-inclusion":
        report = transfer.run_ablation_target_inclusion(
            cycles, cfg.partition.n_source, targets, cfg.hyper, seeds, out, exp.episodes_per_source,
            exp.episodes, cfg.network, cfg.powertrain)
    else:
        ckpt = args.checkpoint or exp.expert_checkpoint
        _, sources, target_cycles = cfg.partition_cycles(cycles)
        if not ckpt:
            ckpt = out / "expert.ckpt"
            transfer.train_expert(sources, cfg.hyper, cfg.component_seed("train"), ckpt, cfg.network,
                                  cfg.powertrain, exp.expert_episodes)
        report = transfer.run_tl_vs_no_tl(target_cycles, ckpt, cfg.hyper, seeds, exp.episodes, cfg.network,
                                          cfg.powertrain, exp.allow_hyper_change or args.allow_hyper_change)
        for seed in seeds:
            for mode in transfer.MODES:
                write_curve(report.find(seed, mode), out / f"curve_{mode}_seed{seed}.csv")
    paths = report.write(out)
    write_manifest(out, f"ablate {args.kind}", cfg, {"seeds": seeds})
    for p in paths:
        print(p)
    return EXIT_OK


def write_curve(run, path):
    """Per-run learning curve: one row per episode."""
    episodes = np.arange(1, len(run.episode_rewards) + 1)
    avg = np.cumsum(run.episode_rewards) / episodes
    write_table(path, ("episode", "total_reward", "normalized", "loss", "value_loss"),
                [episodes, run.episode_rewards, transfer.normalize_curve(avg), run.loss, run.value_loss])


def _parse_grid(text: str):
    try:
        n_soc, n_tq = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--grid expects <soc nodes>x<torque nodes>, got {text!r}") from None
    return n_soc, n_tq


def cmd_oracle(args) -> int:
    cfg, out = _setup(args)
    cycle = resolve_cycle(args.cycle, cfg.cycles.dt)
    p = cfg.powertrain
    soc0 = args.soc0 if args.soc0 is not None else (cfg.soc0 if cfg.soc0 is not None else p.soc_ref)
    if args.action == "refine":
        try:
            ladder = [int(x) for x in args.ladder.split(",")]
        except ValueError:
            raise ConfigError(f"--ladder expects comma-separated integers, got {args.ladder!r}") from None
        rows = oracle.dp_refine_study(cycle, p, ladder, args.torque_nodes, soc0)
        cols = list(rows[0])
        write_table(out / "refine.csv", cols, [[r[c] for r in rows] for c in cols])
        for r in rows:
            print(f"n_soc {r['n_soc']:5d}  J* {r['j_star']:.6f}  realized {r['realized_cost']:.6f}")
        write_manifest(out, "oracle refine", cfg, {"cycle": args.cycle, "ladder": ladder})
        return EXIT_OK
    n_soc, n_tq = _parse_grid(args.grid)
    res = oracle.dp_solve(oracle.DpGrid.uniform(cycle, p, n_soc, n_tq), p, soc0)
    traj, _, _ = rollout(oracle.torque_policy(res), cycle, soc0, params=p)
    traj.to_csv(out / "dp_trajectory.csv")
    write_table(out / "dp_torques.csv", ("t", "t_ice"), [np.arange(len(cycle)), res.torques])
    report = {"cycle": cycle.id, "j_star": res.j_star, "realized_cost": res.realized_cost,
              "infeasible_steps": res.infeasible_steps}
    line = f"J* {res.j_star:.6f}  realized {res.realized_cost:.6f}"
    if args.checkpoint:
        params = net.load_params(args.checkpoint, cfg.network)
        ptraj, ev = evaluate_checkpoint(params, cycle, p, soc0)
        ptraj.to_csv(out / "policy_trajectory.csv")
        cost = -ev["total_reward"]
        report.update({"policy_cost": cost, "gap_pct": 100.0 * (cost - res.j_star) / res.j_star})
        line += f"  policy {cost:.6f}  gap {report['gap_pct']:.2f}%"
    write_table(out / "oracle.csv", list(report), [[v] for v in report.values()])
    write_manifest(out, "oracle solve", cfg, {"cycle": args.cycle, "grid": [n_soc, n_tq], "soc0": soc0})
    print(line)
    return EXIT_OK


def cmd_cycles(args) -> int:
    if args.action == "validate":
        bad = 0
        for f in args.paths:
            try:
                c = load_cycle(f, args.dt)
                print(f"ok   {f}  n={len(c)}  mean_speed={c.speed.mean():.3f}")
            except DataError as exc:
                bad += 1
                print(f"FAIL {f}  {exc}")
        return EXIT_DATA if bad else EXIT_OK
    cyc = synthesize_cycle(args.seed, args.duration, args.profile, args.dt, args.id)
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_cycle(cyc, path)
    print(f"wrote {path} ({len(cyc)} samples, mean speed {cyc.speed.mean():.3f} m/s)")
    return EXIT_OK


# -- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hevtl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run config (defaults apply when omitted)")
        p.add_argument("--out", help="output directory (overrides $HEVTL_OUTPUT_DIR and the config)")

    p = sub.add_parser("train", help="train an expert on the configured source cycles")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="deterministic rollout of a checkpoint on one cycle")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cycle", required=True, help="CSV path or synth:<profile>:<seed>[:<duration>]")
    p.add_argument("--soc0", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="warm-start a student on the target cycles")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--allow-hyper-change", action="store_true")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("ablate", help="run one of the transfer experiments")
    p.add_argument("kind", choices=("source-count", "target-inclusion", "tl"))
    common(p)
    p.add_argument("--checkpoint", help="expert for the tl experiment (trained if omitted)")
    p.add_argument("--allow-hyper-change", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("oracle", help="dynamic-programming benchmark")
    p.add_argument("action", choices=("solve", "refine"))
    common(p)
    p.add_argument("--cycle", required=True)
    p.add_argument("--soc0", type=float)
    p.add_argument("--grid", default="201x24", help="<soc nodes>x<torque nodes>")
    p.add_argument("--ladder", default="51,101,201")
    p.add_argument("--torque-nodes", type=int, default=24)
    p.add_argument("--checkpoint", help="also evaluate this policy and report the DP gap")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("cycles", help="validate or synthesize cycle files")
    csub = p.add_subparsers(dest="action", required=True)
    v = csub.add_parser("validate")
    v.add_argument("paths", nargs="+")
    v.add_argument("--dt", type=float, default=1.0)
    s = csub.add_parser("synth")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=300.0)
    s.add_argument("--profile", choices=PROFILES, default="urban")
    s.add_argument("--dt", type=float, default=1.0)
    s.add_argument("--id")
    s.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_cycles)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HevError as exc:
        code, kind = _classify(exc)
        print(f"hevtl {args.command}: {kind} error: {exc}", file=sys.stderr)
        return code


def _classify(exc):
    # order matters: incompatibility is checked before the broader classes
    for cls, code, kind in ((TransferIncompatibilityError, EXIT_INCOMPATIBLE, "incompatible"),
                            ((ConfigError, DomainError), EXIT_CONFIG, "config"),
                            ((DataError, CheckpointFormatError), EXIT_DATA, "data"),
                            (TrainingError, EXIT_TRAINING, "training")):
        if isinstance(exc, cls):
            return code, kind
    return EXIT_OTHER, "unexpected"

if __name__ == "__main__":
    sys.exit(main())
