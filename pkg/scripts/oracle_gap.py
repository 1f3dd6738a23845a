"""Train PPO on the 300 s urban benchmark and compare against the DP optimum.

    python scripts/oracle_gap.py --seeds 0 1 2 3 4 --out runs/oracle_gap

Writes ``gap.csv`` (one row per seed) and prints the table.
"""
import argparse
from pathlib import Path

from hevtl import net, oracle, ppo, presets
from hevtl import powertrain as pt
from hevtl.env import write_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--soc-nodes", type=int, default=401)
    ap.add_argument("--out", default="runs/oracle_gap")
    args = ap.parse_args()

    params = pt.PowertrainParams()
    cycle = presets.urban_benchmark()
    dp = oracle.dp_solve(oracle.DpGrid.uniform(cycle, params, args.soc_nodes, 24), params)
    print(f"J* = {dp.j_star:.3f} (realized {dp.realized_cost:.3f})")
    rows = []
    for seed in args.seeds:
        init = net.init_params(net.NetLayout(), seed=seed)
        policy, log = ppo.train(presets.TUNED, [cycle], init, seed=seed, powertrain=params)
        traj, total = ppo.evaluate(policy, cycle, params)
        cost = -total
        rows.append((seed, cost, 100.0 * (cost - dp.j_star) / dp.j_star,
                     float(traj.columns["soc"][-1]), log.selected_iteration))
        print("seed {} cost {:.2f} gap {:+.1f}% soc_T {:.3f} iterate {}".format(*rows[-1]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = ("seed", "cost", "gap_pct", "terminal_soc", "selected_iteration")
    write_table(out / "gap.csv", cols, [list(c) for c in zip(*rows)])


if __name__ == "__main__":
    main()
