"""Cold vs warm-started learning curves on one target cycle.

    python scripts/transfer_curves.py --out runs/tl

An expert is trained on five cycles of the synthetic suite (the target
among them), then each seed runs a cold and a warm student with the same
episode budget. Writes ``tl_summary.csv`` and ``tl_curves.csv``.
"""
import argparse
from pathlib import Path

from hevtl import presets, transfer
from hevtl.cycles import make_partition


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--target", default="cycle-01")
    ap.add_argument("--n-source", type=int, default=5)
    ap.add_argument("--episodes", type=int, default=100)
    ap.add_argument("--out", default="runs/tl")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suite = presets.transfer_suite()
    by_id = {c.id: c for c in suite}
    part = make_partition(suite, args.n_source, [args.target], include_targets=True)
    ck = out / "expert.ckpt"
    transfer.train_expert([by_id[i] for i in part.source], presets.TUNED, 0, ck)
    rep = transfer.run_tl_vs_no_tl([by_id[args.target]], ck, presets.TUNED, args.seeds, args.episodes)
    rep.write(out)
    for row in rep.summary_rows():
        print("seed {seed} {mode:4s} first-5 {initial_reward:9.1f} final {final_reward:8.2f} "
              "value loss@1 {first_value_loss:.4g}".format(**row))


if __name__ == "__main__":
    main()
