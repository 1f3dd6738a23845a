"""Source-count and target-inclusion ablations on the synthetic suite.

    python scripts/ablations.py source-count --counts 2 4 8 --out runs/sc
    python scripts/ablations.py target-inclusion --n-source 5 --out runs/ti
"""
import argparse
from pathlib import Path

import numpy as np

from hevtl import presets, transfer


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("kind", choices=("source-count", "target-inclusion"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--counts", type=int, nargs="+", default=[2, 4, 8])
    ap.add_argument("--n-source", type=int, default=5)
    ap.add_argument("--target", default="cycle-01")
    ap.add_argument("--episodes-per-source", type=int, default=40)
    ap.add_argument("--student-episodes", type=int, default=100)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suite = presets.transfer_suite()
    common = dict(episodes_per_source=args.episodes_per_source, student_episodes=args.student_episodes)
    if args.kind == "source-count":
        rep = transfer.run_ablation_source_count(suite, args.counts, [args.target], presets.TUNED,
                                                 args.seeds, out, **common)
    else:
        rep = transfer.run_ablation_target_inclusion(suite, args.n_source, [args.target], presets.TUNED,
                                                     args.seeds, out, **common)
    rep.write(out)
    labels = sorted({r.label for r in rep.runs}, key=lambda s: (len(s), s))
    for label in labels:
        finals = [r.final_rewards[args.target] for r in rep.runs if r.label == label]
        print(f"{label:>8s}: mean final reward {np.mean(finals):8.2f}  "
              + " ".join(f"{f:.2f}" for f in finals))


if __name__ == "__main__":
    main()
