"""Train paired dense / MoC students for several K and write final losses as CSV."""

import argparse
import csv
import sys

from moc.mixture import MocConfig
from moc.trainer import TrainConfig, train_compare


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--d-ffn", type=int, default=43)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--ks", default="4,8,13,22,43")
    args = p.parse_args()

    writer = csv.writer(sys.stdout)
    writer.writerow(["seed", "k", "dense_final", "moc_final", "moc_over_dense"])
    for seed in range(args.seeds):
        cfg = TrainConfig(total_steps=args.steps, seed=seed)
        for k in map(int, args.ks.split(",")):
            res = train_compare(args.d, args.d_ffn, cfg, MocConfig(k=k), task_seed=seed)
            dense, moc = res.dense_eval[1], res.moc_eval[1]
            writer.writerow([seed, k, f"{dense:.6g}", f"{moc:.6g}", f"{moc / dense:.4f}"])
            sys.stdout.flush()


if __name__ == "__main__":
    main()
