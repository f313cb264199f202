"""How far the embedded MoC drifts from its source FFN under each selection criterion.

Only |SiLU| ranking is exact; value-based ranking can prefer an empty column
over a live channel whose gate is negative.
"""

import argparse

import numpy as np

from moc.expressivity import embed_ffn_as_moc, verify_embedding
from moc.ffn import FfnWeights
from moc.masking import Criterion


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--d-ffn", type=int, default=12)
    p.add_argument("--a", type=int, default=2)
    p.add_argument("--b", type=int, default=8)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--samples", type=int, default=50)
    args = p.parse_args()

    print(f"{'criterion':>10} {'median dev':>12} {'max dev':>12}")
    for crit in Criterion:
        devs = []
        for t in range(args.trials):
            w = FfnWeights.random(args.d, args.d_ffn, np.random.default_rng(t))
            emb = embed_ffn_as_moc(w, args.a, args.b)
            devs.append(verify_embedding(w, emb, args.a, args.b, args.samples, seed=t,
                                         criterion=crit))
        print(f"{crit.value:>10} {np.median(devs):12.3e} {np.max(devs):12.3e}")


if __name__ == "__main__":
    main()
