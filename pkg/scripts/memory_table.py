"""Print FFN activation memory per variant in units of bsd, for a sweep of K/d_ffn."""

import argparse
from fractions import Fraction

from moc.memory import Variant, ffn_cost_per_bsd, recompute_per_bsd


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--ffn-ratio", default="8/3", help="d_ffn / d")
    p.add_argument("--k-fracs", default="1/10,1/5,3/10,1/2,4/5,1")
    args = p.parse_args()
    ratio = Fraction(args.ffn_ratio)
    fracs = [Fraction(f) for f in args.k_fracs.split(",")]

    print(f"d_ffn = {ratio} d; costs in bsd (recompute in brackets)")
    print(f"{'K/d_ffn':>8} " + " ".join(f"{v.value:>16}" for v in Variant))
    for f in fracs:
        cells = []
        for v in Variant:
            mem = ffn_cost_per_bsd(v, ratio, f)
            rc = recompute_per_bsd(v, ratio, f)
            cells.append(f"{float(mem):7.3f} [{float(rc):5.2f}]")
        print(f"{str(f):>8} " + " ".join(f"{c:>16}" for c in cells))


if __name__ == "__main__":
    main()
