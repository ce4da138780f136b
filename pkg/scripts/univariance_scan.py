"""Dispersion of orbit probabilities across spectra that share one C value.

Large statistics relative to the chi-square null band mean the orbit
probability depends on more than C.
"""

import argparse

import numpy as np

from sepfun.analysis import univariance_dispersion


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--c", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9])
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    print(f"{'beta':>4}{'C':>6}{'stat':>10}{'99% band':>18}{'min p':>8}{'max p':>8}")
    for beta in (1, 2):
        for c in args.c:
            r = univariance_dispersion(c, args.k, args.n, beta, args.seed)
            lo, hi = r.null_band()
            ps = np.array(r.p_hats)
            print(f"{beta:>4}{c:>6.2f}{r.statistic:>10.1f}   [{lo:6.1f},{hi:6.1f}]{ps.min():>8.3f}{ps.max():>8.3f}")


if __name__ == "__main__":
    main()
