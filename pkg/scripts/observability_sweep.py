"""Observability constant against eps and the size of the observation window."""
import argparse
import csv
from pathlib import Path

from relaxhum.analysis import estimate_observability_constant
from relaxhum.model import baseline_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, nargs="+", default=[1.0, 1e-2, 1e-4, 1e-6, 0.0])
    ap.add_argument("--half-widths", type=float, nargs="+", default=[0.3, 0.2, 0.1])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("out/observability.csv"))
    args = ap.parse_args()

    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["half_width", "epsilon", "c_obs", "iterations"])
        for hw in args.half_widths:
            for eps in args.eps:
                p = baseline_problem(epsilon=eps, omega=((0.5 - hw,), (0.5 + hw,)))
                c, info = estimate_observability_constant(p, seed=args.seed, return_info=True)
                w.writerow([hw, eps, repr(c), info["iterations"]])
                print(f"omega = [{0.5 - hw:.2f}, {0.5 + hw:.2f}]  eps = {eps:7.0e}  C_obs = {c:.6e}")


if __name__ == "__main__":
    main()
