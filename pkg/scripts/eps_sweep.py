"""Epsilon sweep on the baseline problem: control norms, C_obs, certificates,
distance to the eps = 0 control.  Writes sweep.csv and sweep.json."""
import argparse
from pathlib import Path

from relaxhum.analysis import default_weights, epsilon_sweep, loglog_slope
from relaxhum.hum import HumConfig
from relaxhum.model import baseline_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, nargs="+", default=[1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 0.0])
    ap.add_argument("--delta", type=float, default=1e-3)
    ap.add_argument("--jobs", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("out/sweep"))
    args = ap.parse_args()

    p = baseline_problem()
    rep = epsilon_sweep(p, HumConfig(delta=args.delta), args.eps, weights=default_weights(p), seed=args.seed,
                        jobs=args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(args.out / "sweep.csv")
    rep.to_json(args.out / "sweep.json")
    print(f"{'eps':>8} {'|f|':>11} {'ratio':>8} {'C_obs':>11} {'|f-f0|':>11}")
    for r in rep.rows:
        print(f"{r.epsilon:8.0e} {r.control_norm:11.4e} {r.bound_ratio:8.4f} {r.c_obs:11.4e} {r.dist_to_limit:11.3e}")
    eps = rep.column("epsilon")
    print(f"slope of log|f| vs log(1/eps): {loglog_slope(eps, rep.column('control_norm')):.4f}")
    print(f"slope of log C_obs vs log(1/eps): {loglog_slope(eps, rep.column('c_obs')):.4f}")


if __name__ == "__main__":
    main()
