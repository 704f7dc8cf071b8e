"""Synthesize the baseline null control and print terminal norms.

    python3 scripts/baseline_control.py --eps 1e-2 --delta 1e-3 --out out/baseline
"""
import argparse
import json
from pathlib import Path

from relaxhum.dynamics import write_field_csv
from relaxhum.hum import HumConfig, synthesize_control
from relaxhum.model import baseline_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--eps", type=float, default=1e-2)
    ap.add_argument("--delta", type=float, default=1e-3)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--steps", type=int, default=64)
    ap.add_argument("--out", type=Path, default=Path("out/baseline"))
    args = ap.parse_args()

    p = baseline_problem(epsilon=args.eps, n=args.n, n_steps=args.steps)
    r = synthesize_control(p, config=HumConfig(delta=args.delta))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "control.json").write_text(json.dumps(r.to_json(), indent=2))
    write_field_csv(args.out / "control.csv", p.grid, p.cell_times, {"f": r.control.values})
    print(f"iterations {r.iterations}  converged {r.converged}")
    print(f"||v(T)|| = {r.terminal_v_norm:.4e}   ||ue(T)|| = {r.terminal_ue_norm:.4e}   delta = {args.delta:.1e}")
    print(f"||f||_L2 = {r.control_norm_l2:.4e}   bound ratio = {r.bound_ratio:.4f}")


if __name__ == "__main__":
    main()
