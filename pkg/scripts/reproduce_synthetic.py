#!/usr/bin/env python3
"""
Synthetic Comparison Script
Runs L-DQN, DAve-QN and synchronous gradient descent on one synthetic
logistic-regression problem and writes the comparison tables
"""

import argparse
import os
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from ldqn.core.error_handler import EXIT_OK  # noqa: E402
from ldqn.main import compare, run_experiment  # noqa: E402
from ldqn.schemas.run_schemas import RunConfig  # noqa: E402


def build_config(solver: str, args, out_dir: Path) -> RunConfig:
    return RunConfig.model_validate({
        "solver": solver,
        "dataset": {"kind": "synthetic", "N": args.samples, "d": args.dim, "seed": args.seed,
                    "lam": args.lam},
        "workers": args.workers,
        "memory": args.memory,
        "seed": args.seed,
        "delay": {"kind": "uniform-integer", "params": {"low": 1, "high": args.max_delay},
                  "seed": args.seed},
        "stop": {"max_updates": args.max_updates, "subopt_tol": args.tol},
        "output_dir": str(out_dir / solver),
    })


def main():
    parser = argparse.ArgumentParser(description="Compare L-DQN against the baselines on synthetic data")
    parser.add_argument("--samples", type=int, default=8000)
    parser.add_argument("--dim", type=int, default=200)
    parser.add_argument("--lam", type=float, default=0.01)
    parser.add_argument("--workers", type=int, default=8)
    parser.add_argument("--memory", type=int, default=20)
    parser.add_argument("--max-delay", type=int, default=4)
    parser.add_argument("--max-updates", type=int, default=20000)
    parser.add_argument("--tol", type=float, default=1e-4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--skip-daveqn", action="store_true", help="Leave out the dense-memory baseline")
    parser.add_argument("--output", default="runs/synthetic")
    args = parser.parse_args()

    out_dir = Path(args.output)
    print("🚀 Synthetic comparison")
    print(f"📁 Output: {os.path.abspath(out_dir)}")

    solvers = ["ldqn", "gd"] if args.skip_daveqn else ["ldqn", "daveqn", "gd"]
    for solver in solvers:
        print(f"\n🔄 Running {solver}")
        code = run_experiment(build_config(solver, args, out_dir))
        if code != EXIT_OK:
            print(f"❌ {solver} failed with exit code {code}")
            sys.exit(code)

    sys.exit(compare([str(out_dir / s) for s in solvers], args.tol, str(out_dir / "compare")))


if __name__ == "__main__":
    main()
