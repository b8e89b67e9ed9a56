"""Compare the compiled and pure-Python kernel backends and time the models.

Usage: python benchmarks/bench_kernels.py [--quick] [--checkpoint dm.pt]
"""

import argparse

from lidm.bench import run_benchmarks


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--quick", action="store_true")
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--steps", type=int, default=10)
    args = p.parse_args()
    rows = run_benchmarks(args.quick, args.checkpoint, args.count, args.steps)
    timings = {k: v for k, v in rows}
    for k, v in rows:
        print(f"{k}={v}")
    for kernel in ("raycast", "row_runs", "nearest_sqdist", "scatter_min"):
        py = timings.get(f"kernel_{kernel}_python_s")
        cy = timings.get(f"kernel_{kernel}_cython_s")
        if py and cy:
            print(f"speedup_{kernel}={float(py) / max(float(cy), 1e-9):.2f}")


if __name__ == "__main__":
    main()
