"""Grid refinement on the consumption preset, starting from several base grids.

Prints y_0(x0) per level, the successive deltas and each contraction ratio,
which shows where the piecewise-linear scheme becomes asymptotic.
"""
import argparse
import json
import time

from condbellman.config import build_problem, parse_config
from condbellman.solver import GridConfig, refinement, state_bounds


def study(levels: int, bases):
    built = build_problem(parse_config(json.dumps({"preset": "paper-example-3.2"})))
    prob = built.problem
    # fix the state intervals once so every base shares the same grid bounds
    bounds = state_bounds(prob, built.grid)
    for pts, h in bases:
        t0 = time.perf_counter()
        ref = refinement(prob, GridConfig(points=pts, h=h, bounds=bounds), levels)
        ratios = [a / b for a, b in zip(ref.deltas, ref.deltas[1:]) if b > 0]
        print(f"base points={pts} h={h:g} ({time.perf_counter() - t0:.1f}s)")
        for line in ref.lines():
            print("   ", line)
        print("    successive ratios:", ", ".join(f"{r:.3g}" for r in ratios))


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=3)
    args = ap.parse_args()
    study(args.levels, [(11, 0.2), (21, 0.1), (41, 0.05)])
