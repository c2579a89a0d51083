"""Solve, verify and share every named preset; outputs under results/<preset>/."""
import argparse
import os

from condbellman.cli import main

RUNS = [
    ("solve", "paper-example-3.2"),
    ("solve", "paper-example-4.2"),
    ("verify", "paper-example-4.2"),
    ("share", "paper-prop-4.3"),
]


def run(out_root: str, workers: int) -> int:
    worst = 0
    for cmd, preset in RUNS:
        out = os.path.join(out_root, preset)
        os.makedirs(out, exist_ok=True)
        cfg = os.path.join(out, "config.json")
        with open(cfg, "w") as fh:
            fh.write(f'{{"preset": "{preset}"}}\n')
        print(f"== {cmd} {preset}")
        code = main([cmd, "--config", cfg, "--out", out, "--workers", str(workers)])
        print(f"-> exit {code}\n")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    raise SystemExit(run(args.out, args.workers))
