"""Risk sharing on random trees: closed form vs. lattice search.

For each instance prints ybar_t, the best lattice value and their gap, and
the share each agent keeps at every node.
"""
import argparse

import numpy as np

from condbellman.sharing import (closed_form_allocation, numeric_cross_check, random_problem,
                                 ybar_recursion)


def demo(n: int, seed: int):
    rng = np.random.default_rng(seed)
    for i in range(n):
        prob = random_problem(rng, n_agents=2 + i % 2, T=int(rng.integers(1, 3)), max_children=2)
        t = 0
        rep = numeric_cross_check(prob, t, budget=50_000, seed=i)
        yb = ybar_recursion(prob, t)[0]
        x = closed_form_allocation(prob, t)
        print(f"instance {i}: {prob.n_agents} agents, T={prob.tree.T}, ybar_0={yb:.8f}")
        for line in rep.lines()[1:]:
            print("   ", line)
        print("    shares:", np.round(x[:, -1] / prob.aggregate[-1], 4).tolist())


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    demo(args.n, args.seed)
