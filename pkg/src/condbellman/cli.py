"""condbellman command line: solve, verify, share, randomset."""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time
import warnings

import numpy as np

from . import controls as cs
from .config import ConfigError, build_problem, build_sharing, config_hash, load_config
from .generators import NoKError, check_generator_conditions
from .randomsets import integrand_suite, reciprocality_suite, stability_product_suite
from .report import Report
from .risk import check_axioms, random_battery
from .search import UnboundedError
from .sharing import closed_form_allocation, numeric_cross_check, ybar_recursion
from .solver import (DivergenceError, GridError, Problem, brute_force_value, extract_policy,
                     refinement, solve_backward, verify_k_bound)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVE = 0, 1, 2, 3


def fmt(v) -> str:
    v = float(v)
    if np.isneginf(v):
        return "-inf"
    if np.isposinf(v):
        return "inf"
    return format(v, ".17g")


def write_csv(path: str, digest: str, header: list, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config-hash: {digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _load(args, need_out=False):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if need_out:
        os.makedirs(args.out, exist_ok=True)
    return cfg


def _build(cfg, args):
    workers = args.workers if args.workers else (os.cpu_count() or 1)
    return build_problem(cfg, args.grid_points, args.control_res, workers)


# -- solve ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    try:
        cfg = _load(args, need_out=True)
        built = _build(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoKError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    problem, grid = built.problem, built.grid
    tree = problem.tree
    digest = config_hash(cfg)
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sol = solve_backward(problem, grid)
            traj = extract_policy(sol)
    except (cs.InfeasibleError, DivergenceError, UnboundedError, GridError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVE

    d = max((len(np.atleast_1d(z)) for t in range(tree.T)
             for _, zs in [sol.policies[t].controls[n] for n in tree.stage_range(t)] for z in zs),
            default=0)
    zcols = [f"z_{i}" for i in range(d)]
    for t in range(tree.T + 1):
        rows = []
        for n in tree.stage_range(t):
            xs, ys = sol.values[t].knots(n)
            zs = sol.policies[t].controls[n][1] if t < tree.T else [None] * len(xs)
            for x, y, z in zip(xs, ys, zs):
                zz = [] if z is None else [float(v) for v in np.atleast_1d(z)]
                xv = np.atleast_1d(x)
                rows.append([n, *[float(v) for v in xv], float(y)] + zz + [""] * (d - len(zz)))
        xdim = len(np.atleast_1d(sol.values[t].knots(next(iter(tree.stage_range(t))))[0][0]))
        xcols = ["x"] if xdim == 1 else [f"x_{i}" for i in range(xdim)]
        write_csv(os.path.join(args.out, f"values_t{t}.csv"), digest, ["node", *xcols, "y"] + zcols, rows)

    rows = []
    for n in range(tree.n_nodes):
        z = traj.controls.get(n)
        zz = [] if z is None else [float(v) for v in np.atleast_1d(z)]
        rows.append([n, int(tree.stage[n]), int(tree.parent[n]),
                     *[float(v) for v in np.atleast_1d(traj.states[n])],
                     float(traj.node_values[n])] + zz + [""] * (d - len(zz)))
    xdim = len(np.atleast_1d(traj.states[0]))
    xcols = ["x"] if xdim == 1 else [f"x_{i}" for i in range(xdim)]
    write_csv(os.path.join(args.out, "trajectory.csv"), digest,
              ["node", "stage", "parent", *xcols, "value"] + zcols, rows)

    lines = [f"problem: {problem.name}", f"config-hash: {digest}", f"mode: {sol.mode}",
             f"stages: {tree.T}", f"nodes: {tree.n_nodes}",
             f"grid: points={grid.points} h={grid.h:g} polish_tol={grid.polish_tol:g}",
             f"y0(x0): {fmt(traj.y0)}", f"achieved value: {fmt(traj.value)}",
             f"achieved - y0: {traj.gap:.3g}"]
    lines += [f"note: {m}" for m in built.notes]
    if built.K is not None:
        rep = verify_k_bound(sol, built.K)
        lines.append(f"K: {fmt(built.K)}")
        lines += [f"K-bound {ln}" for ln in rep.lines()[1:]]
    if built.refinement and sol.mode == "grid":
        ref = refinement(problem, grid, built.levels)
        lines += [f"refinement {ln}" for ln in ref.lines()]
    lines += [f"warning: {w}" for w in sol.warnings]
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"(wall time {time.perf_counter() - t0:.2f}s; outputs in {args.out})", file=sys.stderr)
    return EXIT_OK


# -- verify -------------------------------------------------------------------------

def shrink(problem: Problem, h: float, per_node: int = 3) -> Problem:
    """Same tree and generators with at most ``per_node`` + 1 controls per node,
    taken evenly from the discretised control set plus its anchor."""
    spec, tree = problem.controls, problem.tree

    def grid(tr, node, x):
        G = cs.grid_at(spec, tree, node, x, h)
        idx = np.unique(np.linspace(0, len(G) - 1, min(per_node, len(G))).round().astype(int))
        pts = G[idx]
        a = spec.anchor(tree, node, x)
        if a is not None and not np.any(np.all(pts == a, axis=1)):
            pts = np.vstack([pts, a[None, :]])
        return pts

    return Problem(tree, problem.forward, problem.backward, problem.terminal,
                   cs.ExplicitGridSet(grid), problem.x0, problem.name + " (shrunk)")


def verify_problem(built, seed: int = 0) -> Report:
    problem = built.problem
    tree, spec = problem.tree, problem.controls
    rep = Report(f"verify {problem.name} (regime {built.regime})")
    x0 = float(np.max(problem.x0))
    states = sorted({0.0, 0.5 * x0, x0, 2.0 * x0 + 1.0})

    if not isinstance(spec, cs.ExplicitGridSet):
        rep.extend(cs.c1_c2_report(spec, tree, states, seed), "controls ")
        try:
            probe = cs.default_c4_probe(spec, tree, 0, x0)
            rep.extend(cs.check_c4_surrogate(spec, tree, 0, *probe), "controls (c4) ")
        except (cs.InfeasibleError, UnboundedError) as exc:
            rep.add("controls (c4) (ii) boundedness", False, str(exc))
    if isinstance(spec, cs.RiskConstrainedSet):
        battery = random_battery(tree, 0, 100, seed)
        rep.extend(check_axioms(spec.rho, tree, 0, battery, seed), "risk ")

    if not problem.forward.vector_state:
        rep.extend(check_generator_conditions(problem.forward, problem.backward, tree, seed=seed,
                                              regime=built.regime,
                                              k_battery=[0.0, x0, 1e3, 1e6]), "generators ")

    if not problem.forward.vector_state and tree.T <= 3:
        try:
            small = shrink(problem, max(built.grid.h, 0.25))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                dp = solve_backward(small).root_value
            bf, _ = brute_force_value(small)
            rep.add("oracle equivalence", abs(dp - bf) <= 1e-12 or dp == bf,
                    f"dp={dp:.15g} brute={bf:.15g}")
        except (RuntimeError, cs.InfeasibleError, UnboundedError) as exc:
            rep.add("oracle equivalence", False, f"{type(exc).__name__}: {exc}")

    if built.K is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sol = solve_backward(problem, built.grid)
        rep.extend(verify_k_bound(sol, built.K), "K-bound ")
    return rep


def cmd_verify(args) -> int:
    try:
        cfg = _load(args)
        built = _build(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoKError as exc:
        print(f"[FAIL] generators K-bound: {exc}")
        return EXIT_FAIL
    try:
        rep = verify_problem(built, int(cfg.get("seed", 0)))
    except (DivergenceError, cs.InfeasibleError, UnboundedError) as exc:
        print(f"[FAIL] {type(exc).__name__}: {exc}")
        return EXIT_FAIL
    print(rep)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verify.txt"), "w", encoding="utf-8") as fh:
            fh.write(str(rep) + "\n")
    return EXIT_OK if rep.ok else EXIT_FAIL


# -- share --------------------------------------------------------------------------

def cmd_share(args) -> int:
    try:
        cfg = _load(args, need_out=True)
        prob, opts = build_sharing(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    digest = config_hash(cfg)
    t, tree = opts["t"], prob.tree
    alloc = closed_form_allocation(prob, t)
    yb = ybar_recursion(prob, t)
    H = prob.endowments
    rows = []
    for n in range(tree.n_nodes):
        for a in range(prob.n_agents):
            rows.append([n, int(tree.stage[n]), a, float(H[a, n]), float(alloc[a, n]),
                         float(alloc[a, n] / prob.aggregate[n])])
    write_csv(os.path.join(args.out, "allocation.csv"), digest,
              ["node", "stage", "agent", "endowment", "allocation", "share"], rows)
    rows = [[n, int(tree.stage[n]), float(prob.aggregate[n]), float(yb[n])]
            for n in range(tree.n_nodes) if tree.stage[n] >= t]
    write_csv(os.path.join(args.out, "ybar.csv"), digest, ["node", "stage", "aggregate", "ybar"], rows)
    try:
        rep = numeric_cross_check(prob, t, budget=opts["budget"], seed=int(cfg.get("seed", 0)))
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"config-hash: {digest}\n{rep}\n")
    print(rep)
    return EXIT_OK if rep.ok else EXIT_FAIL


# -- randomset ----------------------------------------------------------------------

def cmd_randomset(args) -> int:
    seed = 0
    if args.config:
        try:
            seed = int(_load(args).get("seed", 0))
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if args.seed is not None:
        seed = args.seed
    rep = Report(f"random sets (seed {seed})")
    rep.extend(reciprocality_suite(seed=seed))
    rep.extend(stability_product_suite())
    rep.extend(integrand_suite(seed=seed))
    print(rep)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "randomset.txt"), "w", encoding="utf-8") as fh:
            fh.write(str(rep) + "\n")
    return EXIT_OK if rep.ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="condbellman", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, need_cfg in (("solve", cmd_solve, True), ("verify", cmd_verify, True),
                               ("share", cmd_share, True), ("randomset", cmd_randomset, False)):
        s = sub.add_parser(name)
        s.add_argument("--config", required=need_cfg, help="JSON problem config")
        s.add_argument("--out", default="out" if name in ("solve", "share") else None,
                       help="output directory")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--workers", type=int, default=None,
                       help="solver threads (default: available cores)")
        s.add_argument("--grid-points", type=int, default=None)
        s.add_argument("--control-res", type=float, default=None)
        s.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
