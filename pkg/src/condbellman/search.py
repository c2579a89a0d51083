"""Derivative-free primitives: ray scans for set radii and a pattern search polish."""
from __future__ import annotations

import itertools

import numpy as np

MAX_DOUBLINGS = 60
RAY_SEED = 20240611


class UnboundedError(RuntimeError):
    """A ray stayed feasible through every doubling."""


def scan_directions(d: int, seed: int = RAY_SEED, max_diag_dim: int = 8) -> np.ndarray:
    """±axis directions, 2d seeded random unit directions and, for small d,
    the normalised sign vectors (the corners of a cube)."""
    if d == 0:
        return np.zeros((0, 0))
    eye = np.eye(d)
    dirs = [eye, -eye]
    rng = np.random.default_rng(seed)
    r = rng.normal(size=(2 * d, d))
    dirs.append(r / np.linalg.norm(r, axis=1, keepdims=True))
    if 1 < d <= max_diag_dim:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
        dirs.append(signs / np.sqrt(d))
    return np.vstack(dirs)


def ray_scan(feasible, anchor: np.ndarray, directions: np.ndarray, tol: float = 1e-6,
             max_doublings: int = MAX_DOUBLINGS) -> np.ndarray:
    """Distance along each direction from ``anchor`` to the boundary of a set.

    ``feasible`` maps a (k, d) batch of points to a boolean (k,) array. Steps
    double from 1 until infeasible, then bisect to ``tol``; the returned value
    is the infeasible end of the final bracket.
    """
    anchor = np.asarray(anchor, dtype=float)
    k = len(directions)
    lo = np.zeros(k)
    hi = np.ones(k)
    active = np.ones(k, dtype=bool)
    for _ in range(max_doublings + 1):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        ok = np.asarray(feasible(anchor + hi[idx, None] * directions[idx]), dtype=bool)
        lo[idx[ok]] = hi[idx[ok]]
        hi[idx[ok]] *= 2.0
        active[idx[~ok]] = False
    if active.any():
        raise UnboundedError(f"{int(active.sum())} scan directions feasible after "
                             f"{max_doublings} doublings")
    while np.max(hi - lo) > tol:
        idx = np.flatnonzero(hi - lo > tol)
        mid = 0.5 * (lo[idx] + hi[idx])
        ok = np.asarray(feasible(anchor + mid[:, None] * directions[idx]), dtype=bool)
        lo[idx[ok]] = mid[ok]
        hi[idx[~ok]] = mid[~ok]
    return hi


def pattern_directions(d: int) -> np.ndarray:
    eye = np.eye(d)
    dirs = [eye, -eye]
    if 1 < d <= 3:
        for i, j in itertools.combinations(range(d), 2):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                v = np.zeros(d)
                v[i], v[j] = si, sj
                dirs.append(v[None, :])
    return np.vstack(dirs)


def coordinate_search(objective, z0: np.ndarray, step: float, tol: float = 1e-7,
                      max_evals: int = 20000) -> tuple[np.ndarray, float]:
    """Maximise ``objective`` (batch (k, d) -> (k,), -inf when infeasible)
    by compass search: move to the best improving neighbour, halve the step
    when none improves, stop once the step drops below ``tol``."""
    z = np.asarray(z0, dtype=float).copy()
    d = len(z)
    best = float(objective(z[None, :])[0])
    if d == 0 or not np.isfinite(best):
        return z, best
    dirs = pattern_directions(d)
    evals = 1
    while step >= tol and evals < max_evals:
        trial = z + step * dirs
        vals = np.asarray(objective(trial), dtype=float)
        evals += len(trial)
        i = int(np.argmax(vals))
        if vals[i] > best:
            z, best = trial[i], float(vals[i])
        else:
            step *= 0.5
    return z, best
