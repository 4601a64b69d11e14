"""Optimal assignment for set-prediction losses.

``solve_assignment`` runs the O(n^3) Hungarian method from the kernel backend
and then moves to the lexicographically smallest optimal permutation, so ties
resolve identically everywhere. ``brute_force_assignment`` is the exhaustive
oracle used in tests.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import kernels

ORACLE_LIMIT = 8


def _check(cost):
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix has non-finite entries")
    return c


def _tie_tol(c):
    n = c.shape[0]
    scale = max(1.0, float(np.abs(c).max())) if c.size else 1.0
    return 8.0 * max(n, 1) * np.finfo(np.float64).eps * scale


def total_cost(cost, perm):
    c = np.asarray(cost, dtype=np.float64)
    return math.fsum(c[i, j] for i, j in enumerate(perm))


def solve_assignment(cost):
    """Minimum-cost perfect assignment of rows (predictions) to columns (targets).

    Returns ``(perm, total)`` with ``perm[i]`` the column given to row ``i``.
    Among optimal permutations the lexicographically smallest is returned.
    """
    c = _check(cost)
    n = c.shape[0]
    if n == 0:
        return (), 0.0
    assign, u, v = kernels.hungarian(c)
    perm = kernels.lex_refine(c, assign, u, v, _tie_tol(c))
    perm = tuple(int(j) for j in perm)
    return perm, total_cost(c, perm)


def brute_force_assignment(cost):
    """Exhaustive minimum over all n! permutations, same tie-break rule."""
    c = _check(cost)
    n = c.shape[0]
    if n > ORACLE_LIMIT:
        raise ValueError("oracle size limit")
    perms = list(itertools.permutations(range(n)))
    costs = [total_cost(c, p) for p in perms]
    best = min(costs)
    tol = _tie_tol(c)
    # permutations() yields lexicographic order, so the first near-minimum wins
    for p, s in zip(perms, costs):
        if s <= best + tol:
            return p, s
    raise AssertionError("unreachable")
