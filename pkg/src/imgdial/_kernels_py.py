"""Pure-Python implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable, and kept as the
reference the extension is tested against. Signatures match ``_kernels.pyx``.
"""

from __future__ import annotations

import math

import numpy as np

INF = math.inf


def hungarian(cost):
    """Shortest-augmenting-path Hungarian method, O(n^3).

    Returns ``(assign, u, v)`` where ``assign[i]`` is the column of row ``i``
    and ``u``/``v`` are dual potentials with ``cost[i, j] - u[i] - v[j] >= 0``,
    equal to 0 on assigned cells.
    """
    a = np.asarray(cost, dtype=np.float64).tolist()
    n = len(a)
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = [0] * n
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return (
        np.asarray(assign, dtype=np.int64),
        np.asarray(u[1:], dtype=np.float64),
        np.asarray(v[1:], dtype=np.float64),
    )


def lex_refine(cost, assign, u, v, tol):
    """Move an optimal assignment to the lexicographically smallest optimum.

    Optimal assignments are exactly the perfect matchings on cells with zero
    reduced cost. Rows are fixed in order, each to its smallest tight column
    that still admits a perfect tight matching on the remaining rows.
    """
    a = np.asarray(cost, dtype=np.float64)
    n = a.shape[0]
    tight = ((a - np.asarray(u)[:, None] - np.asarray(v)[None, :]) <= tol).tolist()
    assign = [int(x) for x in assign]
    row_of = [0] * n
    for r, c in enumerate(assign):
        row_of[c] = r
    fixed_col = [False] * n

    def reroute(r, target, banned, seen):
        # alternating path from row r to the freed column `target`
        for c in range(n):
            if not tight[r][c] or fixed_col[c] or c == banned or seen[c]:
                continue
            seen[c] = True
            if c == target or reroute(row_of[c], target, banned, seen):
                assign[r] = c
                row_of[c] = r
                return True
        return False

    for i in range(n):
        for j in range(n):
            if fixed_col[j] or not tight[i][j]:
                continue
            if assign[i] == j:
                break
            freed = assign[i]
            r = row_of[j]
            seen = [False] * n
            if reroute(r, freed, j, seen):
                assign[i] = j
                row_of[j] = i
                break
        fixed_col[assign[i]] = True
    return np.asarray(assign, dtype=np.int64)


def topk_scan(matrix, queries, k, id_rank):
    """Exact top-k inner-product scan for each query row.

    Ties on score are broken by ascending ``id_rank``. Accumulates in float64.
    Returns ``(indices, scores)`` arrays of shape ``(n_queries, min(k, count))``.
    """
    m = np.asarray(matrix, dtype=np.float64)
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    rank = np.asarray(id_rank, dtype=np.int64)
    count = m.shape[0]
    kk = min(int(k), count)
    out_idx = np.empty((q.shape[0], kk), dtype=np.int64)
    out_score = np.empty((q.shape[0], kk), dtype=np.float64)
    for qi in range(q.shape[0]):
        scores = m @ q[qi]
        if kk < count:
            cut = np.partition(scores, count - kk)[count - kk]
            cand = np.nonzero(scores >= cut)[0]
        else:
            cand = np.arange(count)
        order = np.lexsort((rank[cand], -scores[cand]))[:kk]
        out_idx[qi] = cand[order]
        out_score[qi] = scores[cand[order]]
    return out_idx, out_score


def lcs_length(a, b):
    """Length of the longest common subsequence of two integer sequences."""
    a = list(a)
    b = list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] > prev[j] else prev[j]
        prev = cur
    return prev[-1]
