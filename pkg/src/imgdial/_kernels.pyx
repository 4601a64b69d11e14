# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: assignment solver, exact top-k scan, LCS.

Mirrors ``_kernels_py`` function for function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline bint _worse(double s1, cnp.int64_t r1, double s2, cnp.int64_t r2):
    # entry 1 ranks after entry 2: lower score, or equal score and larger id rank
    return s1 < s2 or (s1 == s2 and r1 > r2)


def hungarian(cost):
    cdef const double[:, ::1] a = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(n + 1)
    cdef double[::1] minv = np.empty(n + 1)
    cdef Py_ssize_t[::1] p = np.zeros(n + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(n + 1, dtype=np.intp)
    cdef char[::1] used = np.zeros(n + 1, dtype=np.int8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur, ui0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            ui0 = u[i0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - ui0 - v[j]
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
    assign = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] asg = assign
    for j in range(1, n + 1):
        asg[p[j] - 1] = j - 1
    return assign, np.asarray(u[1:]).copy(), np.asarray(v[1:]).copy()


cdef bint _reroute(Py_ssize_t start, Py_ssize_t target, Py_ssize_t banned,
                   char[:, ::1] tight, char[::1] fixed_col, char[::1] seen,
                   cnp.int64_t[::1] assign, cnp.int64_t[::1] row_of,
                   Py_ssize_t[::1] stack_row, Py_ssize_t[::1] stack_col,
                   Py_ssize_t[::1] parent_col):
    # iterative DFS over alternating paths; stack_col[d] is the next column to try at depth d
    cdef Py_ssize_t n = tight.shape[0]
    cdef Py_ssize_t depth = 0, r, c, d
    stack_row[0] = start
    stack_col[0] = 0
    while depth >= 0:
        r = stack_row[depth]
        c = stack_col[depth]
        while c < n:
            if tight[r, c] and not fixed_col[c] and c != banned and not seen[c]:
                break
            c += 1
        if c == n:
            depth -= 1
            continue
        stack_col[depth] = c + 1
        seen[c] = 1
        parent_col[depth] = c
        if c == target:
            for d in range(depth, -1, -1):
                assign[stack_row[d]] = parent_col[d]
                row_of[parent_col[d]] = stack_row[d]
            return True
        depth += 1
        stack_row[depth] = row_of[c]
        stack_col[depth] = 0
    return False


def lex_refine(cost, assign_in, u_in, v_in, double tol):
    cdef const double[:, ::1] a = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef double[::1] u = np.ascontiguousarray(u_in, dtype=np.float64)
    cdef double[::1] v = np.ascontiguousarray(v_in, dtype=np.float64)
    out = np.array(assign_in, dtype=np.int64)
    cdef cnp.int64_t[::1] assign = out
    cdef cnp.int64_t[::1] row_of = np.empty(n, dtype=np.int64)
    cdef char[:, ::1] tight = np.zeros((n, n), dtype=np.int8)
    cdef char[::1] fixed_col = np.zeros(n, dtype=np.int8)
    cdef char[::1] seen = np.zeros(n, dtype=np.int8)
    cdef Py_ssize_t[::1] stack_row = np.zeros(n + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] stack_col = np.zeros(n + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] parent_col = np.zeros(n + 1, dtype=np.intp)
    cdef Py_ssize_t i, j, k, freed
    for i in range(n):
        for j in range(n):
            tight[i, j] = (a[i, j] - u[i] - v[j]) <= tol
    for i in range(n):
        row_of[assign[i]] = i
    for i in range(n):
        for j in range(n):
            if fixed_col[j] or not tight[i, j]:
                continue
            if assign[i] == j:
                break
            freed = assign[i]
            for k in range(n):
                seen[k] = 0
            if _reroute(row_of[j], freed, j, tight, fixed_col, seen, assign,
                        row_of, stack_row, stack_col, parent_col):
                assign[i] = j
                row_of[j] = i
                break
        fixed_col[assign[i]] = 1
    return out


def topk_scan(matrix, queries, Py_ssize_t k, id_rank):
    # per-query float64 matrix-vector products (same BLAS call as the fallback,
    # so scores agree bitwise across backends and batch sizes); selection runs in C
    m64 = np.asarray(matrix, dtype=np.float64)
    q64 = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    cdef const double[::1] sc
    cdef const cnp.int64_t[::1] rank = np.ascontiguousarray(id_rank, dtype=np.int64)
    cdef Py_ssize_t count = m64.shape[0], nq = q64.shape[0]
    cdef Py_ssize_t kk = k if k < count else count
    out_idx = np.empty((nq, kk), dtype=np.int64)
    out_score = np.empty((nq, kk), dtype=np.float64)
    cdef cnp.int64_t[:, ::1] oi = out_idx
    cdef double[:, ::1] os = out_score
    # min-heap of size kk: root is the current worst kept entry
    cdef double[::1] hs = np.empty(kk + 1)
    cdef cnp.int64_t[::1] hi = np.empty(kk + 1, dtype=np.int64)
    cdef Py_ssize_t qi, r, size, pos, child, best
    cdef double s, ts
    cdef cnp.int64_t ti
    for qi in range(nq):
        size = 0
        sc = np.ascontiguousarray(m64 @ q64[qi])
        for r in range(count):
            s = sc[r]
            if size < kk:
                pos = size
                size += 1
                hs[pos] = s
                hi[pos] = r
                while pos > 0:
                    best = (pos - 1) // 2
                    if _worse(hs[pos], rank[hi[pos]], hs[best], rank[hi[best]]):
                        hs[pos], hs[best] = hs[best], hs[pos]
                        hi[pos], hi[best] = hi[best], hi[pos]
                        pos = best
                    else:
                        break
            elif kk > 0 and _worse(hs[0], rank[hi[0]], s, rank[r]):
                hs[0] = s
                hi[0] = r
                pos = 0
                while True:
                    child = 2 * pos + 1
                    if child >= size:
                        break
                    best = child
                    if child + 1 < size and _worse(hs[child + 1], rank[hi[child + 1]],
                                                   hs[child], rank[hi[child]]):
                        best = child + 1
                    if _worse(hs[best], rank[hi[best]], hs[pos], rank[hi[pos]]):
                        hs[pos], hs[best] = hs[best], hs[pos]
                        hi[pos], hi[best] = hi[best], hi[pos]
                        pos = best
                    else:
                        break
        # pop worst-first into the tail
        while size > 0:
            os[qi, size - 1] = hs[0]
            oi[qi, size - 1] = hi[0]
            size -= 1
            hs[0] = hs[size]
            hi[0] = hi[size]
            pos = 0
            while True:
                child = 2 * pos + 1
                if child >= size:
                    break
                best = child
                if child + 1 < size and _worse(hs[child + 1], rank[hi[child + 1]],
                                               hs[child], rank[hi[child]]):
                    best = child + 1
                if _worse(hs[best], rank[hi[best]], hs[pos], rank[hi[pos]]):
                    ts = hs[pos]; hs[pos] = hs[best]; hs[best] = ts
                    ti = hi[pos]; hi[pos] = hi[best]; hi[best] = ti
                    pos = best
                else:
                    break
    return out_idx, out_score


def lcs_length(a, b):
    cdef const cnp.int64_t[::1] x = np.ascontiguousarray(a, dtype=np.int64)
    cdef const cnp.int64_t[::1] y = np.ascontiguousarray(b, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], i, j
    if n == 0 or m == 0:
        return 0
    cdef cnp.int64_t[::1] prev = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] cur = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] tmp
    for i in range(n):
        cur[0] = 0
        for j in range(1, m + 1):
            if x[i] == y[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif cur[j - 1] > prev[j]:
                cur[j] = cur[j - 1]
            else:
                cur[j] = prev[j]
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])
