"""Hot numeric kernels.

Each kernel exists twice: a loop version compiled with numba (``*_nb``) and a
vectorised numpy version (``*_np``).  The public name dispatches to the numba
version when numba is importable and ``DRDISPATCH_NO_NUMBA`` is unset.  Both
paths are exercised by the test-suite and compared in
``benchmarks/bench_kernels.py``.
"""

import math

import numpy as np

from ._accel import NUMBA_AVAILABLE, njit

# Relative slack when deciding whether a hyperplane still meets the box.
_REACH_RTOL = 1e-12


# ---------------------------------------------------------------------------
# l1 distance from points to {xi : normal.xi = b} intersected with a box
# ---------------------------------------------------------------------------

@njit(cache=True)
def box_hyperplane_distance_nb(points, normal, b, lo, hi):
    n, dim = points.shape
    out = np.empty(n)
    order = np.argsort(-np.abs(normal))
    for m in range(n):
        r = b
        for j in range(dim):
            r -= normal[j] * points[m, j]
        if r == 0.0:
            out[m] = 0.0
            continue
        need = abs(r)
        tol = _REACH_RTOL * max(1.0, need)
        cost = 0.0
        for jj in range(dim):
            j = order[jj]
            a = abs(normal[j])
            if a == 0.0 or need <= tol:
                break
            up = (r > 0.0) == (normal[j] > 0.0)
            cap = hi[j] - points[m, j] if up else points[m, j] - lo[j]
            if cap <= 0.0:
                continue
            step = min(cap, need / a)
            cost += step
            need -= step * a
        out[m] = cost if need <= tol else np.inf
    return out


def box_hyperplane_distance_np(points, normal, b, lo, hi):
    points = np.asarray(points, dtype=float)
    r = b - points @ normal
    need = np.abs(r)
    tol = _REACH_RTOL * np.maximum(1.0, need)
    cost = np.zeros(points.shape[0])
    for j in np.argsort(-np.abs(normal), kind="stable"):
        a = abs(normal[j])
        if a == 0.0:
            break
        up = (r > 0.0) == (normal[j] > 0.0)
        cap = np.where(up, hi[j] - points[:, j], points[:, j] - lo[j])
        cap = np.maximum(cap, 0.0)
        step = np.minimum(cap, need / a)
        step = np.where(need <= tol, 0.0, step)
        cost += step
        need = need - step * a
    out = np.where(need <= tol, cost, np.inf)
    out[r == 0.0] = 0.0
    return out


# ---------------------------------------------------------------------------
# worst-case violation probability: min over lambda of a convex PWL function
# ---------------------------------------------------------------------------

@njit(cache=True)
def worst_case_prob_nb(d, theta):
    n = d.shape[0]
    if n == 0:
        return 0.0
    n_zero = 0
    n_pos = 0
    pos = np.empty(n)
    for m in range(n):
        v = d[m]
        if v <= 0.0:
            n_zero += 1
        elif v < np.inf:
            pos[n_pos] = v
            n_pos += 1
    best = (n_zero + n_pos) / n  # lambda = 0
    p = np.sort(pos[:n_pos])
    prefix = 0.0
    for j in range(n_pos):
        f = theta / p[j] + (n_zero + j - prefix / p[j]) / n
        if f < best:
            best = f
        prefix += p[j]
    return min(max(best, 0.0), 1.0)


def worst_case_prob_np(d, theta):
    d = np.asarray(d, dtype=float)
    n = d.size
    if n == 0:
        return 0.0
    n_zero = int(np.count_nonzero(d <= 0.0))
    p = np.sort(d[(d > 0.0) & np.isfinite(d)])
    best = (n_zero + p.size) / n
    if p.size:
        prefix = np.concatenate(([0.0], np.cumsum(p)[:-1]))
        j = np.arange(p.size)
        with np.errstate(over="ignore"):
            f = theta / p + (n_zero + j - prefix / p) / n
        best = min(best, float(f.min()))
    return min(max(best, 0.0), 1.0)


# ---------------------------------------------------------------------------
# cyclic Jacobi eigen-decomposition of a small symmetric matrix
# ---------------------------------------------------------------------------

@njit(cache=True)
def jacobi_eig_nb(m, tol, max_sweeps):
    a = m.copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = max(1.0, math.sqrt(np.sum(a * a)))
    sweeps = 0
    for sweeps in range(max_sweeps + 1):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += 2.0 * a[p, q] * a[p, q]
        if math.sqrt(off) <= tol * scale or sweeps == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, sweeps


def jacobi_eig_np(m, tol, max_sweeps):
    a = np.array(m, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(1.0, float(np.linalg.norm(a)))
    sweeps = 0
    for sweeps in range(max_sweeps + 1):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2) * 2.0)
        if off <= tol * scale or sweeps == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau or 1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot = np.array([[c, s], [-s, c]])
                a[:, [p, q]] = a[:, [p, q]] @ rot
                a[[p, q], :] = rot.T @ a[[p, q], :]
                v[:, [p, q]] = v[:, [p, q]] @ rot
    return np.diag(a).copy(), v, sweeps


# ---------------------------------------------------------------------------
# Monte Carlo constraint evaluation
# ---------------------------------------------------------------------------

@njit(cache=True)
def count_violations_nb(offset, coef, xi, tol, family, n_family):
    n_samples, n_xi = xi.shape
    k_rows = offset.shape[0]
    violated = np.zeros(n_samples, dtype=np.bool_)
    fam_hits = np.zeros(n_family, dtype=np.int64)
    row_hits = np.zeros(k_rows, dtype=np.int64)
    seen = np.zeros(n_family, dtype=np.bool_)
    for m in range(n_samples):
        seen[:] = False
        for k in range(k_rows):
            val = offset[k]
            for j in range(n_xi):
                val += coef[k, j] * xi[m, j]
            if val > tol:
                violated[m] = True
                row_hits[k] += 1
                seen[family[k]] = True
        for f in range(n_family):
            if seen[f]:
                fam_hits[f] += 1
    return violated, fam_hits, row_hits


def count_violations_np(offset, coef, xi, tol, family, n_family, chunk=2048):
    n_samples = xi.shape[0]
    violated = np.zeros(n_samples, dtype=bool)
    fam_hits = np.zeros(n_family, dtype=np.int64)
    row_hits = np.zeros(offset.shape[0], dtype=np.int64)
    onehot = np.zeros((offset.shape[0], n_family))
    onehot[np.arange(offset.shape[0]), family] = 1.0
    for start in range(0, n_samples, chunk):
        vals = xi[start:start + chunk] @ coef.T + offset
        bad = vals > tol
        violated[start:start + chunk] = bad.any(axis=1)
        row_hits += bad.sum(axis=0)
        fam_hits += ((bad @ onehot) > 0).sum(axis=0).astype(np.int64)
    return violated, fam_hits, row_hits


if NUMBA_AVAILABLE:
    box_hyperplane_distance = box_hyperplane_distance_nb
    worst_case_prob = worst_case_prob_nb
    jacobi_eig = jacobi_eig_nb
    count_violations = count_violations_nb
else:
    box_hyperplane_distance = box_hyperplane_distance_np
    worst_case_prob = worst_case_prob_np
    jacobi_eig = jacobi_eig_np
    count_violations = count_violations_np
