"""Linear-programming layer.

``solve_lp`` is the single entry point used by the rest of the package.  Two
backends sit behind it:

* ``"simplex"`` -- a self-contained dense two-phase revised simplex
  (Dantzig pricing, Bland's rule once degenerate pivots pile up).  Reference
  implementation; intended for small problems.
* ``"highs"`` -- scipy's HiGHS wrapper, used for the desk-scale dispatch LPs
  (10^4-10^5 columns) where a dense tableau is out of reach.

``"auto"`` (default) picks the simplex when the dense standard form is small.
The default can be overridden with ``DRDISPATCH_LP_BACKEND``.
"""

import os
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import DimensionMismatch, NumericalFailure

OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"

# dense standard-form size (rows * cols) up to which "auto" uses the simplex
AUTO_DENSE_LIMIT = 60_000


@dataclass
class LinearProgram:
    c: np.ndarray
    A_ub: object = None
    b_ub: np.ndarray = None
    A_eq: object = None
    b_eq: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.A_ub, self.b_ub = _block(self.A_ub, self.b_ub, n, "inequality")
        self.A_eq, self.b_eq = _block(self.A_eq, self.b_eq, n, "equality")
        self.lb = np.zeros(n) if self.lb is None else np.broadcast_to(np.asarray(self.lb, float), (n,)).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(np.asarray(self.ub, float), (n,)).copy()
        for name in ("c", "b_ub", "b_eq", "lb", "ub"):
            if np.isnan(getattr(self, name)).any():
                raise ValueError(f"NaN in {name}")
        for mat in (self.A_ub, self.A_eq):
            if np.isnan(mat.data).any():
                raise ValueError("NaN coefficient in constraint matrix")

    @property
    def n(self):
        return self.c.size

    @property
    def n_rows(self):
        return self.A_ub.shape[0] + self.A_eq.shape[0]

    def residuals(self, x):
        """Largest violation of rows and bounds at ``x`` (absolute)."""
        worst = 0.0
        if self.A_ub.shape[0]:
            worst = max(worst, float(np.max(self.A_ub @ x - self.b_ub)))
        if self.A_eq.shape[0]:
            worst = max(worst, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        worst = max(worst, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0)))
        return worst


def _block(A, b, n, what):
    if A is None:
        return sp.csr_matrix((0, n)), np.zeros(0)
    A = sp.csr_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[1] != n or A.shape[0] != b.size:
        raise DimensionMismatch(f"{what} block is {A.shape} with rhs {b.shape}, n={n}")
    return A, b


@dataclass
class LPResult:
    status: str
    x: np.ndarray = None
    objective: float = float("nan")
    iterations: int = 0
    backend: str = ""
    wall_time: float = 0.0
    ineq_duals: np.ndarray = None


def solve_lp(lp, backend=None, tol=1e-9, max_iter=None):
    backend = backend or os.environ.get("DRDISPATCH_LP_BACKEND", "auto")
    if backend == "auto":
        m = lp.n_rows + int(np.isfinite(lp.ub).sum())
        backend = "simplex" if m * (lp.n + m) <= AUTO_DENSE_LIMIT else "highs"
    start = time.perf_counter()
    if backend == "simplex":
        res = _solve_simplex(lp, tol, max_iter)
    elif backend == "highs":
        res = _solve_highs(lp)
    else:
        raise ValueError(f"unknown LP backend {backend!r}")
    res.backend = backend
    res.wall_time = time.perf_counter() - start
    return res


# ---------------------------------------------------------------------------
# HiGHS
# ---------------------------------------------------------------------------

def _solve_highs(lp):
    bounds = np.column_stack([np.where(np.isfinite(lp.lb), lp.lb, -np.inf),
                              np.where(np.isfinite(lp.ub), lp.ub, np.inf)])
    out = linprog(
        lp.c,
        A_ub=lp.A_ub if lp.A_ub.shape[0] else None, b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
        A_eq=lp.A_eq if lp.A_eq.shape[0] else None, b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
        bounds=bounds, method="highs",
        options={"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9},
    )
    if out.status == 0:
        duals = None
        if lp.A_ub.shape[0] and getattr(out, "ineqlin", None) is not None:
            duals = -np.asarray(out.ineqlin.marginals)
        return LPResult(OPTIMAL, out.x, float(lp.c @ out.x), int(out.nit), ineq_duals=duals)
    if out.status == 2:
        return LPResult(INFEASIBLE, iterations=int(out.nit))
    if out.status == 3:
        return LPResult(UNBOUNDED, iterations=int(out.nit))
    raise NumericalFailure(f"HiGHS: {out.message}")


# ---------------------------------------------------------------------------
# dense revised simplex
# ---------------------------------------------------------------------------

def _standard_form(lp):
    """Rewrite as ``min c's  s.t.  A s = b, s >= 0`` and a map back to ``x``.

    Returns ``(A, b, c, const, recover)`` where ``x = recover(s)``.
    """
    n = lp.n
    lb, ub = lp.lb, lp.ub
    cols = []      # per original variable: list of (std col, sign)
    shift = np.zeros(n)
    extra_rows = []  # (std col, upper) for doubly bounded variables
    k = 0
    for j in range(n):
        if np.isfinite(lb[j]):
            shift[j] = lb[j]
            cols.append([(k, 1.0)])
            if np.isfinite(ub[j]):
                extra_rows.append((k, ub[j] - lb[j]))
            k += 1
        elif np.isfinite(ub[j]):
            shift[j] = ub[j]
            cols.append([(k, -1.0)])
            k += 1
        else:
            cols.append([(k, 1.0), (k + 1, -1.0)])
            k += 2
    n_struct = k
    T = np.zeros((n, n_struct))
    for j, pairs in enumerate(cols):
        for col, s in pairs:
            T[j, col] = s

    A_ub = lp.A_ub.toarray() @ T
    b_ub = lp.b_ub - lp.A_ub @ shift
    A_eq = lp.A_eq.toarray() @ T
    b_eq = lp.b_eq - lp.A_eq @ shift
    if extra_rows:
        U = np.zeros((len(extra_rows), n_struct))
        for r, (col, cap) in enumerate(extra_rows):
            U[r, col] = 1.0
        A_ub = np.vstack([A_ub, U])
        b_ub = np.concatenate([b_ub, [cap for _, cap in extra_rows]])
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    A = np.zeros((m_ub + m_eq, n_struct + m_ub))
    A[:m_ub, :n_struct] = A_ub
    A[:m_ub, n_struct:] = np.eye(m_ub)
    A[m_ub:, :n_struct] = A_eq
    b = np.concatenate([b_ub, b_eq])
    c = np.concatenate([lp.c @ T, np.zeros(m_ub)])
    const = float(lp.c @ shift)

    def recover(s):
        return shift + T @ s[:n_struct]

    return A, b, c, const, recover


def _pivot_loop(A, b, c, basis, tol, max_iter, bland_after=50):
    m, n = A.shape
    it = 0
    stall = 0
    bland = False
    while True:
        if it >= max_iter:
            raise NumericalFailure(f"simplex iteration limit {max_iter} reached")
        B = A[:, basis]
        try:
            xb = np.linalg.solve(B, b)
            y = np.linalg.solve(B.T, c[basis])
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"singular basis: {exc}") from exc
        red = c - A.T @ y
        red[basis] = 0.0
        if bland:
            cand = np.flatnonzero(red < -tol)
            if cand.size == 0:
                return "optimal", basis, xb, it
            enter = int(cand[0])
        else:
            enter = int(np.argmin(red))
            if red[enter] >= -tol:
                return "optimal", basis, xb, it
        u = np.linalg.solve(B, A[:, enter])
        pos = u > tol
        if not pos.any():
            return "unbounded", basis, xb, it
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(xb[pos], 0.0) / u[pos]
        step = ratios.min()
        ties = np.flatnonzero(ratios <= step + tol * max(1.0, step))
        if bland:
            leave = int(ties[np.argmin(basis[ties])])
        else:
            leave = int(ties[np.argmax(u[ties])])
        if step <= tol:
            stall += 1
            if stall >= bland_after:
                bland = True
        else:
            stall = 0
        basis[leave] = enter
        it += 1


def _solve_simplex(lp, tol=1e-9, max_iter=None):
    A, b, c, const, recover = _standard_form(lp)
    m, n = A.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    if m == 0:
        if (c < -tol).any():
            return LPResult(UNBOUNDED)
        s = np.zeros(n)
        x = recover(s)
        return LPResult(OPTIMAL, x, float(lp.c @ x))

    # phase I with one artificial per row
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = np.arange(n, n + m)
    status, basis, xb, it1 = _pivot_loop(A1, b, c1, basis, tol, max_iter)
    scale = max(1.0, float(np.abs(b).max()))
    if c1[basis] @ xb > 1e-7 * scale:
        return LPResult(INFEASIBLE, iterations=it1)

    # drive zero-level artificials out; drop rows that are redundant
    keep_rows = np.ones(m, dtype=bool)
    for pos in range(m):
        if basis[pos] < n:
            continue
        B = A1[:, basis]
        row = np.linalg.solve(B, A1)[pos, :n]  # row of B^-1 A
        cand = [j for j in np.flatnonzero(np.abs(row) > 1e-8) if j not in set(basis)]
        if cand:
            basis[pos] = cand[0]
        else:
            # row basis[pos]-n is a combination of the others
            keep_rows[basis[pos] - n] = False
    if not keep_rows.all():
        drop_art = {n + r for r in np.flatnonzero(~keep_rows)}
        rows = np.flatnonzero(keep_rows)
        A = A[rows]
        b = b[rows]
        basis = np.array([j for j in basis if j not in drop_art])
        m = A.shape[0]
    if m == 0:
        if (c < -tol).any():
            return LPResult(UNBOUNDED, iterations=it1)
        x = recover(np.zeros(n))
        return LPResult(OPTIMAL, x, float(lp.c @ x), it1)

    status, basis, xb, it2 = _pivot_loop(A, b, c, basis.copy(), tol, max_iter)
    if status == "unbounded":
        return LPResult(UNBOUNDED, iterations=it1 + it2)
    s = np.zeros(n)
    s[basis] = np.maximum(xb, 0.0)
    x = recover(s)
    return LPResult(OPTIMAL, x, float(lp.c @ x), it1 + it2)
