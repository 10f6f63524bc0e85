"""Compact encoding of the chance-constrained N-1 dispatch problem.

Decision vector layout (``G`` generators, ``C`` contingencies)::

    [ p (G) | r_plus (G) | r_minus (G) | r_con (G) | alpha (C*G) | delta (C*G) ]

Deterministic constraints are stacked into ``A x <= b`` (equalities as two
inequalities).  Each uncertain row ``k`` reads
``e_k.x + f_k.xi + x.F_k.xi <= h_k`` with ``xi`` the realised wind output.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, IndexOutOfRange
from .network import surviving_lines

log = logging.getLogger(__name__)

UP, DOWN, LINE = 0, 1, 2
FAMILY_NAMES = ("reserve_up", "reserve_down", "line")


@dataclass(frozen=True)
class DecisionLayout:
    n_gen: int
    n_cont: int

    @property
    def n_x(self):
        return 4 * self.n_gen + 2 * self.n_cont * self.n_gen

    def p(self, g):
        return g

    def r_plus(self, g):
        return self.n_gen + g

    def r_minus(self, g):
        return 2 * self.n_gen + g

    def r_con(self, g):
        return 3 * self.n_gen + g

    def alpha(self, c, g):
        return 4 * self.n_gen + c * self.n_gen + g

    def delta(self, c, g):
        return 4 * self.n_gen + (self.n_cont + c) * self.n_gen + g

    def alpha_columns(self):
        start = 4 * self.n_gen
        return np.arange(start, start + self.n_cont * self.n_gen)

    def names(self):
        out = []
        for tag in ("p", "r_plus", "r_minus", "r_con"):
            out += [f"{tag}[{g}]" for g in range(self.n_gen)]
        for tag in ("alpha", "delta"):
            out += [f"{tag}[{c},{g}]" for c in range(self.n_cont) for g in range(self.n_gen)]
        return out

    def decode(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_x,):
            raise DimensionMismatch(f"expected x of length {self.n_x}, got {x.shape}")
        G, C = self.n_gen, self.n_cont
        return {
            "p": x[0:G].copy(),
            "r_plus": x[G:2 * G].copy(),
            "r_minus": x[2 * G:3 * G].copy(),
            "r_con": x[3 * G:4 * G].copy(),
            "alpha": x[4 * G:4 * G + C * G].reshape(C, G).copy(),
            "delta": x[4 * G + C * G:].reshape(C, G).copy(),
        }


@dataclass
class CompactProblem:
    c: np.ndarray
    A: sp.csr_matrix            # deterministic rows
    b: np.ndarray
    E: sp.csr_matrix            # K x n_x, the e_k
    f: np.ndarray               # K x n_xi, the f_k
    F_rows: np.ndarray          # COO triplets of the bilinear part:
    F_cols: np.ndarray          #   row k, x-index i, xi-index j, value
    F_xi: np.ndarray
    F_vals: np.ndarray
    h: np.ndarray
    epsilon: float
    layout: DecisionLayout
    n_xi: int
    contingencies: list
    row_family: np.ndarray      # UP / DOWN / LINE
    row_contingency: np.ndarray
    row_element: list           # generator id or line id (with +/- sign)
    det_labels: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def K(self):
        return self.h.shape[0]

    @property
    def n_x(self):
        return self.layout.n_x

    def _flat_F(self):
        if not hasattr(self, "_F_cache"):
            rows = self.F_rows * self.n_xi + self.F_xi
            self._F_cache = sp.csr_matrix(
                (self.F_vals, (rows, self.F_cols)), shape=(self.K * self.n_xi, self.n_x))
        return self._F_cache

    def _F_slice(self, k):
        if not hasattr(self, "_F_order"):
            self._F_order = np.argsort(self.F_rows, kind="stable")
            self._F_bounds = np.searchsorted(self.F_rows[self._F_order], np.arange(self.K + 1))
        return self._F_order[self._F_bounds[k]:self._F_bounds[k + 1]]

    def row(self, k):
        """The tuple ``(e_k, f_k, F_k, h_k)``; ``F_k`` is sparse n_x x n_xi."""
        if not 0 <= k < self.K:
            raise IndexOutOfRange(f"row {k} outside 0..{self.K - 1}")
        sel = self._F_slice(k)
        Fk = sp.csr_matrix((self.F_vals[sel], (self.F_cols[sel], self.F_xi[sel])),
                           shape=(self.n_x, self.n_xi))
        return self.E[k].toarray().ravel(), self.f[k].copy(), Fk, float(self.h[k])

    def affine_in_xi(self, x):
        """Return ``(offset, coef)`` with row k equal to ``offset[k] + coef[k].xi``.

        ``offset = E x - h`` and ``coef = f + F^T x``.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_x,):
            raise DimensionMismatch(f"x has shape {x.shape}, expected ({self.n_x},)")
        offset = self.E @ x - self.h
        coef = self.f + (self._flat_F() @ x).reshape(self.K, self.n_xi)
        return offset, coef

    def rows_at(self, rows, points):
        """Uncertain rows frozen at given xi values, as linear rows in x.

        Pair ``i`` is row ``rows[i]`` evaluated at ``points[i]``; returns
        ``(M, rhs)`` with ``M x <= rhs`` equivalent to those rows.
        """
        rows = np.asarray(rows, dtype=np.int64)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        P = rows.size
        if points.shape != (P, self.n_xi):
            raise DimensionMismatch(f"points have shape {points.shape}, expected ({P}, {self.n_xi})")
        cols = (rows[:, None] * self.n_xi + np.arange(self.n_xi)).ravel()
        W = sp.csr_matrix((points.ravel(), (np.repeat(np.arange(P), self.n_xi), cols)),
                          shape=(P, self.K * self.n_xi))
        M = (self.E[rows] + W @ self._flat_F()).tocsr()
        rhs = self.h[rows] - np.einsum("ij,ij->i", self.f[rows], points)
        return M, rhs

    def deterministic_residual(self, x):
        return self.A @ np.asarray(x, dtype=float) - self.b

    def describe_row(self, k):
        c = self.contingencies[self.row_contingency[k]]
        return f"{FAMILY_NAMES[self.row_family[k]]}[{c.label}, {self.row_element[k]}]"


def evaluate_row(problem, k, x, xi):
    """``e_k.x + f_k.xi + x.F_k.xi - h_k``; non-positive means satisfied."""
    if not 0 <= k < problem.K:
        raise IndexOutOfRange(f"row {k} outside 0..{problem.K - 1}")
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if x.shape != (problem.n_x,) or xi.shape != (problem.n_xi,):
        raise DimensionMismatch("x or xi has the wrong length")
    e, f, Fk, h = problem.row(k)
    return float(e @ x + f @ xi + x @ (Fk @ xi) - h)


class _Rows:
    """Small COO accumulator for the deterministic block."""

    def __init__(self):
        self.r, self.c, self.v, self.rhs, self.labels = [], [], [], [], []

    def add(self, coefs, rhs, label):
        k = len(self.rhs)
        for col, val in coefs:
            self.r.append(k)
            self.c.append(col)
            self.v.append(val)
        self.rhs.append(rhs)
        self.labels.append(label)

    def add_eq(self, coefs, rhs, label):
        self.add(coefs, rhs, label + ":le")
        self.add([(col, -val) for col, val in coefs], -rhs, label + ":ge")

    def matrix(self, n_cols):
        A = sp.csr_matrix((self.v, (self.r, self.c)), shape=(len(self.rhs), n_cols))
        return A, np.asarray(self.rhs, dtype=float)


def build_compact(case, contingencies, ptdfs, epsilon):
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if len(ptdfs) != len(contingencies):
        raise DimensionMismatch("one PTDF matrix per contingency is required")
    for c, m in zip(contingencies, ptdfs):
        if m.contingency != c:
            raise DimensionMismatch(f"PTDF for {m.contingency.label} paired with {c.label}")

    gens = case.generators
    G, C = len(gens), len(contingencies)
    lay = DecisionLayout(G, C)
    n_x = lay.n_x
    bidx = case.bus_index
    winds = case.wind_units
    n_xi = len(winds)
    S = case.total_forecast
    demand = case.total_demand
    gen_bus = np.array([bidx[g.bus] for g in gens], dtype=int)
    wind_bus = np.array([bidx[w.bus] for w in winds], dtype=int)
    load_inj = np.zeros(len(case.buses))
    for ld in case.loads:
        load_inj[bidx[ld.bus]] -= ld.demand

    cost = np.zeros(n_x)
    for g, gen in enumerate(gens):
        cost[lay.p(g)] = gen.h
        cost[lay.r_plus(g)] = gen.h_plus
        cost[lay.r_minus(g)] = gen.h_minus
        cost[lay.r_con(g)] = gen.h_con

    det = _Rows()
    det.add_eq([(lay.p(g), 1.0) for g in range(G)], demand - S, "balance")
    for g, gen in enumerate(gens):
        det.add([(lay.p(g), 1.0), (lay.r_plus(g), 1.0), (lay.r_con(g), 1.0)], gen.p_max, f"cap_up[{gen.id}]")
        det.add([(lay.p(g), -1.0), (lay.r_minus(g), 1.0)], -gen.p_min, f"cap_down[{gen.id}]")
        for tag, col in (("r_plus", lay.r_plus(g)), ("r_minus", lay.r_minus(g)), ("r_con", lay.r_con(g))):
            det.add([(col, -1.0)], 0.0, f"{tag}_nonneg[{gen.id}]")
            det.add([(col, 1.0)], gen.r_max, f"{tag}_max[{gen.id}]")

    for ci, cont in enumerate(contingencies):
        gc = case.generator_position(cont.element) if cont.kind == "gen" else None
        lab = cont.label
        det.add_eq([(lay.alpha(ci, g), 1.0) for g in range(G)], 1.0, f"alpha_sum[{lab}]")
        for g in range(G):
            det.add([(lay.alpha(ci, g), -1.0)], 0.0, f"alpha_nonneg[{lab},{gens[g].id}]")
        det.add_eq([(lay.delta(ci, g), 1.0) for g in range(G)], 0.0, f"delta_sum[{lab}]")
        for g in range(G):
            if g != gc:
                det.add([(lay.delta(ci, g), -1.0)], 0.0, f"delta_nonneg[{lab},{gens[g].id}]")
        if cont.kind == "gen":
            det.add_eq([(lay.alpha(ci, gc), 1.0)], 0.0, f"alpha_out[{lab}]")
            det.add_eq([(lay.delta(ci, gc), 1.0), (lay.p(gc), 1.0)], 0.0, f"delta_out[{lab}]")
            for g in range(G):
                det.add([(lay.delta(ci, g), 1.0), (lay.r_con(g), -1.0)], 0.0,
                        f"delta_max[{lab},{gens[g].id}]")
        elif cont.kind == "line":
            for g in range(G):
                det.add_eq([(lay.delta(ci, g), 1.0)], 0.0, f"delta_zero[{lab},{gens[g].id}]")

    # uncertain rows
    e_r, e_c, e_v = [], [], []
    F_r, F_c, F_j, F_v = [], [], [], []
    f_blocks, h_list, fam, cont_of, elem = [], [], [], [], []
    xi_cols = np.arange(n_xi)
    k = 0

    def add_bilinear(k, col, coef):
        if coef != 0.0 and n_xi:
            F_r.append(np.full(n_xi, k))
            F_c.append(np.full(n_xi, col))
            F_j.append(xi_cols)
            F_v.append(np.full(n_xi, coef))

    for ci, (cont, ptdf) in enumerate(zip(contingencies, ptdfs)):
        for sign, family in ((1.0, UP), (-1.0, DOWN)):
            rcol = lay.r_plus if family == UP else lay.r_minus
            for g in range(G):
                # sign * alpha * (S - sum(xi)) - r <= 0
                e_r += [k, k]
                e_c += [lay.alpha(ci, g), rcol(g)]
                e_v += [sign * S, -1.0]
                add_bilinear(k, lay.alpha(ci, g), -sign)
                f_blocks.append(np.zeros(n_xi))
                h_list.append(0.0)
                fam.append(family)
                cont_of.append(ci)
                elem.append(gens[g].id)
                k += 1
        lines = surviving_lines(case, cont)
        if tuple(ln.id for ln in lines) != ptdf.line_ids:
            raise DimensionMismatch(f"PTDF rows for {cont.label} do not match surviving lines")
        M = ptdf.entries
        for li, ln in enumerate(lines):
            mg = M[li, gen_bus]
            mw = M[li, wind_bus]
            base = float(M[li] @ load_inj)
            for sign in (1.0, -1.0):
                for g in range(G):
                    if mg[g] == 0.0:
                        continue
                    e_r += [k, k, k]
                    e_c += [lay.p(g), lay.delta(ci, g), lay.alpha(ci, g)]
                    e_v += [sign * mg[g], sign * mg[g], sign * mg[g] * S]
                    add_bilinear(k, lay.alpha(ci, g), -sign * mg[g])
                f_blocks.append(sign * mw)
                h_list.append(ln.flow_limit - sign * base)
                fam.append(LINE)
                cont_of.append(ci)
                elem.append(f"{'+' if sign > 0 else '-'}{ln.id}")
                k += 1

    K = k
    E = sp.csr_matrix((e_v, (e_r, e_c)), shape=(K, n_x))
    f = np.vstack(f_blocks) if K and n_xi else np.zeros((K, n_xi))
    h = np.asarray(h_list, dtype=float)
    if F_r:
        F_rows, F_cols = np.concatenate(F_r), np.concatenate(F_c)
        F_xi, F_vals = np.concatenate(F_j), np.concatenate(F_v)
    else:
        F_rows = F_cols = F_xi = np.zeros(0, dtype=int)
        F_vals = np.zeros(0)

    A, b = det.matrix(n_x)
    labels = det.labels
    fam = np.asarray(fam, dtype=np.int64)
    cont_of = np.asarray(cont_of, dtype=np.int64)

    if n_xi == 0:
        # no uncertainty: every row is deterministic
        A = sp.vstack([A, E]).tocsr()
        b = np.concatenate([b, h])
        labels = labels + [f"{FAMILY_NAMES[fa]}[{contingencies[ci].label},{el}]"
                           for fa, ci, el in zip(fam, cont_of, elem)]
        E = sp.csr_matrix((0, n_x))
        f = np.zeros((0, 0))
        h = np.zeros(0)
        fam = np.zeros(0, dtype=np.int64)
        cont_of = np.zeros(0, dtype=np.int64)
        elem = []

    problem = CompactProblem(
        c=cost, A=A, b=b, E=E, f=f, F_rows=F_rows, F_cols=F_cols, F_xi=F_xi, F_vals=F_vals,
        h=h, epsilon=float(epsilon), layout=lay, n_xi=n_xi, contingencies=list(contingencies),
        row_family=fam, row_contingency=cont_of, row_element=elem, det_labels=labels,
    )
    problem.diagnostics = _structure_warnings(case)
    for msg in problem.diagnostics:
        log.warning(msg)
    return problem


def _structure_warnings(case):
    out = []
    demand = case.total_demand
    S = case.total_forecast
    if sum(g.p_max for g in case.generators) < demand - S:
        out.append("total generator capacity is below demand net of wind forecast")
    lo, _ = case.support_box()
    worst_short = S - float(lo.sum()) if lo.size else 0.0
    if sum(g.r_max for g in case.generators) < worst_short:
        out.append(f"total reserve capacity {sum(g.r_max for g in case.generators):.1f} MW "
                   f"is below the largest wind shortfall {worst_short:.1f} MW")
    return out


def count_uncertain_rows(case, contingencies):
    """Closed-form K: 2 rows per generator and per surviving line, per contingency."""
    G, L = len(case.generators), len(case.lines)
    return sum(2 * (G + L - (1 if c.kind == "line" else 0)) for c in contingencies)


def dump_lp(problem):
    """Plain-text listing of the compact problem (for ``--dump-lp``)."""
    names = problem.layout.names()
    out = [f"# n_x={problem.n_x} n_xi={problem.n_xi} K={problem.K} "
           f"deterministic_rows={problem.A.shape[0]} epsilon={problem.epsilon}"]
    out.append("minimize")
    out.append("  " + " ".join(f"{v:+g} {names[i]}" for i, v in enumerate(problem.c) if v))
    out.append("deterministic")
    A = problem.A.tocsr()
    for r in range(A.shape[0]):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        terms = " ".join(f"{A.data[t]:+g} {names[A.indices[t]]}" for t in range(lo, hi))
        out.append(f"  {problem.det_labels[r]}: {terms} <= {problem.b[r]:g}")
    out.append("uncertain")
    E = problem.E.tocsr()
    for k in range(problem.K):
        lo, hi = E.indptr[k], E.indptr[k + 1]
        terms = " ".join(f"{E.data[t]:+g} {names[E.indices[t]]}" for t in range(lo, hi))
        fx = " ".join(f"{v:+g} xi[{j}]" for j, v in enumerate(problem.f[k]) if v)
        sel = problem._F_slice(k)
        bil = " ".join(f"{v:+g} {names[i]}*xi[{j}]"
                       for i, j, v in zip(problem.F_cols[sel], problem.F_xi[sel], problem.F_vals[sel]))
        out.append(f"  {problem.describe_row(k)}: {terms} {fx} {bil} <= {problem.h[k]:g}")
    return "\n".join(out) + "\n"
