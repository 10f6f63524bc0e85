"""Robust counterpart over a polyhedral set, baselines and audits."""

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .compact import FAMILY_NAMES
from .drset import RobustSet, point_set, support_set
from .errors import DimensionMismatch, InfeasibleRobust, InfeasibleScenario, SolverFailure
from .lp import INFEASIBLE, OPTIMAL, LinearProgram, solve_lp

log = logging.getLogger(__name__)


@dataclass
class DispatchSolution:
    x: np.ndarray
    p: np.ndarray
    r_plus: np.ndarray
    r_minus: np.ndarray
    r_con: np.ndarray
    alpha: np.ndarray            # contingencies x generators
    delta: np.ndarray
    cost: float
    method: str
    status: str
    theta: float = float("nan")
    y: np.ndarray = None         # K x q dual block of the robust rows
    stats: dict = field(default_factory=dict)

    def to_dict(self, problem=None, case=None):
        out = {
            "method": self.method,
            "status": self.status,
            "theta": None if np.isnan(self.theta) else self.theta,
            "cost": self.cost,
            "stats": self.stats,
        }
        gen_ids = [g.id for g in case.generators] if case is not None else list(range(self.p.size))
        out["generators"] = [
            {"id": gid, "p": float(self.p[i]), "r_plus": float(self.r_plus[i]),
             "r_minus": float(self.r_minus[i]), "r_con": float(self.r_con[i])}
            for i, gid in enumerate(gen_ids)
        ]
        labels = ([c.label for c in problem.contingencies] if problem is not None
                  else [str(i) for i in range(self.alpha.shape[0])])
        out["contingencies"] = [
            {"contingency": lab, "alpha": self.alpha[c].tolist(), "delta": self.delta[c].tolist()}
            for c, lab in enumerate(labels)
        ]
        out["x"] = self.x.tolist()
        return out

    @classmethod
    def from_dict(cls, d, problem):
        x = np.asarray(d["x"], dtype=float)
        return decode_solution(problem, x, d["method"], d["status"],
                               theta=d.get("theta") if d.get("theta") is not None else float("nan"),
                               stats=d.get("stats", {}))

    def dumps(self, problem=None, case=None, **extra):
        out = self.to_dict(problem, case)
        out.update(extra)
        return json.dumps(out, indent=1)


def decode_solution(problem, x, method, status, theta=float("nan"), y=None, stats=None):
    parts = problem.layout.decode(x)
    return DispatchSolution(
        x=np.asarray(x, dtype=float), cost=float(problem.c @ x), method=method, status=status,
        theta=float(theta), y=y, stats=stats or {}, **parts)


# ---------------------------------------------------------------------------
# LP constructions
# ---------------------------------------------------------------------------

def reformulate_robust(problem, rset):
    """Deterministic LP equivalent to imposing every uncertain row on ``G xi <= g``.

    Variables are ``[x, y_1, ..., y_K]`` with ``y_k >= 0`` of length ``q``.
    Rows: ``A x <= b``; ``g.y_k + e_k.x <= h_k``; ``F_k' x - G' y_k = -f_k``.
    """
    G = np.asarray(rset.G, dtype=float)
    g = np.asarray(rset.g, dtype=float)
    K, n_x, n_xi = problem.K, problem.n_x, problem.n_xi
    if G.shape[1] != n_xi or g.shape != (G.shape[0],):
        raise DimensionMismatch(f"set has G {G.shape}, g {g.shape}; problem has n_xi={n_xi}")
    q = G.shape[0]
    n_y = K * q
    eye_k = sp.identity(K, format="csr")
    A_ub = sp.vstack([
        sp.hstack([problem.A, sp.csr_matrix((problem.A.shape[0], n_y))]),
        sp.hstack([problem.E, sp.kron(eye_k, sp.csr_matrix(g[None, :]))]),
    ]).tocsr()
    b_ub = np.concatenate([problem.b, problem.h])
    A_eq = sp.hstack([problem._flat_F(), -sp.kron(eye_k, sp.csr_matrix(G.T))]).tocsr()
    b_eq = -problem.f.reshape(-1)
    c = np.concatenate([problem.c, np.zeros(n_y)])
    lb = np.concatenate([np.full(n_x, -np.inf), np.zeros(n_y)])
    return LinearProgram(c, A_ub, b_ub, A_eq, b_eq, lb=lb, ub=np.inf)


def scenario_lp(problem, xi_points):
    """LP imposing every uncertain row at each point in ``xi_points``."""
    pts = np.atleast_2d(np.asarray(xi_points, dtype=float))
    if pts.shape[1] != problem.n_xi:
        raise DimensionMismatch("scenario points have the wrong dimension")
    K = problem.K
    M, rhs = problem.rows_at(np.tile(np.arange(K), pts.shape[0]), np.repeat(pts, K, axis=0))
    A = sp.vstack([problem.A, M]).tocsr()
    return LinearProgram(problem.c, A, np.concatenate([problem.b, rhs]), lb=-np.inf, ub=np.inf)


def nominal_lp(problem):
    return LinearProgram(problem.c, problem.A, problem.b, lb=-np.inf, ub=np.inf)


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def _run(lp, backend):
    res = solve_lp(lp, backend=backend)
    stats = {"iterations": res.iterations, "wall_time": res.wall_time, "backend": res.backend,
             "variables": lp.n, "constraints": lp.n_rows}
    return res, stats


# above this many dual variables "auto" switches to vertex cuts
CUTS_THRESHOLD = 20_000
# vertex enumeration is attempted only for blocks with at most this many
# candidate bases
MAX_BASES = 200_000


def solve_drpoly(problem, rset, method=None, backend=None, formulation="auto"):
    """Robust dispatch over ``rset``.

    ``formulation`` is ``"dual"`` (one LP with a dual block per uncertain row),
    ``"cuts"`` (constraint generation over the vertices of the set) or
    ``"auto"``.  Both are exact; cuts are much cheaper when the set splits
    into low-dimensional blocks.
    """
    method = method or getattr(rset, "kind", "drpoly")
    if problem.K == 0:
        res, stats = _run(nominal_lp(problem), backend)
        if res.status != OPTIMAL:
            raise InfeasibleRobust(f"problem without uncertainty is {res.status}")
        return decode_solution(problem, res.x, method, res.status, rset.theta, stats=stats)
    G = np.asarray(rset.G, dtype=float)
    if formulation == "auto":
        small = problem.K * G.shape[0] > CUTS_THRESHOLD and _enumerable(G)
        formulation = "cuts" if small else "dual"
    if formulation == "cuts":
        return _solve_by_cuts(problem, rset, method, backend)
    if formulation != "dual":
        raise ValueError(f"unknown formulation {formulation!r}")
    lp = reformulate_robust(problem, rset)
    res, stats = _run(lp, backend)
    stats["formulation"] = "dual"
    if res.status != OPTIMAL:
        diag = diagnose_infeasible(problem, rset, backend) if res.status == INFEASIBLE else None
        raise InfeasibleRobust(f"robust LP is {res.status}" + (f": {diag['summary']}" if diag else ""), diag)
    x = res.x[:problem.n_x]
    y = res.x[problem.n_x:].reshape(problem.K, G.shape[0])
    return decode_solution(problem, x, method, res.status, rset.theta, y=y, stats=stats)


def _enumerable(G):
    from math import comb
    for block in _coordinate_blocks(G):
        rows = np.flatnonzero(np.abs(G[:, block]).sum(axis=1) > 0)
        if comb(rows.size, len(block)) > MAX_BASES:
            return False
    return True


def _solve_by_cuts(problem, rset, method, backend, tol=1e-7, max_rounds=100):
    """Constraint generation: impose each row at its current worst vertex until
    no row is violated by more than ``tol``."""
    verts = VertexSet(rset)
    center, _ = rset.chebyshev_center()
    K = problem.K
    M0, r0 = problem.rows_at(np.arange(K), np.repeat(center[None, :], K, axis=0))
    blocks_A, blocks_b = [problem.A, M0], [problem.b, r0]
    seen = set()
    total_iter, wall = 0, 0.0
    for rnd in range(1, max_rounds + 1):
        lp = LinearProgram(problem.c, sp.vstack(blocks_A).tocsr(), np.concatenate(blocks_b),
                           lb=-np.inf, ub=np.inf)
        res = solve_lp(lp, backend=backend)
        total_iter += res.iterations
        wall += res.wall_time
        if res.status != OPTIMAL:
            diag = diagnose_infeasible(problem, rset, backend) if res.status == INFEASIBLE else None
            raise InfeasibleRobust(f"robust LP is {res.status}" + (f": {diag['summary']}" if diag else ""), diag)
        offset, coef = problem.affine_in_xi(res.x)
        worst, ids = verts.maximize(coef)
        viol = offset + worst
        bad = np.flatnonzero(viol > tol)
        fresh = [k for k in bad if (k, ids[k]) not in seen]
        if not fresh:
            break
        seen.update((k, ids[k]) for k in fresh)
        fresh = np.asarray(fresh)
        M, r = problem.rows_at(fresh, verts.points(ids, fresh))
        blocks_A.append(M)
        blocks_b.append(r)
    else:
        raise SolverFailure(f"vertex cuts did not converge in {max_rounds} rounds")
    stats = {"iterations": total_iter, "wall_time": wall, "backend": res.backend,
             "variables": lp.n, "constraints": lp.n_rows, "formulation": "cuts",
             "rounds": rnd, "cuts": len(seen), "max_violation": float(max(viol.max(), 0.0))}
    return decode_solution(problem, res.x, method, res.status, rset.theta, stats=stats)


def solve_scenario(problem, samples, backend=None):
    pts = samples.samples if hasattr(samples, "samples") else np.atleast_2d(samples)
    if pts.shape[0] < 1:
        raise ValueError("scenario method needs at least one sample")
    res, stats = _run(scenario_lp(problem, pts), backend)
    if res.status != OPTIMAL:
        raise InfeasibleScenario(f"scenario LP is {res.status}")
    stats["n_samples"] = int(pts.shape[0])
    return decode_solution(problem, res.x, "scenario", res.status, stats=stats)


def solve_worstcase(problem, partition, backend=None):
    return solve_drpoly(problem, support_set(partition), method="worstcase", backend=backend)


def solve_nominal(problem, backend=None):
    res, stats = _run(nominal_lp(problem), backend)
    if res.status != OPTIMAL:
        raise InfeasibleScenario(f"deterministic LP is {res.status}")
    return decode_solution(problem, res.x, "nominal", res.status, stats=stats)


# ---------------------------------------------------------------------------
# support function of a polytope (vertex enumeration per coordinate block)
# ---------------------------------------------------------------------------

def _coordinate_blocks(G):
    n = G.shape[1]
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for row in G:
        nz = np.flatnonzero(np.abs(row) > 0)
        for j in nz[1:]:
            parent[find(j)] = find(nz[0])
    blocks = {}
    for j in range(n):
        blocks.setdefault(find(j), []).append(j)
    return list(blocks.values())


def polytope_vertices(G, g, tol=1e-9):
    """Vertices of the bounded polytope ``{xi : G xi <= g}`` by brute force."""
    G = np.asarray(G, dtype=float)
    g = np.asarray(g, dtype=float)
    n = G.shape[1]
    found = []
    for rows in itertools.combinations(range(G.shape[0]), n):
        sub = G[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, g[list(rows)])
        if (G @ v <= g + tol * max(1.0, np.abs(g).max())).all():
            found.append(v)
    if not found:
        return np.zeros((0, n))
    verts = np.array(found)
    return np.unique(np.round(verts, 10), axis=0)


class VertexSet:
    """Vertices of a bounded polytope, kept per independent coordinate block."""

    def __init__(self, rset):
        G = np.asarray(rset.G, dtype=float)
        g = np.asarray(rset.g, dtype=float)
        self.n = G.shape[1]
        self.blocks = []
        for block in _coordinate_blocks(G):
            rows = np.flatnonzero(np.abs(G[:, block]).sum(axis=1) > 0)
            verts = polytope_vertices(G[np.ix_(rows, block)], g[rows])
            if verts.shape[0] == 0:
                raise SolverFailure("empty or unbounded block in uncertainty set")
            self.blocks.append((np.asarray(block), verts))

    def maximize(self, coef):
        """Row-wise ``max coef_k . xi`` and the maximizing vertex ids per block."""
        coef = np.atleast_2d(coef)
        total = np.zeros(coef.shape[0])
        arg = []
        for block, verts in self.blocks:
            scores = coef[:, block] @ verts.T
            best = scores.argmax(axis=1)
            total += scores[np.arange(coef.shape[0]), best]
            arg.append(best)
        ids = list(zip(*arg)) if arg else [()] * coef.shape[0]
        return total, ids

    def points(self, ids, rows):
        out = np.zeros((len(rows), self.n))
        for i, k in enumerate(rows):
            for (block, verts), v in zip(self.blocks, ids[k]):
                out[i, block] = verts[v]
        return out

    def all_vertices(self):
        combos = itertools.product(*[range(v.shape[0]) for _, v in self.blocks])
        out = []
        for combo in combos:
            pt = np.zeros(self.n)
            for (block, verts), v in zip(self.blocks, combo):
                pt[block] = verts[v]
            out.append(pt)
        return np.array(out)


def support_function(rset, coef):
    """``max_{xi in set} coef_k . xi`` for every row of ``coef``."""
    return VertexSet(rset).maximize(coef)[0]


def diagnose_infeasible(problem, rset, backend=None):
    """Most violated uncertain row at the dispatch optimal for the Chebyshev
    centre of the set."""
    try:
        center, radius = rset.chebyshev_center()
    except SolverFailure as exc:
        return {"summary": f"uncertainty set is degenerate ({exc})"}
    res, _ = _run(nominal_lp(problem), backend)
    if res.status != OPTIMAL:
        return {"summary": "deterministic constraints alone are infeasible", "center": center.tolist()}
    res, _ = _run(scenario_lp(problem, center[None, :]), backend)
    if res.status != OPTIMAL:
        return {"summary": "infeasible even at the Chebyshev centre of the set", "center": center.tolist()}
    offset, coef = problem.affine_in_xi(res.x[:problem.n_x])
    worst = offset + support_function(rset, coef)
    k = int(np.argmax(worst))
    fam = FAMILY_NAMES[problem.row_family[k]]
    return {
        "summary": f"largest violation {worst[k]:.4g} MW on {problem.describe_row(k)}",
        "row": k, "family": fam,
        "contingency": problem.contingencies[problem.row_contingency[k]].label,
        "violation": float(worst[k]), "center": center.tolist(), "radius": float(radius),
    }


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------

def duality_audit(problem, solution, rset, n_rows=200, seed=0, tol=1e-6, backend=None):
    """Re-solve ``max_{xi in set} (f_k + F_k' x)' xi`` by LP for a random subset
    of rows and check it against ``h_k - e_k' x``.  Returns the worst slack
    excess (<= tol means pass) and the rows checked."""
    rng = np.random.default_rng(seed)
    K = problem.K
    rows = np.arange(K) if K <= n_rows else np.sort(rng.choice(K, n_rows, replace=False))
    offset, coef = problem.affine_in_xi(solution.x)
    worst = -np.inf
    free = np.full(problem.n_xi, -np.inf)
    for k in rows:
        res = solve_lp(LinearProgram(-coef[k], rset.G, rset.g, lb=free), backend=backend)
        if res.status != OPTIMAL:
            raise SolverFailure(f"audit LP for row {k} is {res.status}")
        worst = max(worst, float(offset[k] - res.objective))
    return worst, rows


def deterministic_violation(problem, x):
    return float(np.max(problem.deterministic_residual(x), initial=-np.inf))


def check_solution(problem, sol, tol=1e-6):
    """Return a list of broken structural invariants (empty when all hold)."""
    bad = []
    if deterministic_violation(problem, sol.x) > tol:
        bad.append(f"deterministic rows violated by {deterministic_violation(problem, sol.x):.3g}")
    for ci, cont in enumerate(problem.contingencies):
        a, d = sol.alpha[ci], sol.delta[ci]
        if abs(a.sum() - 1.0) > tol:
            bad.append(f"{cont.label}: alpha sums to {a.sum()}")
        if (a < -tol).any():
            bad.append(f"{cont.label}: negative alpha")
        if abs(d.sum()) > tol * max(1.0, np.abs(d).sum()):
            bad.append(f"{cont.label}: delta sums to {d.sum()}")
        if cont.kind == "line" and np.abs(d).max() > tol:
            bad.append(f"{cont.label}: nonzero delta under a line outage")
    if abs(sol.cost - float(problem.c @ sol.x)) > 1e-6 * max(1.0, abs(sol.cost)):
        bad.append("cost does not match c'x")
    return bad


def degenerate_point_solution(problem, xi0, backend=None):
    """Robust solve over the single point ``xi0``."""
    return solve_drpoly(problem, point_set(xi0), method="point", backend=backend)
