"""Data-driven polyhedral uncertainty set with a Wasserstein mass guarantee.

For every correlation group the set is an intersection of slabs
``lo <= normal . xi <= hi``.  Normals are the coordinate axes plus the
``kappa`` covariance eigenvectors with the smallest eigenvalues.  Each slab is
shrunk until its worst-case violation probability over the Wasserstein ball
(l1 ground norm) just fits the per-slab budget ``epsilon / n_dr``; the union
bound then certifies ``1 - epsilon`` mass for the product set.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BudgetInfeasible, DimensionMismatch, KappaOutOfRange, SolverFailure
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram, solve_lp
from .uncertainty import eig_basis

log = logging.getLogger(__name__)

BISECTION_STEPS = 14  # 2**-14 < 1e-4 of the support-projection width


@dataclass(frozen=True)
class Slab:
    group: int
    normal: np.ndarray
    lower: float
    upper: float
    kind: str                    # "axis" | "eigen"
    index: int                   # coordinate (axis) or eigen rank (eigen)
    achieved: float = float("nan")

    def to_dict(self):
        return {"group": self.group, "normal": [float(v) for v in self.normal],
                "lo": self.lower, "hi": self.upper, "kind": self.kind,
                "index": self.index, "achieved": self.achieved}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["group"]), np.asarray(d["normal"], dtype=float), float(d["lo"]),
                   float(d["hi"]), str(d["kind"]), int(d.get("index", 0)),
                   float(d.get("achieved", float("nan"))))


@dataclass
class RobustSet:
    G: np.ndarray
    g: np.ndarray
    slabs: tuple = ()
    groups: tuple = ()
    theta: float = float("nan")
    epsilon: float = float("nan")
    kind: str = "drpoly"
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_dr(self):
        return len(self.slabs)

    @property
    def q(self):
        return self.G.shape[0]

    @property
    def budget(self):
        return self.epsilon / self.n_dr if self.n_dr else float("nan")

    def contains(self, xi, tol=1e-9):
        xi = np.atleast_2d(xi)
        return (xi @ self.G.T <= self.g + tol).all(axis=1)

    def chebyshev_center(self):
        norms = np.linalg.norm(self.G, axis=1)
        n = self.G.shape[1]
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A = np.hstack([self.G, norms[:, None]])
        lb = np.full(n + 1, -np.inf)
        lb[-1] = 0.0
        res = solve_lp(LinearProgram(c, A, self.g, lb=lb))
        if res.status != OPTIMAL:
            raise SolverFailure(f"Chebyshev centre LP is {res.status}")
        return res.x[:n], res.x[-1]

    def to_dict(self):
        return {
            "kind": self.kind,
            "slabs": [s.to_dict() for s in self.slabs],
            "groups": [list(gr) for gr in self.groups],
            "G": self.G.tolist(),
            "g": self.g.tolist(),
            "n_dr": self.n_dr,
            "theta": self.theta,
            "epsilon": self.epsilon,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            G=np.asarray(d["G"], dtype=float).reshape(len(d["g"]), -1),
            g=np.asarray(d["g"], dtype=float),
            slabs=tuple(Slab.from_dict(s) for s in d.get("slabs", ())),
            groups=tuple(tuple(gr) for gr in d.get("groups", ())),
            theta=float(d.get("theta", float("nan"))),
            epsilon=float(d.get("epsilon", float("nan"))),
            kind=d.get("kind", "drpoly"),
            diagnostics=d.get("diagnostics", {}),
        )

    def dumps(self, **extra):
        out = self.to_dict()
        out.update(extra)
        return json.dumps(out, indent=1)


def polyhedron_set(G, g, kind="polyhedron"):
    return RobustSet(np.asarray(G, dtype=float), np.asarray(g, dtype=float), kind=kind)


def support_set(partition):
    """The full support as a RobustSet (worst-case baseline)."""
    G, g = partition.full_polyhedron()
    return RobustSet(G, g, groups=partition.groups, kind="support")


def point_set(xi0):
    xi0 = np.asarray(xi0, dtype=float)
    n = xi0.size
    return RobustSet(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([xi0, -xi0]), kind="point")


# ---------------------------------------------------------------------------
# normals
# ---------------------------------------------------------------------------

def select_normals(eig, group, kappa):
    """Axis normals of the group followed by the ``kappa`` eigenvectors with
    the smallest eigenvalues."""
    vals = eig.eigenvalues[group]
    vecs = eig.eigenvectors[group]
    d = vals.size
    if not 0 <= kappa < d:
        raise KappaOutOfRange(f"kappa={kappa} for a group of size {d}")
    out = [np.eye(d)[j] for j in range(d)]
    out += [vecs[:, r] / np.linalg.norm(vecs[:, r]) for r in range(kappa)]
    return out


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def hyperplane_distance(sample, normal, b, support):
    """l1 distance from ``sample`` to ``{xi : Gamma xi <= rho, normal.xi = b}``.

    Computed from the dual LP
    ``max (b - normal.s) y - (rho - Gamma s).z  s.t.  ||normal y - Gamma' z||_inf <= 1, z >= 0``
    (``y`` free because the target is a hyperplane).  Returns ``inf`` when the
    hyperplane misses the support (dual unbounded).
    """
    gamma, rho = support
    gamma = np.asarray(gamma, dtype=float)
    rho = np.asarray(rho, dtype=float)
    s = np.asarray(sample, dtype=float)
    normal = np.asarray(normal, dtype=float)
    d = s.size
    if normal.size != d or gamma.shape[1] != d:
        raise DimensionMismatch("sample, normal and support disagree in dimension")
    u = gamma.shape[0]
    # variables: [y, z_1..z_u]; minimise the negated objective
    c = -np.concatenate([[b - normal @ s], -(rho - gamma @ s)])
    block = np.hstack([normal[:, None], -gamma.T])
    A = np.vstack([block, -block])
    rhs = np.ones(2 * d)
    lb = np.concatenate([[-np.inf], np.zeros(u)])
    res = solve_lp(LinearProgram(c, A, rhs, lb=lb))
    if res.status == UNBOUNDED:
        return float("inf")
    if res.status != OPTIMAL:
        raise SolverFailure(f"distance LP is {res.status}")
    return max(0.0, -res.objective)


def _distances_to(points, normal, b, partition, group):
    box = partition.group_box(group)
    if box is not None:
        lo, hi = box
        return kernels.box_hyperplane_distance(np.ascontiguousarray(points), normal, float(b), lo, hi)
    support = (partition.gammas[group], partition.rhos[group])
    return np.array([hyperplane_distance(p, normal, b, support) for p in points])


def slab_distances(points, normal, lower, upper, partition, group):
    """Per-sample distance to the violation region of the slab.

    Samples on or outside a bounding hyperplane get 0; interior samples get
    the smaller of the distances to the two bounding hyperplanes.
    """
    points = np.asarray(points, dtype=float)
    proj = points @ normal
    inside = (proj > lower) & (proj < upper)
    d = np.zeros(points.shape[0])
    if inside.any():
        pts = points[inside]
        d_up = _distances_to(pts, normal, upper, partition, group)
        d_lo = _distances_to(pts, normal, lower, partition, group)
        d[inside] = np.minimum(d_up, d_lo)
    return d


def worst_case_violation_prob(distances, theta):
    """``min_{lam >= 0} lam*theta + mean(max(0, 1 - lam*d))``, clamped to [0, 1].

    ``inf`` distances drop out (their term is 0 for every lambda).
    """
    if theta < 0:
        raise ValueError("theta must be non-negative")
    return float(kernels.worst_case_prob(np.asarray(distances, dtype=float), float(theta)))


# ---------------------------------------------------------------------------
# slab tightening and set assembly
# ---------------------------------------------------------------------------

def _interval(t, anchor, lo, hi):
    return anchor - t * (anchor - lo), anchor + t * (hi - anchor)


def tighten_slab(samples_i, group, normal, partition, theta, budget, kind="axis", index=0):
    """Shrink ``[lower, upper]`` around the mean projection until the
    worst-case violation probability would exceed ``budget``.

    The interval follows ``lower(t) = a - t (a - L)``, ``upper(t) = a + t (U - a)``
    with ``[L, U]`` the support projection and ``a`` the mean sample
    projection; feasibility is monotone in ``t`` so a fixed dyadic bisection
    returns the smallest feasible grid point.
    """
    if not 0.0 < budget < 1.0:
        raise ValueError(f"budget must lie in (0, 1), got {budget}")
    if theta < 0:
        raise ValueError("theta must be non-negative")
    normal = np.asarray(normal, dtype=float)
    pts = np.asarray(samples_i, dtype=float)
    L, U = partition.support_range(group, normal)
    anchor = float(np.clip(np.mean(pts @ normal), L, U))

    def prob(t):
        lo, hi = _interval(t, anchor, L, U)
        return worst_case_violation_prob(slab_distances(pts, normal, lo, hi, partition, group), theta)

    p_full = prob(1.0)
    if p_full > budget:
        raise BudgetInfeasible(
            f"group {group} {kind} slab {index}: worst-case violation {p_full:.4g} exceeds "
            f"budget {budget:.4g} even on the whole support (theta={theta})",
            group=group, slab=index)
    t_lo, t_hi, p_hi = 0.0, 1.0, p_full
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (t_lo + t_hi)
        p = prob(mid)
        if p <= budget:
            t_hi, p_hi = mid, p
        else:
            t_lo = mid
    lo, hi = _interval(t_hi, anchor, L, U)
    return Slab(group, normal, float(lo), float(hi), kind, index, float(p_hi))


def build_xirob(samples, partition, kappas, theta, epsilon, eig=None):
    """Assemble the product of per-group slab intersections as ``G xi <= g``."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if theta < 0:
        raise ValueError("theta must be non-negative")
    kappas = list(kappas)
    if len(kappas) != len(partition.groups):
        raise DimensionMismatch("one kappa per group is required")
    for i, (k, grp) in enumerate(zip(kappas, partition.groups)):
        if not 0 <= k < len(grp):
            raise KappaOutOfRange(f"kappa[{i}]={k} for a group of size {len(grp)}")
    if samples.dim != partition.n_xi:
        raise DimensionMismatch("samples and partition disagree on the number of wind units")
    if eig is None and any(kappas):
        eig = eig_basis(samples, partition)

    n_dr = sum(k + len(grp) for k, grp in zip(kappas, partition.groups))
    budget = epsilon / n_dr
    n = partition.n_xi
    slabs, rows, rhs = [], [], []
    for i, (grp, k) in enumerate(zip(partition.groups, kappas)):
        pts = samples.group(grp)
        d = len(grp)
        if k:
            normals = select_normals(eig, i, k)
        else:
            normals = [np.eye(d)[j] for j in range(d)]
        for j, nrm in enumerate(normals):
            kind, idx = ("axis", j) if j < d else ("eigen", j - d)
            slab = tighten_slab(pts, i, nrm, partition, theta, budget, kind, idx)
            slabs.append(slab)
            full = np.zeros(n)
            full[list(grp)] = nrm
            rows += [full, -full]
            rhs += [slab.upper, -slab.lower]
    G = np.vstack(rows)
    g = np.asarray(rhs, dtype=float)
    rs = RobustSet(G, g, tuple(slabs), partition.groups, float(theta), float(epsilon),
                   kind="drpoly" if any(kappas) else "drbox")
    outside = np.flatnonzero(~rs.contains(samples.samples))
    rs.diagnostics = {
        "budget": budget,
        "achieved": [s.achieved for s in slabs],
        "union_bound": float(sum(s.achieved for s in slabs)),
        "samples_outside": outside.tolist(),
    }
    if outside.size:
        log.info("%d training sample(s) fall outside the robust set", outside.size)
    return rs


def recompute_union_bound(samples, partition, rs):
    """Independently recompute every slab's worst-case violation probability
    (fresh distances) and return ``(per_slab, total)``."""
    per = []
    for s in rs.slabs:
        pts = samples.group(partition.groups[s.group])
        d = slab_distances(pts, s.normal, s.lower, s.upper, partition, s.group)
        per.append(worst_case_violation_prob(d, rs.theta))
    return per, float(sum(per))
