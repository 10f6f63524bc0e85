"""Monte Carlo violation estimates, method comparison and the radius sweep."""

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .compact import FAMILY_NAMES
from .drset import build_xirob
from .errors import DispatchError, DimensionMismatch
from .robust import solve_drpoly, solve_scenario
from .uncertainty import PartitionSpec, generate_samples

log = logging.getLogger(__name__)

DEFAULT_THETAS = (0.0001, 0.0005, 0.001, 0.005, 0.01, 0.05, 0.1)
DEFAULT_TOL = 1e-6
SWEEP_COLUMNS = ("method", "theta", "repeat", "cost", "violation_freq", "n_dr", "status")


@dataclass
class ViolationReport:
    n_validation: int
    n_violated: int
    family_counts: dict          # samples with at least one violated row of that family
    contingency_counts: dict     # violated (row, sample) pairs per contingency, largest first
    tol: float

    @property
    def violation_frequency(self):
        return self.n_violated / self.n_validation if self.n_validation else 0.0

    def to_dict(self, top=10):
        worst = dict(list(self.contingency_counts.items())[:top])
        return {"n_validation": self.n_validation, "n_violated": self.n_violated,
                "violation_frequency": self.violation_frequency,
                "family_counts": self.family_counts, "worst_contingencies": worst,
                "tol": self.tol}


def violation_frequency(problem, solution, validation, tol=DEFAULT_TOL):
    """Fraction of ``validation`` samples at which some uncertain row of
    ``problem`` exceeds ``tol`` for the dispatch in ``solution``."""
    xi = validation.samples if hasattr(validation, "samples") else np.atleast_2d(validation)
    xi = np.ascontiguousarray(xi, dtype=float)
    if xi.shape[0] == 0:
        raise ValueError("validation set is empty")
    if xi.shape[1] != problem.n_xi:
        raise DimensionMismatch(f"validation samples have {xi.shape[1]} columns, expected {problem.n_xi}")
    if tol < 0:
        raise ValueError("tol must be non-negative")
    x = solution.x if hasattr(solution, "x") else np.asarray(solution, dtype=float)
    offset, coef = problem.affine_in_xi(x)
    violated, fam_hits, row_hits = kernels.count_violations(
        np.ascontiguousarray(offset), np.ascontiguousarray(coef), xi, float(tol),
        problem.row_family.astype(np.int64), len(FAMILY_NAMES))
    per_cont = np.bincount(problem.row_contingency, weights=row_hits, minlength=len(problem.contingencies))
    order = np.argsort(-per_cont, kind="stable")
    cont_counts = {problem.contingencies[c].label: int(per_cont[c]) for c in order if per_cont[c] > 0}
    return ViolationReport(
        n_validation=int(xi.shape[0]), n_violated=int(violated.sum()),
        family_counts={name: int(n) for name, n in zip(FAMILY_NAMES, fam_hits)},
        contingency_counts=cont_counts, tol=float(tol))


# ---------------------------------------------------------------------------
# radius sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepCell:
    method: str
    theta: float
    repeat: int
    cost: float = float("nan")
    violation_freq: float = float("nan")
    n_dr: int = 0
    status: str = "ok"

    def row(self):
        return [self.method, self.theta, self.repeat, self.cost, self.violation_freq, self.n_dr, self.status]


@dataclass
class ParetoTable:
    method: str
    thetas: np.ndarray
    mean_cost: np.ndarray
    std_cost: np.ndarray
    mean_violation: np.ndarray
    std_violation: np.ndarray
    n_repeats: np.ndarray        # successful repeats per theta

    @classmethod
    def from_cells(cls, method, cells):
        mine = [c for c in cells if c.method == method]
        thetas = []
        for c in mine:
            if not any(_same(c.theta, t) for t in thetas):
                thetas.append(c.theta)
        thetas.sort(key=lambda t: (np.isnan(t), t))
        cols = {k: [] for k in ("mc", "sc", "mv", "sv", "n")}
        for t in thetas:
            ok = [c for c in mine if _same(c.theta, t) and c.status == "ok"]
            cost = np.array([c.cost for c in ok])
            viol = np.array([c.violation_freq for c in ok])
            cols["n"].append(len(ok))
            for key, arr in (("mc", cost), ("mv", viol)):
                cols[key].append(arr.mean() if arr.size else np.nan)
            for key, arr in (("sc", cost), ("sv", viol)):
                cols[key].append(arr.std(ddof=1) if arr.size > 1 else (0.0 if arr.size else np.nan))
        return cls(method, np.array(thetas, dtype=float), np.array(cols["mc"]), np.array(cols["sc"]),
                   np.array(cols["mv"]), np.array(cols["sv"]), np.array(cols["n"], dtype=int))

    def rows(self):
        return [[self.method, t, mc, sc, mv, sv, int(n)] for t, mc, sc, mv, sv, n in zip(
            self.thetas, self.mean_cost, self.std_cost, self.mean_violation, self.std_violation, self.n_repeats)]

    def successful(self):
        """Copy restricted to radii where at least one repeat succeeded."""
        keep = self.n_repeats > 0
        return ParetoTable(self.method, self.thetas[keep], self.mean_cost[keep], self.std_cost[keep],
                           self.mean_violation[keep], self.std_violation[keep], self.n_repeats[keep])


def _same(a, b):
    return (np.isnan(a) and np.isnan(b)) or a == b


@dataclass
class SweepResult:
    cells: list
    tables: dict = field(default_factory=dict)

    def table(self, method):
        return self.tables[method]


def sweep_seeds(seed, repeats):
    """Validation stream (index 0) and one training stream per repeat (odd
    indices), all children of one ``SeedSequence``."""
    children = np.random.SeedSequence(seed).spawn(2 * repeats + 1)
    return children[0], [children[2 * r + 1] for r in range(repeats)]


def _run_repeat(args):
    (problem, gen_spec, partition, repeat, train_seed, validation, thetas, kappas,
     epsilon, n_train, methods, tol, formulation) = args
    train = generate_samples(gen_spec, n_train, train_seed)
    box_kappas = [0] * len(partition.groups)
    cells = []
    for method in methods:
        if method == "scenario":
            cell = SweepCell("scenario", float("nan"), repeat)
            try:
                sol = solve_scenario(problem, train)
                cell.cost = sol.cost
                cell.violation_freq = violation_frequency(problem, sol, validation, tol).violation_frequency
            except DispatchError as exc:
                cell.status = type(exc).__name__
            cells.append(cell)
            continue
        kap = kappas if method == "drpoly" else box_kappas
        for theta in thetas:
            cell = SweepCell(method, float(theta), repeat)
            try:
                rset = build_xirob(train, partition, kap, theta, epsilon)
                cell.n_dr = rset.n_dr
                sol = solve_drpoly(problem, rset, method=method, formulation=formulation)
                cell.cost = sol.cost
                cell.violation_freq = violation_frequency(problem, sol, validation, tol).violation_frequency
            except DispatchError as exc:
                cell.status = type(exc).__name__
                log.info("%s theta=%g repeat=%d failed: %s", method, theta, repeat, exc)
            cells.append(cell)
    return cells


def pareto_sweep(problem, gen_spec, theta_list=DEFAULT_THETAS, kappas=(2, 2), epsilon=0.05, repeats=5,
                 seed=0, n_train=50, n_validation=10_000, methods=("drpoly", "drbox", "scenario"),
                 partition=None, tol=DEFAULT_TOL, jobs=1, formulation="auto"):
    """Per repeat: draw a training set, build and solve every method/radius on
    it (matched seeds), score everything on one common held-out set.

    Failed cells (e.g. radii too large for the budget) are recorded with their
    exception name as status and excluded from the means.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if partition is None:
        partition = PartitionSpec.from_box(gen_spec.groups, gen_spec.lower, gen_spec.upper)
    val_seed, train_seeds = sweep_seeds(seed, repeats)
    validation = generate_samples(gen_spec, n_validation, val_seed)
    thetas = sorted(float(t) for t in theta_list)
    jobs_args = [(problem, gen_spec, partition, r, train_seeds[r], validation, thetas, list(kappas),
                  epsilon, n_train, tuple(methods), tol, formulation) for r in range(repeats)]
    if jobs > 1 and repeats > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_repeat, jobs_args))
    else:
        chunks = [_run_repeat(a) for a in jobs_args]
    cells = [c for chunk in chunks for c in chunk]
    order = {m: i for i, m in enumerate(methods)}
    cells.sort(key=lambda c: (c.repeat, 0.0 if np.isnan(c.theta) else c.theta, order[c.method]))
    tables = {m: ParetoTable.from_cells(m, cells) for m in methods}
    return SweepResult(cells, tables)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _csv(header, rows, comment=None):
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def sweep_csv(result, comment=None):
    return _csv(SWEEP_COLUMNS, [c.row() for c in result.cells], comment)


def summary_csv(result, comment=None):
    header = ("method", "theta", "mean_cost", "std_cost", "mean_violation", "std_violation", "n_repeats")
    rows = [r for t in result.tables.values() for r in t.rows()]
    return _csv(header, rows, comment)


def compare_methods(reports, comment=None):
    """CSV of ``(method, cost, violation report or frequency)`` entries,
    sorted by cost with ties kept in input order."""
    rows = []
    for method, cost, rep in reports:
        freq = rep.violation_frequency if hasattr(rep, "violation_frequency") else float(rep)
        n_val = rep.n_validation if hasattr(rep, "n_validation") else ""
        rows.append([method, float(cost), float(freq), n_val])
    rows.sort(key=lambda r: r[1])
    return _csv(("method", "cost", "violation_freq", "n_validation"), rows, comment)


def monotone_trend(values, stds=None, increasing=True, allowed_inversions=0, rtol=1e-9):
    """Whether ``values`` is monotone up to ``allowed_inversions`` adjacent
    inversions, each no larger than one standard deviation when ``stds`` is
    given.  NaN entries (failed radii) are skipped."""
    v = np.asarray(values, dtype=float)
    s = np.zeros_like(v) if stds is None else np.asarray(stds, dtype=float)
    keep = ~np.isnan(v)
    v, s = v[keep], s[keep]
    sign = 1.0 if increasing else -1.0
    inversions = 0
    for a in range(v.size - 1):
        step = sign * (v[a + 1] - v[a])
        if step >= -rtol * max(1.0, abs(v[a])):
            continue
        if stds is None or -step > max(s[a], s[a + 1]):
            return False
        inversions += 1
    return inversions <= allowed_inversions
