"""Wind samples, correlation partitions and their support polyhedra."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (DimensionMismatch, NotSymmetric, ParseError, RejectionStall,
                     TooFewSamples, ValidationError)
from .lp import OPTIMAL, LinearProgram, solve_lp

log = logging.getLogger(__name__)

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class SampleSet:
    samples: np.ndarray          # N x n_xi, MW
    columns: tuple = ()          # CSV header names, e.g. "w_3"

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if arr.ndim != 2:
            raise DimensionMismatch("samples must be a 2-D array")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def group(self, idx):
        return self.samples[:, list(idx)]

    def check_box(self, lo, hi, tol=1e-9):
        """Raise if any sample leaves ``[lo, hi]``; the message lists offenders."""
        bad = np.flatnonzero(((self.samples < lo - tol) | (self.samples > hi + tol)).any(axis=1))
        if bad.size:
            shown = ", ".join(str(i) for i in bad[:20])
            more = "" if bad.size <= 20 else f" (+{bad.size - 20} more)"
            raise ValidationError("samples", f"{bad.size} sample(s) outside the support: {shown}{more}")
        return self


def wind_columns(case):
    return tuple(f"w_{w.bus}" for w in case.wind_units)


def write_samples_csv(path, samples):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(samples.columns)
        for row in samples.samples:
            writer.writerow([repr(float(v)) for v in row])


def read_samples_csv(path, case=None):
    """Read a samples CSV.  With ``case`` the columns are matched to the case's
    wind units and every sample is checked against the support box."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise ParseError(f"{path}: no such file") from exc
    if not rows:
        raise ParseError(f"{path}: empty file (header row required)")
    header = tuple(h.strip() for h in rows[0])
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    data = data.reshape(-1, len(header))
    if case is None:
        return SampleSet(data, header)
    expected = wind_columns(case)
    if sorted(header) != sorted(expected):
        raise ParseError(f"{path}: header {header} does not match wind units {expected}")
    order = [header.index(col) for col in expected]
    s = SampleSet(data[:, order], expected)
    lo, hi = case.support_box()
    return s.check_box(lo, hi)


# ---------------------------------------------------------------------------
# partition / support
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionSpec:
    groups: tuple                # tuple of tuples of wind indices
    gammas: tuple                # per group: support matrix
    rhos: tuple                  # per group: support rhs

    def __post_init__(self):
        flat = [i for g in self.groups for i in g]
        if len(flat) != len(set(flat)):
            raise ValidationError("partition.groups", "groups overlap")
        if sorted(flat) != list(range(len(flat))):
            raise ValidationError("partition.groups", "groups must cover wind indices 0..n-1")
        for i, (g, gam, rho) in enumerate(zip(self.groups, self.gammas, self.rhos)):
            if gam.shape != (rho.size, len(g)):
                raise DimensionMismatch(f"support of group {i} has shape {gam.shape}")

    @classmethod
    def from_box(cls, groups, lo, hi):
        groups = tuple(tuple(int(i) for i in g) for g in groups)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        gammas, rhos = [], []
        for g in groups:
            d = len(g)
            gammas.append(np.vstack([np.eye(d), -np.eye(d)]))
            rhos.append(np.concatenate([hi[list(g)], -lo[list(g)]]))
        return cls(groups, tuple(gammas), tuple(rhos))

    @classmethod
    def from_case(cls, case, groups=None):
        lo, hi = case.support_box()
        if groups is None:
            groups = [list(range(len(case.wind_units)))]
        return cls.from_box(groups, lo, hi)

    @property
    def n_xi(self):
        return sum(len(g) for g in self.groups)

    def group_box(self, i):
        """``(lo, hi)`` if the support of group ``i`` is an axis box, else None."""
        gam, rho = self.gammas[i], self.rhos[i]
        d = gam.shape[1]
        lo = np.full(d, -np.inf)
        hi = np.full(d, np.inf)
        for row, r in zip(gam, rho):
            nz = np.flatnonzero(row)
            if nz.size != 1:
                return None
            j = nz[0]
            if row[j] > 0:
                hi[j] = min(hi[j], r / row[j])
            else:
                lo[j] = max(lo[j], r / row[j])
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            return None
        return lo, hi

    def support_range(self, i, normal):
        """``(min, max)`` of ``normal . xi`` over the support of group ``i``."""
        normal = np.asarray(normal, dtype=float)
        box = self.group_box(i)
        if box is not None:
            lo, hi = box
            if (lo > hi).any():
                raise ValidationError(f"partition.support[{i}]", "empty support")
            return float(np.minimum(normal * lo, normal * hi).sum()), float(np.maximum(normal * lo, normal * hi).sum())
        out = []
        for sgn in (1.0, -1.0):
            res = solve_lp(LinearProgram(sgn * normal, self.gammas[i], self.rhos[i], lb=-np.inf))
            if res.status != OPTIMAL:
                raise ValidationError(f"partition.support[{i}]", f"support is {res.status}")
            out.append(sgn * res.objective)
        return out[0], out[1]

    def validate_bounded(self):
        for i, g in enumerate(self.groups):
            for j in range(len(g)):
                e = np.zeros(len(g))
                e[j] = 1.0
                lo, hi = self.support_range(i, e)
                if not lo <= hi:
                    raise ValidationError(f"partition.support[{i}]", "empty support")
        return self

    def full_polyhedron(self):
        """The product support as ``(Gamma, rho)`` in full xi coordinates."""
        n = self.n_xi
        rows, rhs = [], []
        for g, gam, rho in zip(self.groups, self.gammas, self.rhos):
            block = np.zeros((gam.shape[0], n))
            block[:, list(g)] = gam
            rows.append(block)
            rhs.append(rho)
        return np.vstack(rows), np.concatenate(rhs)


# ---------------------------------------------------------------------------
# covariance and eigen-decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigBasis:
    eigenvalues: tuple           # per group, ascending
    eigenvectors: tuple          # per group, columns are eigenvectors


def empirical_covariance(samples, group):
    x = samples.group(group)
    if x.shape[0] < 2:
        raise TooFewSamples(f"need at least 2 samples, got {x.shape[0]}")
    centred = x - x.mean(axis=0)
    return centred.T @ centred / x.shape[0]


def symmetric_eig(m):
    """Eigenvalues (ascending) and orthonormal eigenvectors via cyclic Jacobi.

    Each eigenvector's largest-magnitude entry is made positive so the output
    is deterministic.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetric(f"matrix of shape {m.shape} is not square")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > 1e-9 * scale:
        raise NotSymmetric("matrix is not symmetric")
    w, v, _ = kernels.jacobi_eig(0.5 * (m + m.T), JACOBI_TOL, JACOBI_MAX_SWEEPS)
    order = np.argsort(w, kind="stable")
    w, v = w[order], v[:, order]
    for j in range(v.shape[1]):
        if v[np.argmax(np.abs(v[:, j])), j] < 0:
            v[:, j] = -v[:, j]
    return w, v


def eig_basis(samples, partition):
    vals, vecs = [], []
    for g in partition.groups:
        w, v = symmetric_eig(empirical_covariance(samples, g))
        vals.append(w)
        vecs.append(v)
    return EigBasis(tuple(vals), tuple(vecs))


def project_samples(samples, group, normal):
    normal = np.asarray(normal, dtype=float)
    if normal.shape != (len(group),):
        raise DimensionMismatch(f"normal of length {normal.size} for a group of {len(group)}")
    return samples.group(group) @ normal


# ---------------------------------------------------------------------------
# truncated multivariate normal generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    mean: np.ndarray
    groups: tuple
    covariances: tuple           # parent-normal covariance per group
    lower: np.ndarray
    upper: np.ndarray
    columns: tuple = ()

    def to_dict(self):
        return {
            "mean": [float(v) for v in self.mean],
            "groups": [list(g) for g in self.groups],
            "covariances": [np.asarray(c).tolist() for c in self.covariances],
            "lower": [float(v) for v in self.lower],
            "upper": [float(v) for v in self.upper],
        }

    @classmethod
    def from_dict(cls, d, columns=()):
        return cls(
            mean=np.asarray(d["mean"], dtype=float),
            groups=tuple(tuple(g) for g in d["groups"]),
            covariances=tuple(np.asarray(c, dtype=float) for c in d["covariances"]),
            lower=np.asarray(d["lower"], dtype=float),
            upper=np.asarray(d["upper"], dtype=float),
            columns=tuple(columns),
        )


def default_generator(case=None, groups=((0, 1, 2), (3, 4, 5))):
    """Mean 100 MW, per-group covariance 20 on / 16 off the diagonal,
    truncated to [80, 120] MW."""
    n = sum(len(g) for g in groups)
    covs = tuple(np.full((len(g), len(g)), 16.0) + 4.0 * np.eye(len(g)) for g in groups)
    cols = wind_columns(case) if case is not None else tuple(f"w_{i}" for i in range(n))
    if case is not None:
        lo, hi = case.support_box()
    else:
        lo, hi = np.full(n, 80.0), np.full(n, 120.0)
    return GeneratorConfig(np.full(n, 100.0), tuple(tuple(g) for g in groups), covs, lo, hi, cols)


def _factor(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        if w.min() < -1e-9 * max(1.0, abs(w).max()):
            raise ValueError("covariance is not positive semi-definite")
        return v * np.sqrt(np.clip(w, 0.0, None))


def generate_samples(spec, n, seed, batch=1024, stall_window=200_000, min_rate=1e-4):
    """Draw ``n`` samples from the truncated normal by rejection.

    Groups are sampled independently (the truncation box factorises), each
    with its own Cholesky transform; a draw is kept only if the whole group
    vector lies in the box.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if (spec.lower > spec.upper).any():
        raise ValueError("truncation box is empty")
    rng = np.random.default_rng(seed)
    dim = spec.mean.size
    out = np.empty((n, dim))
    for g, cov in zip(spec.groups, spec.covariances):
        g = list(g)
        L = _factor(np.asarray(cov, dtype=float))
        mu, lo, hi = spec.mean[g], spec.lower[g], spec.upper[g]
        got = 0
        tried = 0
        accepted_in_window = 0
        chunks = []
        while got < n:
            z = rng.standard_normal((batch, len(g)))
            cand = mu + z @ L.T
            ok = ((cand >= lo) & (cand <= hi)).all(axis=1)
            chunks.append(cand[ok])
            got += int(ok.sum())
            tried += batch
            accepted_in_window += int(ok.sum())
            if tried >= stall_window:
                if accepted_in_window / tried < min_rate:
                    raise RejectionStall(f"acceptance rate {accepted_in_window / tried:.2e} for group {g}")
                tried = 0
                accepted_in_window = 0
        block = np.vstack(chunks)[:n] if chunks else np.empty((0, len(g)))
        out[:, g] = block
    cols = spec.columns or tuple(f"w_{i}" for i in range(dim))
    return SampleSet(out, cols)
