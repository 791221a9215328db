"""Relaxed calibration of survey weights.

The calibrated weights minimise

    F(u) = sum_k p_k delta_k^2 + R |u - w|^2 + (1 - R) |u - (N/n) 1|^2,

with delta = X^T u - t, which is the quadratic u^T H u - 2 u^T s + D with
H = I + X P X^T and s = R w + (1 - R)(N/n) 1 + X P t.  The minimiser is
H^{-1} s, applied matrix-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import RankDeficientError
from .lowrank import HApplier, dependent_columns


@dataclass(frozen=True)
class StandardizedDesign:
    """Sample design matrix with a leading ones column and standardized targets.

    ``means`` and ``sds`` describe the raw auxiliary columns (sds use the
    denominator n) and are needed to map targets back to the raw scale.
    """

    X: np.ndarray
    t: np.ndarray
    n_pop: float
    means: np.ndarray
    sds: np.ndarray
    names: tuple = ()

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def K(self):
        return self.X.shape[1] - 1

    def raw_targets(self, t=None):
        t = self.t if t is None else np.asarray(t, dtype=float)
        return t[1:] * self.sds + self.n_pop * self.means

    def validate(self):
        n = self.n
        X = self.X
        if not np.allclose(X[:, 0], 1.0):
            raise ValueError("first design column must be all ones")
        if np.any(self.sds <= 0):
            raise ValueError("standard deviations must be positive")
        cols = X[:, 1:]
        if np.any(np.abs(cols.sum(axis=0)) >= 1e-9 * n):
            raise ValueError("standardized columns must have zero sample mean")
        if np.any(np.abs((cols * cols).sum(axis=0) - n) >= 1e-7 * n):
            raise ValueError("standardized columns must have x^T x = n")
        dep = dependent_columns(X)
        if dep:
            raise RankDeficientError(
                "auxiliary columns are linearly dependent: "
                + ", ".join(self.column_name(j) for j in dep),
                [self.column_name(j) for j in dep],
            )

    def column_name(self, j):
        if self.names and len(self.names) == self.X.shape[1]:
            return self.names[j]
        return f"x{j}"


@dataclass(frozen=True)
class Priorities:
    p: np.ndarray
    R: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "p", p)
        if not 0.0 <= self.R <= 1.0:
            raise ValueError(f"R must lie in [0, 1], got {self.R}")
        if p.ndim == 1 and np.any(p < 0):
            raise ValueError("priorities must be nonnegative")
        if not np.all(np.isfinite(p)):
            raise ValueError("priorities must be finite")

    @property
    def matrix(self):
        return np.diag(self.p) if self.p.ndim == 1 else self.p


@dataclass
class CalibrationResult:
    u: np.ndarray
    deltas: np.ndarray
    objective: float
    h: HApplier = field(repr=False)
    s: np.ndarray = field(repr=False)
    estimate_cache: dict = field(default_factory=dict)

    @property
    def negative_weights(self):
        return int(np.count_nonzero(self.u < 0))


def standardize(raw_columns, raw_targets, n_pop, names=None):
    """Standardize raw auxiliary columns and transform their population totals.

    Column k becomes (x - mean)/sd with sd using the denominator n, and its
    total t becomes (t - N mean)/sd.  A ones column with target N is put first.
    """
    Xr = np.asarray(raw_columns, dtype=float)
    if Xr.ndim == 1:
        Xr = Xr[:, None]
    traw = np.atleast_1d(np.asarray(raw_targets, dtype=float))
    if traw.shape[0] != Xr.shape[1]:
        raise ValueError(f"{traw.shape[0]} targets given for {Xr.shape[1]} columns")
    if not n_pop > 0:
        raise ValueError(f"population size must be positive, got {n_pop}")
    if not (np.all(np.isfinite(Xr)) and np.all(np.isfinite(traw))):
        raise ValueError("auxiliary data and targets must be finite")
    n, K = Xr.shape
    if names is None:
        names = [f"x{k}" for k in range(1, K + 1)]
    names = ("intercept", *names)
    means = Xr.mean(axis=0)
    centred = Xr - means
    sds = np.sqrt((centred * centred).mean(axis=0))
    for k in range(K):
        if not sds[k] > 1e-12 * max(1.0, abs(means[k])):
            raise ValueError(f"column {names[k + 1]!r} has zero sample variance")
    X = np.empty((n, K + 1))
    X[:, 0] = 1.0
    X[:, 1:] = centred / sds
    t = np.empty(K + 1)
    t[0] = n_pop
    t[1:] = (traw - n_pop * means) / sds
    design = StandardizedDesign(X=X, t=t, n_pop=float(n_pop), means=means, sds=sds, names=names)
    design.validate()
    return design


def calibration_rhs(design, w, prio):
    w = np.asarray(w, dtype=float)
    n = design.n
    return (prio.R * w + (1.0 - prio.R) * (design.n_pop / n)
            + design.X @ (prio.matrix @ design.t))


def calibrate_weights(design, w, prio, h=None):
    w = np.asarray(w, dtype=float)
    if w.shape != (design.n,):
        raise ValueError(f"weights have shape {w.shape}, expected ({design.n},)")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("design weights must be finite and positive")
    if h is None:
        h = HApplier.build(design.X, prio.p, check_rank=False)
    s = calibration_rhs(design, w, prio)
    u = h.solve(s)
    deltas = discrepancies(design, u)
    return CalibrationResult(
        u=u, deltas=deltas, objective=objective_value(design, w, prio, u), h=h, s=s
    )


def objective_value(design, w, prio, u):
    """F(u) evaluated term by term from the discrepancies."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if u.shape != w.shape or u.shape[0] != design.n:
        raise ValueError("u, w and the design must have matching lengths")
    d = discrepancies(design, u)
    P = prio.p
    penalty = float(P @ (d * d)) if P.ndim == 1 else float(d @ P @ d)
    mean_weight = design.n_pop / design.n
    return (penalty + prio.R * float((u - w) @ (u - w))
            + (1.0 - prio.R) * float((u - mean_weight) @ (u - mean_weight)))


def expanded_objective(design, w, prio, u, h=None):
    """The same F as u^T H u - 2 u^T s + D."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if h is None:
        h = HApplier.build(design.X, prio.p, check_rank=False)
    s = calibration_rhs(design, w, prio)
    t = design.t
    D = (float(t @ prio.matrix @ t) + prio.R * float(w @ w)
         + (1.0 - prio.R) * design.n_pop ** 2 / design.n)
    return float(u @ h.apply(u)) - 2.0 * float(u @ s) + D


def discrepancies(design, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (design.n,):
        raise ValueError(f"weights have shape {u.shape}, expected ({design.n},)")
    return design.X.T @ u - design.t


def estimate_total(u, y):
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape:
        raise ValueError("weights and outcomes must have equal length")
    return float(u @ y)


def transform_design(design, prio, E):
    """Re-express the design in the basis X E.

    Returns the transformed design (X E, E^T t) and priorities with the
    full matrix E^{-1} P E^{-T}; the calibrated weights are unchanged.
    """
    E = np.asarray(E, dtype=float)
    k1 = design.X.shape[1]
    if E.shape != (k1, k1):
        raise ValueError(f"E must be {k1}x{k1}, got {E.shape}")
    if not np.isfinite(cond := np.linalg.cond(E)) or cond > 1e12:
        raise ValueError(f"E is singular or nearly so (condition number {cond:.3g})")
    Einv = np.linalg.inv(E)
    PE = Einv @ prio.matrix @ Einv.T
    PE = 0.5 * (PE + PE.T)
    new = replace(design, X=design.X @ E, t=E.T @ design.t)
    return new, Priorities(p=PE, R=prio.R)
