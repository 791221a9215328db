"""Matrix-free kernels for H = I + X P X^T and the shifted rank-2 matrix.

Nothing in here allocates an n x n array.  H^{-1} is applied through the
symmetric Woodbury identity

    H^{-1} v = v - X L (I + L^T X^T X L)^{-1} L^T X^T v,    P = L L^T,

so a zero priority never needs to be inverted, and the shifted matrix
lambda2 I + Q, with Q = u c^T + c u^T, is inverted in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DegenerateInputError, RankDeficientError, SingularShiftError

RANK_TOL = 1e-10
COLLINEAR_TOL = 1e-12
SHIFT_GUARD = 1e-8
E_GUARD = 1e-14


def priority_root(P):
    """Return L with L L^T = P for a priority vector or a symmetric PSD matrix."""
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise ValueError("priorities must be finite and nonnegative")
        return np.diag(np.sqrt(P))
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"priority matrix must be square, got shape {P.shape}")
    if not np.allclose(P, P.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(P).max())):
        raise ValueError("priority matrix must be symmetric")
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    if w.min() < -1e-10 * max(1.0, abs(w.max())):
        raise ValueError("priority matrix must be positive semidefinite")
    return V * np.sqrt(np.clip(w, 0.0, None))


def dependent_columns(X, tol=RANK_TOL):
    """Indexes of columns involved in a (near) linear dependence of X.

    Empty when X has full column rank.
    """
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        return [int(j) for j in np.flatnonzero(norms == 0)]
    _, s, Vt = np.linalg.svd(X / norms, full_matrices=False)
    small = s <= tol * s[0]
    if not small.any():
        return []
    null = Vt[small]
    weight = np.abs(null).max(axis=0)
    return [int(j) for j in np.flatnonzero(weight > 1e-6)]


@dataclass(frozen=True)
class HApplier:
    """Applies H = I + X P X^T and its inverse in O(nK)."""

    X: np.ndarray
    root: np.ndarray
    core: tuple

    @classmethod
    def build(cls, X, P, check_rank=True):
        X = np.array(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        L = priority_root(P)
        if L.shape[0] != X.shape[1]:
            raise ValueError(
                f"priorities have {L.shape[0]} entries, X has {X.shape[1]} columns"
            )
        if check_rank:
            cols = dependent_columns(X)
            if cols:
                raise RankDeficientError(
                    f"design matrix is rank deficient in columns {cols}", cols
                )
        XL = X @ L
        small = np.eye(L.shape[1]) + XL.T @ XL
        try:
            core = linalg.cho_factor(small, lower=True)
        except linalg.LinAlgError as exc:
            raise RankDeficientError(
                "small core factorization failed", dependent_columns(X)
            ) from exc
        X.setflags(write=False)
        return cls(X=X, root=L, core=core)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def P(self):
        return self.root @ self.root.T

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError(f"vector of length {v.shape[0]} does not match n={self.n}")
        return v

    def apply(self, v):
        v = self._check(v)
        XL = self.X @ self.root
        return v + XL @ (XL.T @ v)

    def solve(self, v):
        v = self._check(v)
        XL = self.X @ self.root
        return v - XL @ linalg.cho_solve(self.core, XL.T @ v)

    def quad_inv(self, v):
        """v^T H^{-1} v."""
        return float(v @ self.solve(v))


def h_inv_apply(h: HApplier, v):
    return h.solve(v)


def q_eigenpairs(u, c):
    """Nonzero eigenpairs of Q = u c^T + c u^T, largest eigenvalue first."""
    u = np.asarray(u, dtype=float)
    c = np.asarray(c, dtype=float)
    if u.shape != c.shape:
        raise ValueError("u and c must have the same length")
    uu = float(u @ u)
    cc = float(c @ c)
    cu = float(c @ u)
    if uu == 0.0 or cc == 0.0:
        raise DegenerateInputError("u and c must both be nonzero")
    root = np.sqrt(uu * cc)
    if abs(cu) / root >= 1.0 - COLLINEAR_TOL:
        raise DegenerateInputError("c is a scalar multiple of u (collinear input)")
    pairs = []
    for sign in (1.0, -1.0):
        vec = c * np.sqrt(uu) + sign * u * np.sqrt(cc)
        pairs.append((cu + sign * root, vec / np.linalg.norm(vec)))
    return pairs


def q_apply(u, c, v):
    return np.multiply.outer(u, c @ v) + np.multiply.outer(c, u @ v)


def singular_shifts(u, c):
    """The shifts 0, -e1, -e2 at which lambda2 I + Q is singular."""
    uu, cc, cu = float(u @ u), float(c @ c), float(c @ u)
    root = np.sqrt(uu * cc)
    return (0.0, -(cu + root), -(cu - root))


@dataclass(frozen=True)
class RankTwoResolvent:
    """Closed-form (lambda2 I + u c^T + c u^T)^{-1}.

    R^{-1} = I/lambda2 + A c u^T + B u c^T - C c c^T - D u u^T
    with A = B = (lambda2 + c'u)/E, C = u'u/E, D = c'c/E and
    E = lambda2 (c'c u'u - (lambda2 + c'u)^2).
    """

    lambda2: float
    u: np.ndarray
    c: np.ndarray
    A: float
    B: float
    C: float
    D: float
    E: float

    @classmethod
    def build(cls, u, c, lambda2):
        u = np.asarray(u, dtype=float)
        c = np.asarray(c, dtype=float)
        lam = float(lambda2)
        for s in singular_shifts(u, c):
            if abs(lam - s) <= SHIFT_GUARD * (1.0 + abs(s)):
                raise SingularShiftError(f"lambda2={lam!r} is within guard of singular shift {s!r}")
        uu, cc, cu = float(u @ u), float(c @ c), float(c @ u)
        E = lam * (cc * uu - (lam + cu) ** 2)
        if abs(E) <= E_GUARD * max(1.0, lam * lam * uu * cc):
            raise SingularShiftError(f"lambda2={lam!r} makes the resolvent singular (E={E!r})")
        a = (lam + cu) / E
        return cls(lambda2=lam, u=u, c=c, A=a, B=a, C=uu / E, D=cc / E, E=E)

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        u, c = self.u, self.c
        uv = u @ v
        cv = c @ v
        if v.ndim == 1:
            return (v / self.lambda2 + self.A * c * uv + self.B * u * cv
                    - self.C * c * cv - self.D * u * uv)
        return (v / self.lambda2 + self.A * np.outer(c, uv) + self.B * np.outer(u, cv)
                - self.C * np.outer(c, cv) - self.D * np.outer(u, uv))

    def shifted_apply(self, v):
        """(lambda2 I + Q) v, the forward map."""
        return self.lambda2 * np.asarray(v, dtype=float) + q_apply(self.u, self.c, v)


def resolvent_apply(r: RankTwoResolvent, v):
    return r.apply(v)
