"""Extreme plausible new auxiliary variable and the change it forces on the estimate.

Adding a standardized variable x with target t and priority p to the
calibration changes the weights by a rank-one update and the estimate by

    dtheta = -p delta x'c / (1 + p x'H^{-1}x),   c = H^{-1} y,  delta = x'u - t.

The variable that maximises |delta x'c| under x'x = n and either X'x = 0
(orthogonal mode) or 1'x = 0 (centered mode) solves

    x = t [I - R^{-1} G (G'R^{-1}G)^{-1} G'] R^{-1} c,   R = lambda2 I + u c' + c u',

with G = X or G = 1, and lambda2 a root of log(x'x) - log(n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, NoRootError, SingularShiftError
from .lowrank import RankTwoResolvent, q_apply, q_eigenpairs, singular_shifts

ORTHOGONAL = "orthogonal"
CENTERED = "centered"
DELTA_ORTHOGONAL = "delta_bounded_orthogonal"
DELTA_CENTERED = "delta_bounded_centered"
MODES = (ORTHOGONAL, CENTERED, DELTA_ORTHOGONAL, DELTA_CENTERED)


@dataclass(frozen=True)
class SensitivityConfig:
    p_new: float
    t_max: float
    t_grid_size: int = 50
    mode: str = ORTHOGONAL
    delta_bound: float | None = None
    lambda_scan: int = 512
    root_tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        if self.p_new < 0:
            raise ValueError("p_new must be nonnegative")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.t_grid_size < 2:
            raise ValueError("t_grid_size must be at least 2")
        if not self.root_tol > 0:
            raise ValueError("root_tol must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode in (DELTA_ORTHOGONAL, DELTA_CENTERED) and not (
            self.delta_bound is not None and self.delta_bound > 0
        ):
            raise ValueError("delta-bounded modes need a positive delta_bound")
        if self.lambda_scan < 4:
            raise ValueError("lambda_scan must be at least 4")


@dataclass(frozen=True)
class SensitivityContext:
    """Everything that stays fixed for one outcome: u, c = H^{-1}y, Q's spectrum."""

    u: np.ndarray
    c: np.ndarray
    y: np.ndarray
    X: np.ndarray
    h: object
    eigen: tuple

    @classmethod
    def build(cls, design, calib, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (design.n,):
            raise ValueError(f"outcome has shape {y.shape}, expected ({design.n},)")
        c = calib.h.solve(y)
        pairs = q_eigenpairs(calib.u, c)
        return cls(u=calib.u, c=c, y=y, X=design.X, h=calib.h,
                   eigen=(pairs[0][0], pairs[1][0]))

    @property
    def n(self):
        return self.X.shape[0]

    def constraints(self, mode):
        if mode in (ORTHOGONAL, DELTA_ORTHOGONAL):
            return self.X
        if mode in (CENTERED, DELTA_CENTERED):
            return np.ones((self.n, 1))
        raise ValueError(f"unknown mode {mode!r}")

    def singular_points(self):
        return tuple(sorted(singular_shifts(self.u, self.c)))


@dataclass
class RootInfo:
    lambda2: float
    norm2: float
    iterations: int
    converged: bool


@dataclass
class ExtremeVariable:
    x: np.ndarray
    lambda2: float
    t_new: float
    delta_new: float
    delta_theta_exact: float
    delta_theta_approx: float
    objective: float
    mode: str
    all_roots: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)


# -- re-calibration -----------------------------------------------------------

def recalibrate(ctx, x_new, t_new, p_new):
    """Weights after calibrating on (X, x_new) as well, via Sherman-Morrison."""
    x_new = _vec(ctx, x_new)
    hx = ctx.h.solve(x_new)
    delta = float(x_new @ ctx.u) - t_new
    return ctx.u - (p_new * delta / (1.0 + p_new * float(x_new @ hx))) * hx


def delta_theta_exact(ctx, x_new, t_new, p_new):
    x_new = _vec(ctx, x_new)
    delta = float(x_new @ ctx.u) - t_new
    denom = 1.0 + p_new * ctx.h.quad_inv(x_new)
    return -p_new * delta * float(x_new @ ctx.c) / denom


def eq2_objective(ctx, x, t_new):
    """-delta x'c, the quantity whose extremes are sought."""
    return -(float(x @ ctx.u) - t_new) * float(x @ ctx.c)


def delta_theta_approx(ctx, t_new, p_new, zc, zu=None):
    """-p t^2 (u'Zc - 1) c'Zc from the vectors Zc (and optionally Zu).

    Z is symmetric, so u'Zc = (Zu)'c; Zu is used when supplied.
    """
    zc = np.asarray(zc, dtype=float)
    uzc = float(ctx.c @ zu) if zu is not None else float(ctx.u @ zc)
    return -p_new * t_new ** 2 * (uzc - 1.0) * float(ctx.c @ zc)


# -- candidate construction ---------------------------------------------------

def candidate_x(ctx, t_new, lambda2, mode=ORTHOGONAL):
    """x = t Z c at a fixed lambda2, with R^{-1} applied in closed form."""
    if t_new == 0:
        raise DegenerateInputError("t_new = 0 gives the zero vector, which cannot be normalized")
    r = RankTwoResolvent.build(ctx.u, ctx.c, lambda2)
    G = ctx.constraints(mode)
    ric = r.apply(ctx.c)
    rig = r.apply(G)
    inner = G.T @ rig
    try:
        a = np.linalg.solve(inner, G.T @ ric)
    except np.linalg.LinAlgError as exc:
        raise DegenerateInputError(f"constraint system is singular at lambda2={lambda2!r}") from exc
    return t_new * (ric - rig @ a)


def z_vectors(ctx, lambda2, mode=ORTHOGONAL):
    """Return (Zc, Zu) at lambda2."""
    r = RankTwoResolvent.build(ctx.u, ctx.c, lambda2)
    G = ctx.constraints(mode)
    rig = r.apply(G)
    solve = np.linalg.solve(G.T @ rig, G.T)
    out = []
    for v in (ctx.c, ctx.u):
        rv = r.apply(v)
        out.append(rv - rig @ (solve @ rv))
    return out[0], out[1]


def stationarity_residual(ctx, x, t_new, lambda2, mode=ORTHOGONAL):
    """||-Qx + t c + G lambda1 - lambda2 x|| with lambda1 from its closed form."""
    r = RankTwoResolvent.build(ctx.u, ctx.c, lambda2)
    G = ctx.constraints(mode)
    rig = r.apply(G)
    lam1 = -t_new * np.linalg.solve(G.T @ rig, G.T @ r.apply(ctx.c))
    res = -q_apply(ctx.u, ctx.c, x) + t_new * ctx.c + G @ lam1 - lambda2 * x
    return float(np.linalg.norm(res))


class _NormScan:
    """x'x as a function of lambda2 without touching n-vectors.

    With u' and c' the projections of u and c off the constraint columns,
    every candidate equals t (b'u' - s c') / (a'b' - s^2), s = lambda2 + m',
    a' = u'u', b' = c'c', m' = c'u'.  The norm is then a rational function
    whose only poles are the shifts -m' +- sqrt(a'b') of the projected Q.
    """

    def __init__(self, ctx, mode):
        G = ctx.constraints(mode)
        coef = np.linalg.solve(G.T @ G, G.T @ np.column_stack([ctx.u, ctx.c]))
        proj = np.column_stack([ctx.u, ctx.c]) - G @ coef
        up, cp = proj[:, 0], proj[:, 1]
        self.a = float(up @ up)
        self.b = float(cp @ cp)
        self.m = float(cp @ up)

    def poles(self):
        root = math.sqrt(self.a * self.b)
        return (-self.m - root, -self.m + root)

    def norm2(self, lambdas, t_new):
        s = np.asarray(lambdas, dtype=float) + self.m
        ab = self.a * self.b
        with np.errstate(all="ignore"):
            return t_new ** 2 * self.b * (ab - 2.0 * s * self.m + s * s) / (ab - s * s) ** 2


def _scan_points(ctx, scan, t_new, per_side):
    """Scan points on every interval cut by 0, -e1, -e2 and the projected poles."""
    cuts = sorted(set(ctx.singular_points()) | set(scan.poles()))
    spread = max(abs(v) for v in cuts) or 1.0
    far = 1e3 * max(abs(t_new) * math.sqrt(scan.b) / math.sqrt(ctx.n), spread, 1.0)
    near = 1e-12 * max(spread, 1.0)
    intervals = []
    steps = np.geomspace(near, far, per_side)
    intervals.append(cuts[0] - steps[::-1])
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        width = hi - lo
        if width <= 1e-14 * spread:
            continue
        d = np.geomspace(1e-12 * width, 0.5 * width, per_side)
        intervals.append(np.concatenate([lo + d, (hi - d)[::-1]]))
    intervals.append(cuts[-1] + steps)
    return intervals


def _log_gap(ctx, t_new, mode):
    logn = math.log(ctx.n)

    def g(lam):
        try:
            x = candidate_x(ctx, t_new, lam, mode)
        except (SingularShiftError, DegenerateInputError):
            return math.nan
        xx = float(x @ x)
        return math.log(xx) - logn if xx > 0 else -math.inf

    return g


def bracketed_root(f, a, b, fa, fb, tol, maxit=200):
    """Safeguarded secant (Illinois regula falsi with bisection fallback).

    Returns (root, f(root), iterations, converged).
    """
    if fa * fb > 0:
        raise ValueError("root is not bracketed")
    x, fx = (a, fa) if abs(fa) < abs(fb) else (b, fb)
    side = 0
    stall = 0
    it = 0
    while it < maxit:
        if abs(fx) < tol:
            return x, fx, it, True
        width = abs(b - a)
        x = b - fb * (b - a) / (fb - fa)
        if stall >= 2 or not (min(a, b) < x < max(a, b)):
            x = 0.5 * (a + b)
            stall = 0
        fx = f(x)
        it += 1
        if not math.isfinite(fx):
            x = 0.5 * (a + b)
            fx = f(x)
            if not math.isfinite(fx):
                break
        if fx * fb > 0:
            b, fb = x, fx
            if side == -1:
                fa *= 0.5
            side = -1
        else:
            a, fa = x, fx
            if side == 1:
                fb *= 0.5
            side = 1
        stall = stall + 1 if abs(b - a) > 0.5 * width else 0
        if abs(b - a) <= 4e-16 * max(abs(a), abs(b)):
            break
    return x, fx, it, abs(fx) < tol


def secant(f, x0, x1, tol, maxit=100):
    """Plain secant iteration from two starting values.

    Returns (root, iterations, converged); used to compare the behaviour of
    the norm equation on the raw and the log scale.
    """
    f0, f1 = f(x0), f(x1)
    for it in range(1, maxit + 1):
        if not (math.isfinite(f0) and math.isfinite(f1)) or f1 == f0:
            return x1, it, False
        x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
        x0, f0 = x1, f1
        x1, f1 = x2, f(x2)
        if math.isfinite(f1) and abs(f1) < tol:
            return x1, it, True
    return x1, maxit, False


def solve_lambda2(ctx, t_new, mode=ORTHOGONAL, cfg=None):
    """All roots of log(x'x) - log(n) in lambda2, away from the singular shifts."""
    if t_new == 0:
        raise DegenerateInputError("t_new must be nonzero")
    scan_n = cfg.lambda_scan if cfg is not None else 512
    tol = cfg.root_tol if cfg is not None else 1e-10
    maxit = cfg.max_iter if cfg is not None else 200
    scan = _NormScan(ctx, mode)
    logn = math.log(ctx.n)
    g = _log_gap(ctx, t_new, mode)
    roots = []
    trace = []
    for pts in _scan_points(ctx, scan, t_new, scan_n):
        with np.errstate(all="ignore"):
            vals = np.log(scan.norm2(pts, t_new)) - logn
        trace.append((float(pts[0]), float(pts[-1]), int(np.isfinite(vals).sum())))
        good = np.isfinite(vals)
        idx = np.flatnonzero(good[:-1] & good[1:] & (np.sign(vals[:-1]) != np.sign(vals[1:])))
        for i in idx:
            a, b = float(pts[i]), float(pts[i + 1])
            fa, fb = g(a), g(b)
            if not (math.isfinite(fa) and math.isfinite(fb)) or fa * fb > 0:
                continue
            lam, glam, its, conv = bracketed_root(g, a, b, fa, fb, tol, maxit)
            if not conv:
                continue
            x = candidate_x(ctx, t_new, lam, mode)
            roots.append(RootInfo(lambda2=lam, norm2=float(x @ x), iterations=its, converged=conv))
    if not roots:
        raise NoRootError(f"no root of the norm equation found (t={t_new}, mode={mode})", trace)
    return roots


def extreme_variable(ctx, t_new, cfg, mode=None):
    """The stationary point giving the largest |dtheta| at target t_new."""
    mode = mode or cfg.mode
    if mode not in (ORTHOGONAL, CENTERED):
        raise ValueError(f"extreme_variable handles orthogonal/centered modes, not {mode!r}")
    roots = solve_lambda2(ctx, t_new, mode, cfg)
    best = None
    all_roots = []
    for root in roots:
        x = candidate_x(ctx, t_new, root.lambda2, mode)
        obj = eq2_objective(ctx, x, t_new)
        dth = delta_theta_exact(ctx, x, t_new, cfg.p_new)
        all_roots.append((root.lambda2, obj))
        # at p_new = 0 every change vanishes; rank by the p -> 0 limit |dtheta|/p
        size = abs(dth) if cfg.p_new > 0 else abs(obj)
        key = (size, obj > 0, -abs(root.lambda2))
        if best is None or _better(key, best[0]):
            best = (key, root, x, obj, dth)
    _, root, x, obj, dth = best
    zc, zu = x / t_new, None
    diag = {
        "unexplored_shifts": ctx.singular_points(),
        "constraint_residual": float(np.abs(ctx.constraints(mode).T @ x).max()),
        "stationarity_residual": stationarity_residual(ctx, x, t_new, root.lambda2, mode),
    }
    return ExtremeVariable(
        x=x, lambda2=root.lambda2, t_new=t_new, delta_new=float(x @ ctx.u) - t_new,
        delta_theta_exact=dth,
        delta_theta_approx=delta_theta_approx(ctx, t_new, cfg.p_new, zc, zu),
        objective=obj, mode=mode, all_roots=all_roots,
        iterations=root.iterations, converged=root.converged, diagnostics=diag,
    )


def _better(key, other):
    # ties in |dtheta| go to the positive objective, then the smaller |lambda2|
    if key[0] > other[0] * (1 + 1e-9):
        return True
    if key[0] < other[0] * (1 - 1e-9):
        return False
    return key[1:] > other[1:]


@dataclass
class SweepResult:
    t: np.ndarray
    delta_theta: np.ndarray
    running_max: np.ndarray
    variables: list
    failures: int

    @property
    def best(self):
        """Index of the grid point attaining the overall maximum |dtheta|."""
        vals = np.where(np.isfinite(self.delta_theta), np.abs(self.delta_theta), -np.inf)
        return int(np.argmax(vals))


def t_grid(t_max, size):
    return t_max * np.arange(1, size + 1) / size


def sweep_t(ctx, cfg, mode=None, executor=None):
    """Extreme variables over a uniform grid on (0, t_max].

    Returns raw per-t values (the target fixed at t) and the running maximum
    of |dtheta| (the target anywhere in (0, t]).  Grid points where no root
    is found are skipped and counted.
    """
    mode = mode or cfg.mode
    ts = t_grid(cfg.t_max, cfg.t_grid_size)

    def one(t):
        try:
            return extreme_variable(ctx, float(t), cfg, mode)
        except NoRootError:
            return None

    results = list(executor.map(one, ts)) if executor is not None else [one(t) for t in ts]
    raw = np.array([r.delta_theta_exact if r is not None else np.nan for r in results])
    absval = np.where(np.isnan(raw), -np.inf, np.abs(raw))
    running = np.maximum.accumulate(absval)
    running[np.isneginf(running)] = np.nan
    return SweepResult(t=ts, delta_theta=raw, running_max=running, variables=results,
                       failures=sum(r is None for r in results))


def delta_bounded_extreme(ctx, delta_bound, p_new, mode=DELTA_ORTHOGONAL):
    """Extreme variable when |delta_{K+1}| rather than |t_{K+1}| is bounded.

    x is proportional to (G G'/n - I) c, scaled to x'x = n with the sign that
    makes -delta x'c positive.  ``delta_theta_approx`` holds the closed-form
    value -p |delta| d'c for the unnormalised direction d; the exact change for
    the normalised x, with its implied target x'u - delta, is in
    ``delta_theta_exact``.  Implied targets can be implausibly large.
    """
    if not delta_bound > 0:
        raise ValueError("delta_bound must be positive")
    if mode in (ORTHOGONAL, DELTA_ORTHOGONAL):
        mode = DELTA_ORTHOGONAL
    elif mode in (CENTERED, DELTA_CENTERED):
        mode = DELTA_CENTERED
    else:
        raise ValueError(f"unknown mode {mode!r}")
    G = ctx.constraints(mode)
    n = ctx.n
    d = G @ (G.T @ ctx.c) / n - ctx.c
    dnorm = float(np.linalg.norm(d))
    if dnorm <= 1e-14 * max(1.0, float(np.linalg.norm(ctx.c))):
        raise DegenerateInputError("outcome lies in the constraint space; direction vector is zero")
    dc = float(d @ ctx.c)
    sign = -1.0 if delta_bound * dc > 0 else 1.0
    x = sign * math.sqrt(n) * d / dnorm
    lam2 = delta_bound * dnorm / (sign * math.sqrt(n))
    t_new = float(x @ ctx.u) - delta_bound
    return ExtremeVariable(
        x=x, lambda2=lam2, t_new=t_new, delta_new=delta_bound,
        delta_theta_exact=delta_theta_exact(ctx, x, t_new, p_new),
        delta_theta_approx=-p_new * abs(delta_bound) * dc,
        objective=eq2_objective(ctx, x, t_new), mode=mode,
        diagnostics={
            "constraint_residual": float(np.abs(G.T @ x).max()),
            "implied_t": t_new,
        },
    )


def solution_correlation(x_a, x_b):
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    if x_a.shape != x_b.shape:
        raise ValueError("vectors must have equal length")
    if np.ptp(x_a) == 0 or np.ptp(x_b) == 0:
        raise ValueError("correlation undefined for a constant vector")
    return float(np.corrcoef(x_a, x_b)[0, 1])


def _vec(ctx, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (ctx.n,):
        raise ValueError(f"vector has shape {v.shape}, expected ({ctx.n},)")
    return v
