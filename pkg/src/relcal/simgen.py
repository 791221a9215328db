"""Synthetic populations, Poisson samples and seeded replication of the pipeline."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calibrate import Priorities, calibrate_weights, discrepancies, standardize
from .errors import DiscardRateError, RelcalError
from .sensitivity import (
    CENTERED,
    ORTHOGONAL,
    SensitivityConfig,
    SensitivityContext,
    extreme_variable,
    solution_correlation,
    sweep_t,
)

PI_FLOOR = 1e-6
MAX_DISCARD_RATE = 0.10


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    dist: str
    params: tuple
    important: bool = True


def _draw(rng, col, size):
    p = col.params
    if col.dist == "normal":
        mean, sd = p
        if sd < 0:
            raise ValueError(f"{col.name}: negative standard deviation")
        return rng.normal(mean, sd, size)
    if col.dist == "chisq":
        (df,) = p
        if df <= 0:
            raise ValueError(f"{col.name}: degrees of freedom must be positive")
        return rng.chisquare(df, size)
    if col.dist == "lognormal":
        meanlog, sdlog = p
        if sdlog < 0:
            raise ValueError(f"{col.name}: negative log-scale sd")
        return rng.lognormal(meanlog, sdlog, size)
    if col.dist == "binary":
        (prob,) = p
        if not 0 <= prob <= 1:
            raise ValueError(f"{col.name}: probability outside [0, 1]")
        return rng.binomial(1, prob, size).astype(float)
    if col.dist == "poisson":
        (lam,) = p
        if lam < 0:
            raise ValueError(f"{col.name}: negative Poisson mean")
        return rng.poisson(lam, size).astype(float)
    if col.dist == "gamma":
        shape, rate = p
        if shape <= 0 or rate <= 0:
            raise ValueError(f"{col.name}: gamma shape and rate must be positive")
        return rng.gamma(shape, 1.0 / rate, size)
    raise ValueError(f"{col.name}: unknown distribution {col.dist!r}")


def distribution_moments(col):
    """(mean, variance) of a column's generating distribution."""
    p = col.params
    if col.dist == "normal":
        return p[0], p[1] ** 2
    if col.dist == "chisq":
        return p[0], 2.0 * p[0]
    if col.dist == "lognormal":
        m, s = p
        return math.exp(m + s * s / 2), (math.exp(s * s) - 1) * math.exp(2 * m + s * s)
    if col.dist == "binary":
        return p[0], p[0] * (1 - p[0])
    if col.dist == "poisson":
        return p[0], p[0]
    if col.dist == "gamma":
        return p[0] / p[1], p[0] / p[1] ** 2
    raise ValueError(f"unknown distribution {col.dist!r}")


def default_columns():
    kinds = [
        ("normal", "normal", (0.0, 1.0)),
        ("chisq", "chisq", (4.0,)),
        ("lognormal", "lognormal", (0.0, 1.0)),
        ("binary", "binary", (0.12,)),
        ("poisson", "poisson", (2.5,)),
        ("gamma", "gamma", (1.0, 5.0)),
    ]
    cols = []
    for name, dist, params in kinds:
        cols.append(ColumnSpec(f"{name}_imp", dist, params, True))
        cols.append(ColumnSpec(f"{name}_unimp", dist, params, False))
    return tuple(cols)


@dataclass(frozen=True)
class PopulationSpec:
    n_pop: int = 120_000
    expected_sample: float = 1000.0
    beta: tuple = (1.0,) + (1.0, 0.1) * 6
    sigma: float = 0.4
    y_limits: tuple | None = (0.0, 25.0)
    gamma: tuple = (0.0, 0.0, 0.0, 0.0, 0.35, 0.0, 0.0, 0.0, 0.7, 0.0, 0.4, 0.0)
    columns: tuple = field(default_factory=default_columns)
    seed: int = 20250101
    omitted: tuple = ()

    def __post_init__(self):
        K = len(self.columns)
        if len(self.beta) != K + 1:
            raise ValueError(f"beta needs {K + 1} entries, got {len(self.beta)}")
        if len(self.gamma) != K:
            raise ValueError(f"gamma needs {K} entries, got {len(self.gamma)}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.y_limits is not None and not self.y_limits[0] < self.y_limits[1]:
            raise ValueError("y_limits must satisfy low < high")
        if not 0 < self.expected_sample <= self.n_pop:
            raise ValueError("expected_sample must lie in (0, n_pop]")
        if any(not 0 <= j < K for j in self.omitted):
            raise ValueError("omitted column index out of range")

    @property
    def K(self):
        return len(self.columns)

    @property
    def calibrated(self):
        """Indexes of the auxiliary columns used in calibration."""
        return tuple(j for j in range(self.K) if j not in self.omitted)


@dataclass
class Population:
    X_pop: np.ndarray
    y_pop: np.ndarray
    pi: np.ndarray
    targets: np.ndarray
    theta: float
    truncation_counts: tuple
    pi_clamp_count: int
    spec: PopulationSpec

    @property
    def N(self):
        return self.X_pop.shape[0]


@dataclass
class SampleDraw:
    indices: np.ndarray
    X_s: np.ndarray
    y_s: np.ndarray
    w: np.ndarray

    @property
    def realized_n(self):
        return self.indices.size


class EmptySampleError(RelcalError):
    pass


def make_rng(*entropy):
    """Counter-based generator keyed by integers, e.g. (master_seed, replicate)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(entropy))))


def scale_probabilities(base, expected):
    """Find c with sum(clip(c * base, floor, 1)) = expected.

    Returns (pi, number of clipped units).
    """
    base = np.asarray(base, dtype=float)
    N = base.size
    if expected > N:
        raise ValueError("expected sample size exceeds the population size")
    total = base[base > 0].sum()
    if total <= 0:
        raise ValueError("no unit has a positive inclusion score")
    c = expected / total
    raw = c * base
    if raw.min() >= PI_FLOOR and raw.max() <= 1.0:
        return raw, 0

    def size(cc):
        return np.clip(cc * base, PI_FLOOR, 1.0).sum()

    lo, hi = 0.0, 1.0 / base[base > 0].min()
    if size(hi) < expected * (1 - 1e-12):
        raise ValueError("inclusion probabilities cannot reach the expected sample size")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if size(mid) < expected:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    raw = hi * base
    pi = np.clip(raw, PI_FLOOR, 1.0)
    return pi, int(np.count_nonzero((raw < PI_FLOOR) | (raw > 1.0)))


def gen_population(spec: PopulationSpec) -> Population:
    rng = make_rng(spec.seed)
    N = spec.n_pop
    X = np.empty((N, spec.K + 1))
    X[:, 0] = 1.0
    for j, col in enumerate(spec.columns):
        X[:, j + 1] = _draw(rng, col, N)
    y = X @ np.asarray(spec.beta, dtype=float) + rng.normal(0.0, spec.sigma, N)
    low = high = 0
    if spec.y_limits is not None:
        lo, hi = spec.y_limits
        low = int(np.count_nonzero(y < lo))
        high = int(np.count_nonzero(y > hi))
        y = np.clip(y, lo, hi)
    base = 1.0 + X[:, 1:] @ np.asarray(spec.gamma, dtype=float)
    pi, clamped = scale_probabilities(base, spec.expected_sample)
    return Population(
        X_pop=X, y_pop=y, pi=pi, targets=X.sum(axis=0), theta=float(y.sum()),
        truncation_counts=(low, high), pi_clamp_count=clamped, spec=spec,
    )


def draw_sample(pop: Population, seed) -> SampleDraw:
    """Poisson sample: unit i is included independently with probability pi_i."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    keep = rng.random(pop.N) < pop.pi
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise EmptySampleError("Poisson draw selected no units")
    return SampleDraw(indices=idx, X_s=pop.X_pop[idx, 1:], y_s=pop.y_pop[idx],
                      w=1.0 / pop.pi[idx])


@dataclass
class ReplicateRecord:
    replicate: int
    seed: int
    realized_n: int
    ht_error: float = math.nan
    calib_error: float = math.nan
    delta_theta: float = math.nan
    delta_theta0: float = math.nan
    corr: float = math.nan
    deltas: np.ndarray | None = None
    ht_deltas: np.ndarray | None = None
    omitted_corr: np.ndarray | None = None
    omitted_corr0: np.ndarray | None = None
    resamples: int = 0
    failed: bool = False
    reason: str = ""


@dataclass
class ReplicationSummary:
    records: list
    population: Population = field(repr=False)
    priorities: Priorities = field(repr=False)
    names: tuple = ()

    @property
    def kept(self):
        return [r for r in self.records if not r.failed]

    @property
    def discarded(self):
        return sum(r.failed for r in self.records)

    def column(self, attr):
        return np.array([getattr(r, attr) for r in self.kept], dtype=float)

    def delta_sd(self, calibrated=True):
        """Replicate standard deviation of each discrepancy (ddof=1)."""
        attr = "deltas" if calibrated else "ht_deltas"
        rows = np.array([getattr(r, attr) for r in self.kept])
        return rows.std(axis=0, ddof=1) if len(rows) > 1 else np.full(rows.shape[1], np.nan)

    def aggregates(self):
        d = self.column("delta_theta")
        d0 = self.column("delta_theta0")
        ratio = d0 / d
        out = {
            "replicates": len(self.records),
            "discarded": self.discarded,
            "mean_delta_theta": float(d.mean()),
            "sd_delta_theta": float(d.std(ddof=1)) if d.size > 1 else math.nan,
            "mean_delta_theta0": float(d0.mean()),
            "sd_delta_theta0": float(d0.std(ddof=1)) if d0.size > 1 else math.nan,
            "corr_delta_theta": float(np.corrcoef(d, d0)[0, 1]) if d.size > 2 else math.nan,
            "median_ratio": float(np.median(ratio)),
            "ratio_q25": float(np.quantile(ratio, 0.25)),
            "ratio_q75": float(np.quantile(ratio, 0.75)),
            "mean_corr_x_x0": float(self.column("corr").mean()),
            "sd_corr_x_x0": float(self.column("corr").std(ddof=1)) if d.size > 1 else math.nan,
            "sd_ht_error": float(self.column("ht_error").std(ddof=1)) if d.size > 1 else math.nan,
            "sd_calib_error": float(self.column("calib_error").std(ddof=1)) if d.size > 1 else math.nan,
            "mean_realized_n": float(self.column("realized_n").mean()),
        }
        kept = self.kept
        if kept and kept[0].omitted_corr is not None and kept[0].omitted_corr.size:
            oc = np.array([r.omitted_corr for r in kept])
            oc0 = np.array([r.omitted_corr0 for r in kept])
            for j, idx in enumerate(self.population.spec.omitted):
                name = self.population.spec.columns[idx].name
                out[f"mean_corr_x_{name}"] = float(oc[:, j].mean())
                out[f"mean_corr_x0_{name}"] = float(oc0[:, j].mean())
        return out


def prepare_sample(pop: Population, sample: SampleDraw):
    """Standardize the calibrated columns of a sample against population totals."""
    spec = pop.spec
    cols = list(spec.calibrated)
    names = [spec.columns[j].name for j in cols]
    return standardize(sample.X_s[:, cols], pop.targets[1:][cols], pop.N, names=names)


def run_replicate(pop, prio, sens_cfg, r, master_seed, sweep=False):
    record = ReplicateRecord(replicate=r, seed=master_seed, realized_n=0)
    for attempt in range(100):
        try:
            sample = draw_sample(pop, make_rng(master_seed, r, attempt))
            break
        except EmptySampleError:
            record.resamples += 1
    else:
        record.failed, record.reason = True, "empty samples"
        return record
    record.realized_n = sample.realized_n
    try:
        design = prepare_sample(pop, sample)
        calib = calibrate_weights(design, sample.w, prio)
        record.deltas = calib.deltas
        record.ht_deltas = discrepancies(design, sample.w)
        record.ht_error = float(sample.w @ sample.y_s) - pop.theta
        record.calib_error = float(calib.u @ sample.y_s) - pop.theta
        ctx = SensitivityContext.build(design, calib, sample.y_s)
        if sweep:
            evs = []
            for mode in (ORTHOGONAL, CENTERED):
                res = sweep_t(ctx, sens_cfg, mode)
                if res.failures == len(res.t):
                    raise RelcalError(f"no root on the t grid ({mode})")
                evs.append(res.variables[res.best])
            ev, ev0 = evs
        else:
            ev = extreme_variable(ctx, sens_cfg.t_max, sens_cfg, ORTHOGONAL)
            ev0 = extreme_variable(ctx, sens_cfg.t_max, sens_cfg, CENTERED)
    except (RelcalError, ValueError, np.linalg.LinAlgError) as exc:
        # degenerate samples (e.g. a constant column) are discarded like root failures
        record.failed, record.reason = True, f"{type(exc).__name__}: {exc}"
        return record
    record.delta_theta = abs(ev.delta_theta_exact)
    record.delta_theta0 = abs(ev0.delta_theta_exact)
    record.corr = solution_correlation(ev.x, ev0.x)
    if pop.spec.omitted:
        omitted = sample.X_s[:, list(pop.spec.omitted)]
        record.omitted_corr = np.array([solution_correlation(ev.x, col) for col in omitted.T])
        record.omitted_corr0 = np.array([solution_correlation(ev0.x, col) for col in omitted.T])
    return record


def run_replications(spec, prio, sens_cfg, n_reps, master_seed, workers=1,
                     population=None, sweep=False, max_discard=MAX_DISCARD_RATE):
    """Replicate sampling, calibration and both sensitivity modes on one population.

    Replicate r draws its sample from the substream (master_seed, r, attempt),
    so the records do not depend on the number of workers.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    pop = population if population is not None else gen_population(spec)

    def one(r):
        return run_replicate(pop, prio, sens_cfg, r, master_seed, sweep)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(one, range(n_reps)))
    else:
        records = [one(r) for r in range(n_reps)]
    names = ("intercept",) + tuple(pop.spec.columns[j].name for j in pop.spec.calibrated)
    summary = ReplicationSummary(records=records, population=pop, priorities=prio, names=names)
    if summary.discarded > max_discard * n_reps:
        err = DiscardRateError(
            f"{summary.discarded} of {n_reps} replicates discarded "
            f"(limit {max_discard:.0%}); first reason: "
            + next(r.reason for r in records if r.failed)
        )
        err.summary = summary
        raise err
    return summary


def default_priorities(spec=None):
    """3 for the intercept, 0.1 for important and 0.01 for unimportant columns."""
    spec = spec or PopulationSpec()
    p = [3.0] + [0.1 if spec.columns[j].important else 0.01 for j in spec.calibrated]
    return Priorities(np.array(p), 0.5)


def smd_spec(sigma2=0.04, seed=4242, n_pop=5000, expected_sample=200.0):
    """Omitted-variable scenario: y = x1 + x2 + x3 + e, calibrate on x1, x2 only."""
    cols = tuple(ColumnSpec(f"x{j}", "normal", (0.0, 1.0), True) for j in (1, 2, 3))
    return PopulationSpec(
        n_pop=n_pop, expected_sample=expected_sample, beta=(0.0, 1.0, 1.0, 1.0),
        sigma=math.sqrt(sigma2), y_limits=None, gamma=(0.0, 0.0, 0.0),
        columns=cols, seed=seed, omitted=(2,),
    )


def smd_priorities():
    return Priorities(np.array([5.0, 0.1, 0.1]), 0.5)


def smd_sensitivity(t_new=210.0, p_new=0.1):
    return SensitivityConfig(p_new=p_new, t_max=t_new)
