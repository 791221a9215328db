"""Command-line front end: calibrate, sensitivity and simulate.

Exit codes:
  0  success
  2  malformed input (file, CSV or configuration)
  3  rank-deficient design (the offending columns are named)
  4  no lambda2 root found for any grid point
  5  too many replicates discarded
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import Priorities, calibrate_weights, discrepancies, estimate_total, standardize
from .errors import DiscardRateError, NoRootError, RankDeficientError, RelcalError
from .sensitivity import (
    CENTERED,
    DELTA_CENTERED,
    DELTA_ORTHOGONAL,
    ORTHOGONAL,
    SensitivityConfig,
    SensitivityContext,
    delta_bounded_extreme,
    extreme_variable,
    solution_correlation,
    sweep_t,
)
from .simgen import (
    PopulationSpec,
    default_priorities,
    draw_sample,
    gen_population,
    make_rng,
    prepare_sample,
    run_replications,
    smd_spec,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RANK = 3
EXIT_ROOT = 4
EXIT_DISCARD = 5

MODE_FLAGS = {
    "orth": (ORTHOGONAL,),
    "centered": (CENTERED,),
    "both": (ORTHOGONAL, CENTERED),
    "delta-bounded": (DELTA_ORTHOGONAL, DELTA_CENTERED),
}

CONFIG_TEMPLATE = """\
# relcal configuration; command-line flags override these values
[calibration]
# population size N and one priority per design column, intercept first
n_pop = 120000
priorities = 3, 0.1, 0.01
R = 0.5

[sensitivity]
p_new = 0.1
t_max = 5000
grid = 50
# orth, centered, both or delta-bounded
mode = both
# used by delta-bounded mode only
delta_bound = 1000
lambda_scan = 512
root_tol = 1e-10

[population]
# smc (12 mixed columns) or smd (3 normal columns, the last one omitted)
preset = smc
seed = 20250101
# optional overrides: n_pop, expected_sample, sigma, sigma2, y_limits (low, high or none),
# beta, gamma, omitted (column names)

[priorities]
# optional for simulate; defaults depend on the preset
# p = 3, 0.1, 0.01, ...
R = 0.5

[replication]
n_reps = 200
master_seed = 1
threads = 1
max_discard = 0.10
# evaluate each replicate over the t grid instead of at t_max only
sweep = false

[plotdata]
t_sweep = true
r_values = 0.25, 0.5, 0.75
p_values = 0.01, 0.03, 0.1, 0.3, 1
"""


class InputError(Exception):
    """Malformed input; mapped to exit status 2."""


# -- small helpers --------------------------------------------------------------

def fmt(v):
    """Full-precision text for a number (repr round-trips exactly)."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def thousands(v):
    return f"{v / 1000:.1f}"


def parse_floats(text, what):
    try:
        return [float(s) for s in text.replace(";", ",").split(",") if s.strip()]
    except ValueError as exc:
        raise InputError(f"{what}: cannot parse {text!r} as a list of numbers") from exc


def read_config(path):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    p = Path(path)
    if not p.is_file():
        raise InputError(f"configuration file not found: {path}")
    try:
        cp.read(p, encoding="utf-8")
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from exc
    return cp


def get(cp, section, key, conv=str, default=None, required=False):
    if cp.has_option(section, key):
        raw = cp.get(section, key).strip()
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise InputError(f"[{section}] {key} = {raw!r}: {exc}") from exc
    if required:
        raise InputError(f"missing [{section}] {key}")
    return default


def as_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _read_rows(path):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"file not found: {path}")
    with open(p, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty file, header row required")
    return rows[0], rows[1:]


def read_data_csv(path):
    """unit_id, weight, y, then the auxiliary columns."""
    header, rows = _read_rows(path)
    header = [h.strip() for h in header]
    if header[:3] != ["unit_id", "weight", "y"] or len(header) < 4:
        raise InputError(
            f"{path}:1: header must be unit_id,weight,y followed by auxiliary columns"
        )
    aux = header[3:]
    if len(set(aux)) != len(aux):
        raise InputError(f"{path}:1: repeated auxiliary column name")
    ids, values = [], []
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            nums = [float(c) for c in row[1:]]
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
        if not all(math.isfinite(v) for v in nums):
            raise InputError(f"{path}:{lineno}: non-finite value")
        if nums[0] <= 0:
            raise InputError(f"{path}:{lineno}: design weight must be positive")
        ids.append(row[0].strip())
        values.append(nums)
    if len(ids) < 2:
        raise InputError(f"{path}: need at least two data rows")
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: unit_id values must be unique")
    arr = np.array(values)
    return ids, arr[:, 0], arr[:, 1], arr[:, 2:], aux


def read_targets_csv(path, aux):
    header, rows = _read_rows(path)
    if [h.strip() for h in header] != ["column_name", "raw_target"]:
        raise InputError(f"{path}:1: header must be column_name,raw_target")
    targets = {}
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise InputError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
        name = row[0].strip()
        try:
            val = float(row[1])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
        if not math.isfinite(val):
            raise InputError(f"{path}:{lineno}: non-finite target")
        if name in targets:
            raise InputError(f"{path}:{lineno}: duplicate target for column {name!r}")
        targets[name] = val
    missing = [a for a in aux if a not in targets]
    if missing:
        raise InputError(f"{path}: no target for column(s) " + ", ".join(missing))
    extra = [t for t in targets if t not in aux]
    if extra:
        raise InputError(f"{path}: target(s) for unknown column(s) " + ", ".join(extra))
    return np.array([targets[a] for a in aux])


# -- configuration objects ----------------------------------------------------

def calibration_settings(cp, K):
    n_pop = get(cp, "calibration", "n_pop", float, required=True)
    if not n_pop > 0:
        raise InputError("[calibration] n_pop must be positive")
    pri = get(cp, "calibration", "priorities", lambda s: parse_floats(s, "priorities"),
              required=True)
    if len(pri) != K + 1:
        raise InputError(
            f"[calibration] priorities needs {K + 1} values (intercept first), got {len(pri)}"
        )
    R = get(cp, "calibration", "R", float, 0.5)
    try:
        prio = Priorities(np.array(pri), R)
    except ValueError as exc:
        raise InputError(f"[calibration] {exc}") from exc
    return n_pop, prio


def sensitivity_settings(cp, args):
    sec = "sensitivity"
    p_new = args.p_new if args.p_new is not None else get(cp, sec, "p_new", float, 0.1)
    t_max = args.t_max if args.t_max is not None else get(cp, sec, "t_max", float, 5000.0)
    grid = args.grid if args.grid is not None else get(cp, sec, "grid", int, 50)
    mode = args.mode if args.mode is not None else get(cp, sec, "mode", str, "both")
    if mode not in MODE_FLAGS:
        raise InputError(f"[{sec}] mode must be one of {', '.join(MODE_FLAGS)}, got {mode!r}")
    delta_bound = get(cp, sec, "delta_bound", float, None)
    try:
        cfg = SensitivityConfig(
            p_new=p_new, t_max=t_max, t_grid_size=grid,
            lambda_scan=get(cp, sec, "lambda_scan", int, 512),
            root_tol=get(cp, sec, "root_tol", float, 1e-10),
            delta_bound=delta_bound,
        )
    except ValueError as exc:
        raise InputError(f"[{sec}] {exc}") from exc
    if mode == "delta-bounded" and not (delta_bound is not None and delta_bound > 0):
        raise InputError(f"[{sec}] delta-bounded mode needs a positive delta_bound")
    return cfg, mode


def population_spec(cp):
    sec = "population"
    preset = get(cp, sec, "preset", str, "smc")
    seed = get(cp, sec, "seed", int, None)
    if preset == "smc":
        spec = PopulationSpec() if seed is None else PopulationSpec(seed=seed)
    elif preset == "smd":
        sigma2 = get(cp, sec, "sigma2", float, 0.04)
        spec = smd_spec(sigma2=sigma2) if seed is None else smd_spec(sigma2=sigma2, seed=seed)
    else:
        raise InputError(f"[{sec}] preset must be smc or smd, got {preset!r}")
    changes = {}
    for key, conv in (("n_pop", int), ("expected_sample", float), ("sigma", float)):
        v = get(cp, sec, key, conv, None)
        if v is not None:
            changes[key] = v
    for key in ("beta", "gamma"):
        v = get(cp, sec, key, str, None)
        if v is not None:
            changes[key] = tuple(parse_floats(v, f"[{sec}] {key}"))
    lim = get(cp, sec, "y_limits", str, None)
    if lim is not None:
        changes["y_limits"] = (None if lim.lower() == "none"
                               else tuple(parse_floats(lim, f"[{sec}] y_limits")))
        if changes["y_limits"] is not None and len(changes["y_limits"]) != 2:
            raise InputError(f"[{sec}] y_limits needs two values or none")
    om = get(cp, sec, "omitted", str, None)
    if om is not None:
        names = [c.name for c in spec.columns]
        wanted = [s.strip() for s in om.split(",") if s.strip()]
        unknown = [s for s in wanted if s not in names]
        if unknown:
            raise InputError(f"[{sec}] omitted names unknown column(s) {', '.join(unknown)}")
        changes["omitted"] = tuple(names.index(s) for s in wanted)
    try:
        return dataclasses.replace(spec, **changes)
    except ValueError as exc:
        raise InputError(f"[{sec}] {exc}") from exc


def simulation_priorities(cp, spec):
    sec = "priorities"
    if spec.omitted and not cp.has_option(sec, "p"):
        # the omitted-variable preset calibrates on the normal columns
        base = np.array([5.0] + [0.1] * len(spec.calibrated))
    else:
        base = default_priorities(spec).p
    p = get(cp, sec, "p", lambda s: parse_floats(s, "[priorities] p"), None)
    if p is not None:
        if len(p) != len(spec.calibrated) + 1:
            raise InputError(
                f"[{sec}] p needs {len(spec.calibrated) + 1} values, got {len(p)}"
            )
        base = np.array(p)
    try:
        return Priorities(base, get(cp, sec, "R", float, 0.5))
    except ValueError as exc:
        raise InputError(f"[{sec}] {exc}") from exc


# -- commands -----------------------------------------------------------------

def _load_calibration(data_csv, targets_csv, cp):
    ids, w, y, Xraw, aux = read_data_csv(data_csv)
    traw = read_targets_csv(targets_csv, aux)
    n_pop, prio = calibration_settings(cp, len(aux))
    try:
        design = standardize(Xraw, traw, n_pop, names=aux)
    except RankDeficientError:
        raise
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    calib = calibrate_weights(design, w, prio)
    return ids, w, y, design, prio, calib


def cmd_calibrate(args):
    cp = read_config(args.config)
    ids, w, y, design, prio, calib = _load_calibration(args.data_csv, args.targets_csv, cp)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "weights.csv", ["unit_id", "design_weight", "calibrated_weight"],
              zip(ids, w, calib.u))
    ht_delta = discrepancies(design, w)
    # discrepancies on the raw scale: standardized values times the column sd
    scale = np.concatenate([[1.0], design.sds])
    shift = np.concatenate([[0.0], design.n_pop * design.means])
    target = design.t * scale + shift
    rows = []
    for k, name in enumerate(design.names):
        rows.append((name, target[k] + ht_delta[k] * scale[k],
                     target[k] + calib.deltas[k] * scale[k], target[k],
                     ht_delta[k] * scale[k], calib.deltas[k] * scale[k]))
    write_csv(out / "discrepancies.csv",
              ["variable", "ht_estimate", "calib_estimate", "target", "ht_error", "calib_error"],
              rows)
    ht, cal = estimate_total(w, y), estimate_total(calib.u, y)
    write_csv(out / "estimate.csv", ["outcome", "ht", "calibrated"], [("y", ht, cal)])
    print(f"calibrated {design.n} units on {design.K} auxiliary columns; "
          f"estimate (thousands): HT {thousands(ht)}, calibrated {thousands(cal)}; "
          f"negative weights: {calib.negative_weights}")
    return EXIT_OK


def _check_weights(out, ids, u):
    path = out / "weights.csv"
    if not path.is_file():
        raise InputError(f"{path} not found; run the calibrate command first")
    header, rows = _read_rows(path)
    if header != ["unit_id", "design_weight", "calibrated_weight"]:
        raise InputError(f"{path}:1: unexpected header")
    try:
        stored_ids = [r[0] for r in rows]
        stored = np.array([float(r[2]) for r in rows])
    except (IndexError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    if stored_ids != ids or stored.shape != u.shape or not np.allclose(
        stored, u, rtol=1e-9, atol=1e-12 * max(1.0, np.abs(u).max())
    ):
        raise InputError(f"{path} does not match this data and configuration; re-run calibrate")


def cmd_sensitivity(args):
    cp = read_config(args.config)
    cfg, mode_flag = sensitivity_settings(cp, args)
    ids, w, y, design, prio, calib = _load_calibration(args.data_csv, args.targets_csv, cp)
    out = Path(args.out_dir)
    _check_weights(out, ids, calib.u)
    ctx = SensitivityContext.build(design, calib, y)
    modes = MODE_FLAGS[mode_flag]
    rows, summary, xs = [], [], {}
    if mode_flag == "delta-bounded":
        for mode in modes:
            ev = delta_bounded_extreme(ctx, cfg.delta_bound, cfg.p_new, mode)
            rows.append((mode, ev.t_new, ev.lambda2, ev.delta_theta_exact,
                         ev.delta_theta_approx, ev.objective, 1, True,
                         abs(ev.delta_theta_exact)))
            xs[mode] = ev.x
            summary.append([mode, abs(ev.delta_theta_exact), ev.t_new, ev.lambda2, 0, True,
                            ev.diagnostics["constraint_residual"], 0])
    else:
        with ThreadPoolExecutor(max_workers=args.threads) if args.threads > 1 else _Null() as ex:
            for mode in modes:
                res = sweep_t(ctx, cfg, mode, executor=ex)
                for i, t in enumerate(res.t):
                    ev = res.variables[i]
                    if ev is None:
                        rows.append((mode, t, math.nan, math.nan, math.nan, math.nan, 0, False,
                                     res.running_max[i]))
                        continue
                    rows.append((mode, t, ev.lambda2, ev.delta_theta_exact,
                                 ev.delta_theta_approx, ev.objective, len(ev.all_roots),
                                 ev.converged, res.running_max[i]))
                if res.failures == len(res.t):
                    write_csv(out / "sensitivity.csv", SENS_HEADER, rows)
                    print(f"no lambda2 root at any grid point ({mode}); partial output written",
                          file=sys.stderr)
                    return EXIT_ROOT
                b = res.best
                ev = res.variables[b]
                xs[mode] = ev.x
                summary.append([mode, abs(ev.delta_theta_exact), res.t[b], ev.lambda2,
                                ev.iterations, ev.converged,
                                ev.diagnostics["constraint_residual"], res.failures])
    write_csv(out / "sensitivity.csv", SENS_HEADER, rows)
    x_orth = xs.get(ORTHOGONAL, xs.get(DELTA_ORTHOGONAL))
    x_cent = xs.get(CENTERED, xs.get(DELTA_CENTERED))
    corr = (solution_correlation(x_orth, x_cent)
            if x_orth is not None and x_cent is not None else math.nan)
    nan = np.full(len(ids), math.nan)
    write_csv(out / "extreme_x.csv", ["unit_id", "x_orth", "x_centered"],
              zip(ids, x_orth if x_orth is not None else nan,
                  x_cent if x_cent is not None else nan))
    write_csv(out / "sensitivity_summary.csv",
              ["mode", "max_abs_delta_theta", "argmax_t", "lambda2", "iterations", "converged",
               "constraint_residual", "corr_x_x0", "root_failures"],
              [s[:7] + [corr] + s[7:] for s in summary])
    for s in summary:
        print(f"{s[0]}: largest plausible change {thousands(s[1])} thousand at t = {s[2]:.1f}")
    if not math.isnan(corr):
        print(f"correlation of the two extreme variables: {corr:.3f}")
    return EXIT_OK


SENS_HEADER = ["mode", "t", "lambda2", "delta_theta_exact", "delta_theta_approx", "objective",
               "n_roots", "converged", "running_max"]


class _Null:
    """Stands in for an executor when running single-threaded."""

    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


def cmd_simulate(args):
    cp = read_config(args.scenario)
    spec = population_spec(cp)
    prio = simulation_priorities(cp, spec)
    cfg, _ = sensitivity_settings(cp, args)
    sec = "replication"
    n_reps = get(cp, sec, "n_reps", int, 200)
    if n_reps < 1:
        raise InputError(f"[{sec}] n_reps must be at least 1")
    seed = args.seed if args.seed is not None else get(cp, sec, "master_seed", int, 1)
    threads = args.threads if args.threads_given else get(cp, sec, "threads", int, 1)
    max_discard = get(cp, sec, "max_discard", float, 0.10)
    sweep = get(cp, sec, "sweep", as_bool, False)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pop = gen_population(spec)
    status = EXIT_OK
    try:
        summ = run_replications(spec, prio, cfg, n_reps, seed, workers=max(1, threads),
                                population=pop, sweep=sweep, max_discard=max_discard)
    except DiscardRateError as exc:
        summ = exc.summary
        print(str(exc), file=sys.stderr)
        status = EXIT_DISCARD
    write_simulation(out, summ, pop)
    if status == EXIT_OK:
        write_plotdata(out / "plotdata", cp, pop, prio, cfg, seed)
        report_simulation(summ)
    return status


def write_simulation(out, summ, pop):
    names = summ.names
    K1 = len(names)
    header = ["replicate", "seed", "realized_n", "ht_error", "calib_error", "delta_theta",
              "delta_theta0", "corr", "discarded"]
    header += [f"delta_{nm}" for nm in names] + [f"ht_delta_{nm}" for nm in names]
    om = [pop.spec.columns[j].name for j in pop.spec.omitted]
    header += [f"corr_x_{nm}" for nm in om] + [f"corr_x0_{nm}" for nm in om]
    rows = []
    for r in summ.records:
        d = r.deltas if r.deltas is not None else np.full(K1, math.nan)
        hd = r.ht_deltas if r.ht_deltas is not None else np.full(K1, math.nan)
        oc = r.omitted_corr if r.omitted_corr is not None else np.full(len(om), math.nan)
        oc0 = r.omitted_corr0 if r.omitted_corr0 is not None else np.full(len(om), math.nan)
        rows.append([r.replicate, r.seed, r.realized_n, r.ht_error, r.calib_error,
                     r.delta_theta, r.delta_theta0, r.corr, r.failed,
                     *d, *hd, *oc, *oc0])
    write_csv(out / "replicates.csv", header, rows)
    if summ.kept:
        sd_c, sd_u = summ.delta_sd(True), summ.delta_sd(False)
    else:
        sd_c = sd_u = np.full(K1, math.nan)
    write_csv(out / "summary.csv", ["variable", "priority", "sd_calibrated", "sd_uncalibrated"],
              zip(names, summ.priorities.p, sd_c, sd_u))
    agg = summ.aggregates() if len(summ.kept) > 2 else {
        "replicates": len(summ.records), "discarded": summ.discarded}
    write_csv(out / "aggregates.csv", ["statistic", "value"], agg.items())
    low, high = pop.truncation_counts
    write_csv(out / "population.csv", ["statistic", "value"], [
        ("n_pop", pop.N), ("theta", pop.theta), ("sum_pi", float(pop.pi.sum())),
        ("pi_clamped", pop.pi_clamp_count), ("y_truncated_low", low),
        ("y_truncated_high", high),
        *[(f"target_{nm}", t) for nm, t in
          zip(("intercept",) + tuple(c.name for c in pop.spec.columns), pop.targets)],
    ])


def write_plotdata(pdir, cp, pop, prio, cfg, seed):
    """Series for a single illustrative sample: t, R and priority sweeps."""
    sec = "plotdata"
    pdir.mkdir(parents=True, exist_ok=True)
    sample = draw_sample(pop, make_rng(seed, 0, 0))
    design = prepare_sample(pop, sample)

    def extremes(pr, t):
        calib = calibrate_weights(design, sample.w, pr)
        ctx = SensitivityContext.build(design, calib, sample.y_s)
        out = []
        for mode in (ORTHOGONAL, CENTERED):
            try:
                out.append(abs(extreme_variable(ctx, t, cfg, mode).delta_theta_exact))
            except NoRootError:
                out.append(math.nan)
        return calib, ctx, out

    if get(cp, sec, "t_sweep", as_bool, True):
        _, ctx, _ = extremes(prio, cfg.t_max)
        res = [sweep_t(ctx, cfg, mode) for mode in (ORTHOGONAL, CENTERED)]
        write_csv(pdir / "t_sweep.csv",
                  ["t", "delta_theta", "delta_theta_running", "delta_theta0",
                   "delta_theta0_running"],
                  zip(res[0].t, np.abs(res[0].delta_theta), res[0].running_max,
                      np.abs(res[1].delta_theta), res[1].running_max))
    r_values = get(cp, sec, "r_values", lambda s: parse_floats(s, "r_values"), [])
    if r_values:
        rows = []
        for R in r_values:
            _, _, (d, d0) = extremes(Priorities(prio.p, R), cfg.t_max)
            rows.append((R, d, d0))
        write_csv(pdir / "r_sweep.csv", ["R", "delta_theta", "delta_theta0"], rows)
    p_values = get(cp, sec, "p_values", lambda s: parse_floats(s, "p_values"), [])
    if p_values and prio.p.size > 1:
        rows = []
        for p1 in p_values:
            p = prio.p.copy()
            p[1] = p1
            calib, _, (d, d0) = extremes(Priorities(p, prio.R), cfg.t_max)
            rows.append((p1, *calib.deltas, d, d0))
        names = ("intercept",) + tuple(pop.spec.columns[j].name for j in pop.spec.calibrated)
        write_csv(pdir / "p_sweep.csv",
                  ["p1", *[f"delta_{nm}" for nm in names], "delta_theta", "delta_theta0"], rows)


def report_simulation(summ):
    agg = summ.aggregates() if len(summ.kept) > 2 else None
    print(f"replicates: {len(summ.records)}, discarded: {summ.discarded}")
    if agg is None:
        return
    print(f"mean largest plausible change (thousands): orthogonal "
          f"{agg['mean_delta_theta'] / 1000:.3f} ({agg['sd_delta_theta'] / 1000:.3f}), "
          f"centered {agg['mean_delta_theta0'] / 1000:.3f} ({agg['sd_delta_theta0'] / 1000:.3f})")
    print(f"correlation of the changes {agg['corr_delta_theta']:.3f}, "
          f"median ratio {agg['median_ratio']:.2f}, "
          f"mean correlation of the variables {agg['mean_corr_x_x0']:.3f}")
    print("sd of discrepancies (calibrated / uncalibrated):")
    for nm, p, a, b in zip(summ.names, summ.priorities.p, summ.delta_sd(True),
                           summ.delta_sd(False)):
        print(f"  {nm:<16} p={p:<6g} {a:10.1f} {b:10.1f}")


# -- entry point --------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="relcal",
        description="Relaxed calibration of survey weights and sensitivity to a new "
                    "auxiliary variable.",
        epilog="exit codes: 0 ok, 2 malformed input, 3 rank-deficient design, "
               "4 no lambda2 root on any grid point, 5 discard rate above the limit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="store_true",
                        help="print name and version as JSON and exit")
    parser.add_argument("--emit-config-template", action="store_true",
                        help="print a configuration template and exit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (simulate)")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("--mode", choices=list(MODE_FLAGS), help="sensitivity mode(s)")
    common.add_argument("--t-max", type=float, dest="t_max", help="largest plausible |t|")
    common.add_argument("--p-new", type=float, dest="p_new", help="priority of the new variable")
    common.add_argument("--grid", type=int, help="number of t grid points")
    sub = parser.add_subparsers(dest="command")
    p = sub.add_parser("calibrate", parents=[common], help="calibrate survey weights")
    p.add_argument("data_csv")
    p.add_argument("targets_csv")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_calibrate)
    p = sub.add_parser("sensitivity", parents=[common],
                       help="extreme plausible new variable, after calibrate")
    p.add_argument("data_csv")
    p.add_argument("targets_csv")
    p.add_argument("config")
    p.add_argument("out_dir", help="directory holding the calibrate outputs")
    p.set_defaults(func=cmd_sensitivity)
    p = sub.add_parser("simulate", parents=[common], help="replicate a simulation scenario")
    p.add_argument("scenario")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(json.dumps({"name": "relcal", "version": __version__}))
        return EXIT_OK
    if args.emit_config_template:
        sys.stdout.write(CONFIG_TEMPLATE)
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_INPUT
    args.threads_given = args.threads is not None
    if args.threads is None:
        args.threads = 1
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RankDeficientError as exc:
        print(f"error: rank-deficient design: {exc}", file=sys.stderr)
        return EXIT_RANK
    except NoRootError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ROOT
    except RelcalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
