"""Experiment tables: lambda convergence, method comparison, Err(h) and integral errors, CSV output."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .drivers import Driver
from .ergodic_cost import estimate_lambda
from .oracles import OracleSolution, example1_solution, example2_solution
from .sde import FactorModel, TimeGrid, simulate_paths
from .solvers import SolverConfig, backward_regression, err_h, evaluate, train


def fmt(x) -> str:
    """Shortest exact text for numbers, so CSV files are bitwise reproducible."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header, rows, meta: dict | None = None) -> str:
    buf = io.StringIO()
    if meta:
        buf.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


def write_csv(path, header, rows, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows, meta), encoding="utf-8")
    return path


def read_csv(path) -> tuple[dict, list[dict]]:
    """Inverse of ``write_csv``: (meta, rows as dicts of strings)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        meta = dict(kv.split("=", 1) for kv in lines[0][1:].split())
        lines = lines[1:]
    return meta, list(csv.DictReader(lines))


@dataclass
class RepStats:
    mean: float
    variance: float
    ci_lo: float
    ci_hi: float
    n: int


def rep_stats(values, level: float = 0.95) -> RepStats:
    """Mean, sample variance and Student-t confidence interval over repetitions."""
    x = np.asarray(values, dtype=float)
    n = len(x)
    mean = float(x.mean())
    if n < 2:
        return RepStats(mean, float("nan"), float("nan"), float("nan"), n)
    var = float(x.var(ddof=1))
    half = float(stats.t.ppf(0.5 + level / 2, n - 1)) * math.sqrt(var / n)
    return RepStats(mean, var, mean - half, mean + half, n)


def exact_lambda(drv: Driver, model: FactorModel) -> float | None:
    oracle = oracle_for(drv, model)
    return None if oracle is None else oracle.lam


def oracle_for(drv: Driver, model: FactorModel) -> OracleSolution | None:
    if drv.kind == "example1" and model.drift_kind == "ou":
        return example1_solution(drv.c_v, model.rate, model.kappa_vec)
    if drv.kind == "example2" and model.drift_kind == "ou":
        sol = example2_solution(drv.c_v, model.kappa_vec)
        return sol if math.isclose(model.rate, 0.5 * model.kappa_norm ** 2, rel_tol=1e-12) else None
    return None


LAMBDA_HEADER = ["method", "h", "M", "mean", "variance", "reps", "seed", "mean_abs_error"]


def table_lambda_convergence(drv: Driver, model: FactorModel, h_list, M_list, reps: int, seed=0,
                             T: float = 1.0, K: float | None = None, threads: int = 1):
    """Rows (method, h, M, mean, variance, reps, seed, mean_abs_error) over the (h, M) grid.

    Cell (i, j) uses the seed (seed, i, j); each repetition r within it uses (seed, i, j, r).
    ``mean_abs_error`` is empty when no closed form is known.
    """
    exact = exact_lambda(drv, model)
    rows = []
    for i, h in enumerate(h_list):
        for j, M in enumerate(M_list):
            est = estimate_lambda(drv, model, TimeGrid(h, T), int(M), (seed, i, j), reps, K=K, threads=threads)
            vals = np.asarray(est.values)
            mae = float(np.mean(np.abs(vals - exact))) if exact is not None else ""
            rows.append([est.method, h, int(M), est.value, est.variance, reps, seed, mae])
    return LAMBDA_HEADER, rows


def table_method_comparison(drv: Driver, model: FactorModel, grid: TimeGrid, mc_paths: int, mc_reps: int,
                            trainings: int, steps: int, seed=0, batch: int = 64, lr: float = 3e-4,
                            y0: float | None = None, threads: int = 1):
    """Rows (method, mean, variance, n): exact value, Monte Carlo, GeBSDE and LAeBSDE."""
    rows = []
    exact = exact_lambda(drv, model)
    if exact is not None:
        rows.append(["exact", exact, 0.0, 1])
    est = estimate_lambda(drv, model, grid, mc_paths, (seed, 0), mc_reps, threads=threads)
    s = rep_stats(est.values)
    rows.append(["mc_" + est.method, s.mean, s.variance, s.n])
    if y0 is None:
        oracle = oracle_for(drv, model)
        y0 = float(oracle.y(model.v0)) if oracle is not None else 0.0
    for kind in ("gebsde", "laebsde"):
        vals = []
        for r in range(trainings):
            cfg = SolverConfig(kind, drv, model, grid, batch=batch, steps=steps, lr=lr, seed=(seed, 1, r),
                               y0=y0, eval_batch=0, eval_every=max(steps, 1), threads=threads)
            vals.append(train(cfg).lambda_bar)
        s = rep_stats(vals)
        rows.append([kind, s.mean, s.variance, s.n])
    return ["method", "mean", "variance", "n"], rows


def err_h_study(drv: Driver, model: FactorModel, oracle: OracleSolution, h_list, n_paths: int,
                shifts=(0.0, 0.1), seed=0, T: float = 1.0, degree: int = 4, y0: float | None = None,
                threads: int = 1):
    """Err(h) of the regression scheme for lambda + shift, on a common path set per h."""
    y0 = float(oracle.y(model.v0)) if y0 is None else y0
    rows = []
    for i, h in enumerate(h_list):
        paths = simulate_paths(model, TimeGrid(h, T), n_paths, (seed, i), threads)
        for shift in shifts:
            sol = backward_regression(paths, drv, oracle.lam + shift, degree, y0=y0, truncate=False)
            rows.append([h, shift, oracle.lam + shift, err_h(sol, oracle, paths)])
    return ["h", "lambda_shift", "lambda_hat", "err_h"], rows


def integral_errors_table(drv: Driver, model: FactorModel, oracle: OracleSolution, h_list, n_paths: int,
                          reps: int, seed=0, T: float = 1.0, degree: int = 4, threads: int = 1):
    """I(Y), I(Z) of the regression scheme with the exact lambda; 95% CI of I(Y) over repetitions.

    Each repetition fits on (seed, i, r, 0) and evaluates on fresh paths (seed, i, r, 1).
    """
    y0 = float(oracle.y(model.v0))
    rows = []
    for i, h in enumerate(h_list):
        grid = TimeGrid(h, T)
        iy, iz = [], []
        for r in range(reps):
            fit = simulate_paths(model, grid, n_paths, (seed, i, r, 0), threads)
            sol = backward_regression(fit, drv, oracle.lam, degree, y0=y0, truncate=False)
            fresh = simulate_paths(model, grid, n_paths, (seed, i, r, 1), threads)
            rep = evaluate(sol, oracle, fresh)
            iy.append(rep.I_Y)
            iz.append(rep.I_Z)
        sy, sz = rep_stats(iy), rep_stats(iz)
        rows.append([h, sy.mean, sz.mean, sy.ci_lo, sy.ci_hi, sz.ci_lo, sz.ci_hi])
    return ["h", "I_Y", "I_Z", "ci_lo", "ci_hi", "I_Z_ci_lo", "I_Z_ci_hi"], rows


def smoothed(x, window: int):
    """Trailing moving average."""
    x = np.asarray(x, dtype=float)
    if window <= 1 or len(x) < window:
        return x
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[window:] - c[:-window]) / window
