"""Monte Carlo estimators of the ergodic cost lambda over random return horizons.

Every estimator reduces a path bundle to a few per-path numbers (Riemann sums
up to the return index N_j and tau_j = h N_j), so large samples are processed
chunk by chunk and concatenated in path order.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.special import logsumexp

from .drivers import Driver, RiskPremiumSpec
from .errors import DriverDependsOnZ, RootNotBracketed
from .sde import FactorModel, PathBundle, TimeGrid, _as_seed, iter_path_chunks

METHODS = ("ratio", "linear_exp", "cole_hopf")


class LambdaBoundWarning(UserWarning):
    """The estimate lies outside the a priori bound |lambda| <= K."""


@dataclass
class LambdaEstimate:
    """Estimated ergodic cost.

    ``variance`` is the sample variance across repetitions when ``reps > 1``,
    otherwise a delta-method variance of the single estimate. ``std_error`` is
    always the standard error of ``value``.
    """

    value: float
    variance: float
    n_paths: int
    h: float
    method: str
    runtime: float = 0.0
    reps: int = 1
    values: tuple = field(default_factory=tuple)
    std_error: float = float("nan")


def _bundles(paths) -> list[PathBundle]:
    if isinstance(paths, PathBundle):
        return [paths]
    return list(paths)


def _masked_steps(b: PathBundle):
    """V at the left end of each alive step, the increments, and the mask."""
    L = b.n_max
    return b.v[:, :L], b.dw[:, :L], b.alive()


# ---------------------------------------------------------------- ratio


def ratio_parts(drv, b: PathBundle):
    """Per-path (sum_i h F(V_i), tau) over i < N_j."""
    v, _, mask = _masked_steps(b)
    f = np.asarray(drv(v), dtype=float)
    return b.h * np.where(mask, f, 0.0).sum(axis=1), b.tau


def _ratio_from_parts(a, tau):
    lam = a.sum() / tau.sum()
    m = len(a)
    psi = a - lam * tau
    var = float(psi.var(ddof=1) / (m * tau.mean() ** 2)) if m > 1 else float("nan")
    return float(lam), var


def lambda_ratio(drv, paths, grid: TimeGrid | None = None) -> LambdaEstimate:
    """Pooled ratio sum_m sum_i h F(V^m_i) / sum_m tau_m for a z-free driver."""
    if getattr(drv, "depends_on_z", False):
        raise DriverDependsOnZ(f"the ratio estimator needs a z-free driver, got {drv.kind!r}")
    t0 = time.perf_counter()
    bs = _bundles(paths)
    parts = [ratio_parts(drv, b) for b in bs]
    a = np.concatenate([p[0] for p in parts])
    tau = np.concatenate([p[1] for p in parts])
    lam, var = _ratio_from_parts(a, tau)
    return LambdaEstimate(lam, var, len(a), bs[0].h, "ratio", time.perf_counter() - t0,
                          std_error=math.sqrt(var))


# ---------------------------------------------------------------- linear (exponential utility)


def linear_exp_parts(theta: RiskPremiumSpec, b: PathBundle):
    """Per-path (Gamma_tau, int Gamma |theta|^2 ds, int Gamma ds) with log-exact Gamma."""
    v, dw, mask = _masked_steps(b)
    th = theta(v)
    th2 = np.sum(th * th, axis=-1)
    inc = -np.sum(th * dw, axis=-1) - 0.5 * th2 * b.h
    inc = np.where(mask, inc, 0.0)
    log_g = np.concatenate([np.zeros((b.n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)
    g = np.exp(log_g)
    g_left = np.where(mask, g[:, :-1], 0.0)
    return g[:, -1], b.h * (g_left * th2).sum(axis=1), b.h * g_left.sum(axis=1)


def _linear_exp_from_parts(g_tau, q, i, y0):
    lam = (np.mean(y0 * g_tau - 0.5 * q) - y0) / i.mean()
    m = len(g_tau)
    psi = y0 * g_tau - 0.5 * q - y0 - lam * i
    var = float(psi.var(ddof=1) / (m * i.mean() ** 2)) if m > 1 else float("nan")
    return float(lam), var


def lambda_linear_exp(theta: RiskPremiumSpec, paths, grid: TimeGrid | None = None,
                      y0: float = 0.0) -> LambdaEstimate:
    """lambda = (E[y0 Gamma_tau - 1/2 int Gamma |theta|^2] - y0) / E[int Gamma] with dGamma = -Gamma theta dW."""
    t0 = time.perf_counter()
    bs = _bundles(paths)
    parts = [linear_exp_parts(theta, b) for b in bs]
    g_tau, q, i = (np.concatenate([p[k] for p in parts]) for k in range(3))
    lam, var = _linear_exp_from_parts(g_tau, q, i, y0)
    return LambdaEstimate(lam, var, len(g_tau), bs[0].h, "linear_exp", time.perf_counter() - t0,
                          std_error=math.sqrt(var))


# ---------------------------------------------------------------- Cole-Hopf


def cole_hopf_parts(beta: float, l: Callable, a: Callable, b: PathBundle):
    """Per-path (log Gamma_tau(0), tau).

    log Gamma increments are beta l(V) h - |a(V)|^2 h / 2 + a(V).dW; lambda
    enters only through the factor exp(-beta lambda tau).
    """
    v, dw, mask = _masked_steps(b)
    av = np.asarray(a(v), dtype=float)
    inc = beta * np.asarray(l(v), dtype=float) * b.h - 0.5 * np.sum(av * av, axis=-1) * b.h \
        + np.sum(av * dw, axis=-1)
    return np.where(mask, inc, 0.0).sum(axis=1), b.tau


def gamma_mean(log_g0, tau, beta: float, lam: float) -> float:
    """mean_m Gamma^m(lambda), computed in log space."""
    return float(np.exp(logsumexp(log_g0 - beta * lam * tau) - math.log(len(tau))))


def _g_and_slope(log_g0, tau, beta, lam):
    w = np.exp(log_g0 - beta * lam * tau - math.log(len(tau)))
    return float(w.sum()) - 1.0, -beta * float((w * tau).sum())


def solve_gamma_root(log_g0, tau, beta: float, K: float, method: str = "newton",
                     max_newton: int = 50, tol: float = 1e-13) -> float:
    """Root of g(lambda) = mean Gamma(lambda) - 1 on [-K, K].

    Newton from 0 kept inside a shrinking bracket; a bisection step is taken
    whenever Newton leaves the bracket or the slope is below 1e-14, and
    plain bisection finishes the job after ``max_newton`` iterations.
    """
    lo, hi = -float(K), float(K)
    g_lo, _ = _g_and_slope(log_g0, tau, beta, lo)
    g_hi, _ = _g_and_slope(log_g0, tau, beta, hi)
    if g_lo * g_hi > 0:
        raise RootNotBracketed(f"g(-K)={g_lo:.3e} and g(K)={g_hi:.3e} share a sign (K={K})")
    if g_lo == 0:
        return lo
    if g_hi == 0:
        return hi
    sign_lo = g_lo > 0

    def shrink(x, gx):
        nonlocal lo, hi
        if (gx > 0) == sign_lo:
            lo = x
        else:
            hi = x

    if method == "newton":
        x = min(max(0.0, lo), hi)
        for _ in range(max_newton):
            gx, dg = _g_and_slope(log_g0, tau, beta, x)
            if gx == 0.0:
                return x
            shrink(x, gx)
            if abs(dg) < 1e-14:
                x = 0.5 * (lo + hi)
                continue
            nxt = x - gx / dg
            if not lo < nxt < hi:
                nxt = 0.5 * (lo + hi)
            if abs(nxt - x) <= tol * (1.0 + abs(x)):
                return nxt
            x = nxt
    elif method != "bisect":
        raise ValueError(f"unknown root method {method!r}")
    while hi - lo > tol * (1.0 + max(abs(lo), abs(hi))):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        gm, _ = _g_and_slope(log_g0, tau, beta, mid)
        if gm == 0.0:
            return mid
        shrink(mid, gm)
    return 0.5 * (lo + hi)


def _cole_hopf_from_parts(log_g0, tau, beta, K, method="newton"):
    lam = solve_gamma_root(log_g0, tau, beta, K, method)
    m = len(tau)
    w = np.exp(log_g0 - beta * lam * tau)
    slope = -beta * float(np.mean(w * tau))
    var = float(w.var(ddof=1) / (m * slope * slope)) if m > 1 else float("nan")
    return lam, var


def lambda_colehopf_general(beta: float, l: Callable, a: Callable, paths, grid: TimeGrid | None = None,
                            K: float = 1.0, method: str = "newton") -> LambdaEstimate:
    """Root of mean_m Gamma^m(lambda) = 1 for dGamma/Gamma = beta (l - lambda) dt + a dW."""
    if beta == 0:
        raise ValueError("beta must be non-zero")
    t0 = time.perf_counter()
    bs = _bundles(paths)
    parts = [cole_hopf_parts(beta, l, a, b) for b in bs]
    log_g0 = np.concatenate([p[0] for p in parts])
    tau = np.concatenate([p[1] for p in parts])
    lam, var = _cole_hopf_from_parts(log_g0, tau, beta, K, method)
    return LambdaEstimate(lam, var, len(tau), bs[0].h, "cole_hopf", time.perf_counter() - t0,
                          std_error=math.sqrt(var))


def power_coefficients(delta: float, theta: RiskPremiumSpec):
    """(beta, l, a) of the Cole-Hopf transform for the unconstrained power driver."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    beta = 1.0 / (1.0 - delta)
    c = delta / (2.0 * (1.0 - delta))
    r = delta / (1.0 - delta)

    def l(v):
        th = theta(v)
        return c * np.sum(th * th, axis=-1)

    def a(v):
        return r * theta(v)

    return beta, l, a


def lambda_colehopf_power(delta: float, theta: RiskPremiumSpec, paths, grid: TimeGrid | None = None,
                          K: float = 1.0, method: str = "newton") -> LambdaEstimate:
    beta, l, a = power_coefficients(delta, theta)
    return lambda_colehopf_general(beta, l, a, paths, grid, K, method)


def gamma_terminal(beta: float, l: Callable, a: Callable, paths, lam: float) -> np.ndarray:
    """Gamma_{0,tau}(lambda) per path."""
    parts = [cole_hopf_parts(beta, l, a, b) for b in _bundles(paths)]
    log_g0 = np.concatenate([p[0] for p in parts])
    tau = np.concatenate([p[1] for p in parts])
    return np.exp(log_g0 - beta * lam * tau)


# ---------------------------------------------------------------- experiment driver


def default_method(drv: Driver) -> str:
    if not drv.depends_on_z:
        return "ratio"
    if not drv.pi_set.is_full:
        raise DriverDependsOnZ("no Monte Carlo representation for constrained z-dependent drivers")
    return "linear_exp" if drv.kind == "exp" else "cole_hopf"


def _one_sample(drv: Driver, method: str, chunks: Iterable[PathBundle], y0: float, K: float):
    if method == "ratio":
        if drv.depends_on_z:
            raise DriverDependsOnZ(f"the ratio estimator needs a z-free driver, got {drv.kind!r}")
        parts = [ratio_parts(drv, b) for b in chunks]
        return _ratio_from_parts(*(np.concatenate([p[k] for p in parts]) for k in range(2)))
    if method == "linear_exp":
        parts = [linear_exp_parts(drv.theta, b) for b in chunks]
        return _linear_exp_from_parts(*(np.concatenate([p[k] for p in parts]) for k in range(3)), y0)
    if method == "cole_hopf":
        beta, l, a = power_coefficients(drv.delta, drv.theta)
        parts = [cole_hopf_parts(beta, l, a, b) for b in chunks]
        return _cole_hopf_from_parts(*(np.concatenate([p[k] for p in parts]) for k in range(2)), beta, K)
    raise ValueError(f"unknown method {method!r}")


def estimate_lambda(drv: Driver, model: FactorModel, grid: TimeGrid, n_paths: int, seed, reps: int = 1,
                    method: str | None = None, K: float | None = None, y0: float = 0.0,
                    threads: int = 1) -> LambdaEstimate:
    """Run ``reps`` independent samples of ``n_paths`` paths and average the estimates.

    Repetition r uses the seed (seed..., r), so results are identical for
    any thread count.
    """
    from .drivers import sup_abs_f0

    method = method or default_method(drv)
    if K is None:
        K = sup_abs_f0(drv)
    seed = _as_seed(seed)
    t0 = time.perf_counter()
    vals, variances = [], []
    for r in range(reps):
        chunks = iter_path_chunks(model, grid, n_paths, (*seed, r), threads)
        lam, var = _one_sample(drv, method, chunks, y0, K)
        vals.append(lam)
        variances.append(var)
    value = float(np.mean(vals))
    if reps > 1:
        variance = float(np.var(vals, ddof=1))
        se = math.sqrt(variance / reps)
    else:
        variance = variances[0]
        se = math.sqrt(variance)
    if abs(value) > K:
        warnings.warn(f"estimated lambda={value:.6g} exceeds the bound K={K:.6g}", LambdaBoundWarning)
    return LambdaEstimate(value, variance, n_paths, grid.h, method, time.perf_counter() - t0, reps,
                          tuple(vals), se)


@dataclass
class MartingaleTest:
    mean: float
    std_error: float
    z: float


def gamma_martingale_test(beta: float, l: Callable, a: Callable, fit_paths, fresh_paths, lam: float) -> MartingaleTest:
    """Check E[Gamma_tau(lambda)] = 1 on paths independent of those that produced ``lam``.

    ``lam`` is random, so the standard error combines the fresh-sample
    variance with the first-order error of the root, whose variance equals
    Var(Gamma)/M_fit: SE^2 = Var_fresh/M_fresh + Var_fit/M_fit.
    """
    g_new = gamma_terminal(beta, l, a, fresh_paths, lam)
    g_fit = gamma_terminal(beta, l, a, fit_paths, lam)
    se = math.sqrt(g_new.var(ddof=1) / len(g_new) + g_fit.var(ddof=1) / len(g_fit))
    mean = float(g_new.mean())
    return MartingaleTest(mean, se, (mean - 1.0) / se)
