"""Forward utilities U(t, x), optimal strategies and wealth simulation from a solved eBSDE."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidCombination
from .sde import PathBundle
from .solvers import SolvedEbsde

UTILITY_KINDS = ("log", "exp", "power")


@dataclass(frozen=True)
class UtilitySpec:
    """Homothetic initial utility u0 and the matching initial value y0 of the eBSDE.

    u0(x) = ln x + y0 (log), -exp(-gamma x + y0) (exp), x^delta/delta e^{y0} (power).
    """

    kind: str
    delta: float = 0.5
    gamma: float = 0.5
    y0: float = 0.0

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == "power" and not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.kind == "exp" and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind in ("log", "power") and np.any(x <= 0):
            raise DomainError(f"{self.kind} utility needs x > 0")
        return x

    def u0(self, x):
        x = self._check_x(x)
        return self.utility(x, self.y0)

    def utility(self, x, f):
        """Utility with the factor term f = Y_t - lambda t (so f = y0 at t = 0)."""
        x = self._check_x(x)
        if self.kind == "log":
            return np.log(x) + f
        if self.kind == "exp":
            return -np.exp(-self.gamma * x + f)
        return x ** self.delta / self.delta * np.exp(f)


def y0_from_initial_utility(kind: str, u0_x0: float, x0: float, delta: float = 0.5, gamma: float = 0.5) -> float:
    """Invert the utility form at x0: the initial value fixed by the agent's initial utility."""
    if kind == "power":
        if x0 <= 0 or u0_x0 <= 0:
            raise DomainError("power utility needs x0 > 0 and u0(x0) > 0")
        return math.log(delta * u0_x0) - delta * math.log(x0)
    if kind == "log":
        if x0 <= 0:
            raise DomainError("log utility needs x0 > 0")
        return u0_x0 - math.log(x0)
    if kind == "exp":
        if u0_x0 >= 0:
            raise DomainError("exponential utility is negative")
        return math.log(-u0_x0) + gamma * x0
    raise ValueError(f"unknown utility kind {kind!r}")


def _check_match(sol: SolvedEbsde, spec: UtilitySpec):
    if sol.driver.kind != spec.kind:
        raise InvalidCombination(f"utility {spec.kind!r} does not match driver {sol.driver.kind!r}")


def factor_term(sol: SolvedEbsde, paths: PathBundle, n_steps: int) -> np.ndarray:
    """Y_t - lambda t on t_0..t_{n_steps}, with Y_0 = y0 exactly."""
    y = sol.y_paths(paths, pinned=True)[:, :n_steps + 1].copy()
    y[:, 0] = sol.y0
    return y - sol.lambda_bar * paths.h * np.arange(n_steps + 1)[None, :]


def utility_surface(sol: SolvedEbsde, spec: UtilitySpec, paths: PathBundle, x_grid, path_index: int = 0,
                    n_steps: int | None = None):
    """U(t, x) along one factor realization; returns (t, x, U) arrays of equal length."""
    _check_match(sol, spec)
    n_steps = paths.n_T if n_steps is None else n_steps
    x = spec._check_x(np.asarray(x_grid, dtype=float))
    one = paths.take([path_index])
    f = factor_term(sol, one, n_steps)[0]
    t = paths.h * np.arange(n_steps + 1)
    U = spec.utility(x[None, :], f[:, None])
    tt, xx = np.meshgrid(t, x, indexing="ij")
    return tt.ravel(), xx.ravel(), U.ravel()


def optimal_strategy(sol_or_z, spec: UtilitySpec, v, driver=None, i: int | None = None):
    """Optimal proportion (log, power) or amount (exp) as a d-vector per v.

    ``sol_or_z`` is a solved eBSDE or any callable v -> z(v) (then pass ``driver``).
    """
    if isinstance(sol_or_z, SolvedEbsde):
        _check_match(sol_or_z, spec)
        drv = sol_or_z.driver
        zfun = lambda w: sol_or_z.z(w, i)  # noqa: E731
    else:
        drv, zfun = driver, sol_or_z
    v = np.asarray(v, dtype=float)
    th = drv.theta(v)
    if spec.kind == "log":
        return drv.pi_set.project(th)
    z = np.asarray(zfun(v), dtype=float)
    if spec.kind == "exp":
        return drv.pi_set.project((z + th) / spec.gamma)
    return drv.pi_set.project((z + th) / (1.0 - spec.delta))


@dataclass
class WealthPath:
    x: np.ndarray  # (n, n_steps + 1)
    strategy: np.ndarray  # (n, n_steps, d)


def simulate_wealth(strategy, paths: PathBundle, x0: float, theta, n_steps: int | None = None,
                    proportional: bool = True) -> WealthPath:
    """Wealth driven by the paths' own Brownian increments.

    Proportional strategies use the exact log-Euler step
    X_{k+1} = X_k exp(pi.theta h - |pi|^2 h / 2 + pi.dW); amount strategies
    (exponential utility) use X_{k+1} = X_k + alpha.(theta h + dW).
    """
    if proportional and x0 <= 0:
        raise DomainError("proportional strategies need x0 > 0")
    n_steps = paths.n_T if n_steps is None else n_steps
    h = paths.h
    v = paths.v[:, :n_steps]
    dw = paths.dw[:, :n_steps]
    pi = np.asarray(strategy(v), dtype=float)
    th = theta(v)
    if proportional:
        inc = np.sum(pi * th, axis=-1) * h - 0.5 * np.sum(pi * pi, axis=-1) * h + np.sum(pi * dw, axis=-1)
        logx = math.log(x0) + np.concatenate([np.zeros((paths.n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)
        x = np.exp(logx)
    else:
        inc = np.sum(pi * (th * h + dw), axis=-1)
        x = x0 + np.concatenate([np.zeros((paths.n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)
    return WealthPath(x, pi)


@dataclass
class MartingaleReport:
    times: np.ndarray
    mean_u: np.ndarray
    u0: float
    max_rel_drift: float
    slope: float  # least-squares trend of mean_u in t, relative to |u0|


def martingale_check(sol: SolvedEbsde, spec: UtilitySpec, paths: PathBundle, x0: float, strategy=None,
                     n_steps: int | None = None) -> MartingaleReport:
    """m(t) = mean_j U(t, X^j_t) along the optimal (or a given) strategy, compared with U(0, x0)."""
    _check_match(sol, spec)
    n_steps = paths.n_T if n_steps is None else n_steps
    if strategy is None:
        strategy = lambda w: optimal_strategy(sol, spec, w)  # noqa: E731
    w = simulate_wealth(strategy, paths, x0, sol.driver.theta, n_steps, proportional=spec.kind != "exp")
    f = factor_term(sol, paths, n_steps)
    m = spec.utility(w.x, f).mean(axis=0)
    u0 = float(spec.u0(x0))
    t = paths.h * np.arange(n_steps + 1)
    rel = np.abs(m - u0) / abs(u0)
    slope = float(np.polyfit(t, m / abs(u0), 1)[0])
    return MartingaleReport(t, m, u0, float(rel.max()), slope)
