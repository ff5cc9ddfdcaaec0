"""GeBSDE and LAeBSDE neural solvers, the regression backward scheme, and oracle evaluation."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .drivers import Driver, sup_abs_f0
from .errors import NonFiniteLoss, SingularRegression
from .oracles import OracleSolution
from .sde import FactorModel, PathBundle, TimeGrid, _as_seed, simulate_paths

SOLVER_KINDS = ("gebsde", "laebsde", "regression")


class DegreeReducedWarning(UserWarning):
    """Too few alive paths for the requested regression basis."""


@dataclass
class SolverConfig:
    kind: str
    driver: Driver
    model: FactorModel
    grid: TimeGrid
    batch: int = 64
    steps: int = 1000
    lr: float = 3e-4
    seed: int | tuple = 0
    y0: float = 0.0
    eval_batch: int | None = None
    eval_every: int = 100
    resample: bool = False
    lr_decay: bool = False
    K: float | None = None
    zero_init: bool = False
    truncate_at: float | None = None
    threads: int = 1

    def __post_init__(self):
        if self.kind not in ("gebsde", "laebsde"):
            raise ValueError(f"unknown neural solver {self.kind!r}")
        if self.batch < 1 or self.steps < 0:
            raise ValueError("batch must be >= 1 and steps >= 0")
        if not math.isfinite(self.y0):
            raise ValueError("y0 must be finite")

    @property
    def n_eval(self) -> int:
        return self.eval_batch if self.eval_batch is not None else 100 * self.batch

    def bound_K(self) -> float:
        return self.K if self.K is not None else sup_abs_f0(self.driver)

    def effective_driver(self) -> Driver:
        return self.driver.with_truncation(self.truncate_at) if self.truncate_at else self.driver


@dataclass
class SolvedEbsde:
    """Output of any scheme: networks or regression tables, plus lambda and provenance."""

    kind: str
    lambda_bar: float
    y0: float
    driver: Driver
    v0: float
    state: nn.TrainState | None = None
    tables: dict | None = None
    y_fn: Callable | None = None
    z_fn: Callable | None = None
    log: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.driver.dim

    def z(self, v, i: int | None = None):
        """Z as a function of the factor, shape (..., d); the regression scheme needs the time index."""
        v = np.asarray(v, dtype=float)
        if self.kind == "gebsde":
            return nn.predict(self.state.nets[0], v.ravel()).reshape(v.shape + (self.dim,))
        if self.kind == "laebsde":
            return nn.predict(self.state.nets[1], v.ravel()).reshape(v.shape + (self.dim,))
        if self.kind == "regression":
            return _regression_z(self.tables, i, v)
        return np.asarray(self.z_fn(v), dtype=float)

    def y(self, v, pinned: bool = False):
        """Markovian Y for the LAeBSDE network or an injected function.

        ``pinned`` shifts the network so that Y(v0) = y0 exactly.
        """
        v = np.asarray(v, dtype=float)
        if self.kind == "laebsde":
            out = nn.predict(self.state.nets[0], v.ravel()).reshape(v.shape)
            if pinned:
                out = out + (self.y0 - float(nn.predict(self.state.nets[0], [self.v0])[0, 0]))
            return out
        if self.kind == "callable":
            return np.asarray(self.y_fn(v), dtype=float)
        raise ValueError(f"{self.kind} has no Markovian Y; use y_paths")

    def z_paths(self, b: PathBundle) -> np.ndarray:
        """Z at every grid point of every path, shape (n, L, d); zero past the return index."""
        L = b.n_max
        mask = b.alive()
        out = np.zeros((b.n_paths, L, self.dim))
        if self.kind == "regression":
            for i in range(min(L, len(self.tables["z"]))):
                rows = mask[:, i]
                if rows.any():
                    out[rows, i] = _regression_z(self.tables, i, b.v[rows, i])
            return out
        out[mask] = self.z(b.v[:, :L][mask])
        return out

    def y_paths(self, b: PathBundle, pinned: bool = False) -> np.ndarray:
        """Y at t_0..t_L along each path, shape (n, L+1)."""
        L = b.n_max
        if self.kind == "gebsde":
            z = self.z_paths(b)
            mask = b.alive()
            inc = self._increments(b, z, mask)
            return self.y0 + np.concatenate([np.zeros((b.n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)
        if self.kind == "regression":
            out = np.full((b.n_paths, L + 1), self.y0)
            mask = b.alive()
            for i in range(min(L, len(self.tables["e"]))):
                rows = mask[:, i]
                if rows.any():
                    out[rows, i] = _regression_y(self.tables, self.driver, self.lambda_bar, i, b.v[rows, i])
            return out
        return self.y(b.v[:, :L + 1], pinned=pinned)

    def _increments(self, b, z, mask):
        v = b.v[:, :b.n_max]
        f = self.driver(v, z)
        inc = -b.h * f + self.lambda_bar * b.h + np.sum(z * b.dw[:, :b.n_max], axis=-1)
        return np.where(mask, inc, 0.0)


# ---------------------------------------------------------------- neural losses


def _z_on_alive(net, b: PathBundle, mask):
    """Network output on alive grid points, scattered to (n, L, d), plus the forward cache."""
    v_alive = b.v[:, :b.n_max][mask]
    out, cache = nn.forward(net, v_alive)
    z = np.zeros((b.n_paths, b.n_max, out.shape[1]))
    z[mask] = out
    return z, cache


def gebsde_loss(state: nn.TrainState, drv: Driver, b: PathBundle, y0: float, with_grad: bool = True):
    """Mean of |Y_tau - y0|^2 over the batch and, optionally, its gradients.

    Because Z depends only on the pre-sampled factor, the recursion is a
    masked sum and one batched backward pass gives the network gradient.
    """
    net = state.nets[0]
    mask = b.alive()
    L, n, h = b.n_max, b.n_paths, b.h
    z, cache = _z_on_alive(net, b, mask)
    v = b.v[:, :L]
    dw = b.dw[:, :L]
    f = drv(v, z)
    inc = np.where(mask, -h * f + state.lambda_bar * h + np.sum(z * dw, axis=-1), 0.0)
    r = inc.sum(axis=1)  # Y_tau - y0
    loss = float(np.mean(r * r))
    if not with_grad:
        return loss, None, None
    c = 2.0 * r / n
    g_lambda = float(np.sum(c * h * b.n_ret))
    g_z = c[:, None, None] * (-h * drv.grad_z(v, z) + dw)
    grads = nn.backward(net, cache, g_z[mask])
    return loss, [grads], g_lambda


def laebsde_loss(state: nn.TrainState, drv: Driver, b: PathBundle, y0: float, with_grad: bool = True):
    """Sum over k = 1..max N_j of the alive-path mean of |Y(V_k) + phi_k - y0|^2.

    phi_k = sum_{i<k} (h F - lambda h - Z.dW)_i and the alive set at k is
    {j : N_j >= k}.
    """
    ynet, znet = state.nets
    L, n, h = b.n_max, b.n_paths, b.h
    mask = b.alive()
    z, zcache = _z_on_alive(znet, b, mask)
    v = b.v[:, :L]
    dw = b.dw[:, :L]
    psi = np.where(mask, h * drv(v, z) - state.lambda_bar * h - np.sum(z * dw, axis=-1), 0.0)
    phi = np.concatenate([np.zeros((n, 1)), np.cumsum(psi, axis=1)], axis=1)  # (n, L+1)
    alive_k = np.arange(L + 1)[None, :] <= b.n_ret[:, None]
    alive_k[:, 0] = False
    counts = alive_k.sum(axis=0)
    w = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
    yv = b.v[:, :L + 1][alive_k]
    yout, ycache = nn.forward(ynet, yv)
    r = np.zeros((n, L + 1))
    r[alive_k] = yout[:, 0] + phi[alive_k] - y0
    loss = float(np.sum(w[None, :] * r * r))
    if not with_grad:
        return loss, None, None
    G = 2.0 * w[None, :] * r * alive_k  # dL/dY_k = dL/dphi_k
    g_y = nn.backward(ynet, ycache, G[alive_k][:, None])
    # dL/dpsi_i = sum_{k > i} G_k
    S = np.cumsum(G[:, ::-1], axis=1)[:, ::-1][:, 1:]
    S = np.where(mask, S, 0.0)
    g_lambda = float(-h * S.sum())
    g_z = S[:, :, None] * (h * drv.grad_z(v, z) - dw)
    g_zn = nn.backward(znet, zcache, g_z[mask])
    return loss, [g_y, g_zn], g_lambda


LOSSES = {"gebsde": gebsde_loss, "laebsde": laebsde_loss}


def init_state(cfg: SolverConfig) -> nn.TrainState:
    d = cfg.driver.dim
    seed = _as_seed(cfg.seed)[0]
    if cfg.kind == "gebsde":
        nets = [nn.init_mlp(nn.layer_sizes(d), seed, cfg.zero_init)]
    else:
        nets = [nn.init_mlp(nn.layer_sizes(d, 1), seed, cfg.zero_init),
                nn.init_mlp(nn.layer_sizes(d), seed + 1, cfg.zero_init)]
    return nn.TrainState(nets, 0.0, cfg.lr, cfg.bound_K(), lr_decay=cfg.lr_decay)


def train(cfg: SolverConfig, state: nn.TrainState | None = None, callback=None) -> SolvedEbsde:
    """Adam on the GeBSDE or LAeBSDE loss.

    Training paths are sampled once with seed (seed, 0) unless ``resample``
    asks for a fresh batch (seed, 2, step) at every step; the evaluation set
    of ``n_eval`` paths uses seed (seed, 1).
    """
    seed = _as_seed(cfg.seed)
    drv = cfg.effective_driver()
    loss_fn = LOSSES[cfg.kind]
    state = state or init_state(cfg)
    fixed = simulate_paths(cfg.model, cfg.grid, cfg.batch, (*seed, 0), cfg.threads)
    eval_paths = simulate_paths(cfg.model, cfg.grid, cfg.n_eval, (*seed, 1), cfg.threads) if cfg.n_eval else None
    log = []
    t0 = time.perf_counter()
    start = state.step
    for it in range(start, cfg.steps + 1):
        batch = simulate_paths(cfg.model, cfg.grid, cfg.batch, (*seed, 2, it)) if cfg.resample else fixed
        loss, grads, g_lam = loss_fn(state, drv, batch, cfg.y0, with_grad=it < cfg.steps)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"non-finite loss at step {it}")
        if it % cfg.eval_every == 0 or it == cfg.steps:
            ev = loss_fn(state, drv, eval_paths, cfg.y0, with_grad=False)[0] if eval_paths else float("nan")
            row = {"step": it, "loss": loss, "eval_loss": ev, "lambda_bar": state.lambda_bar}
            log.append(row)
            if callback:
                callback(row)
        if it < cfg.steps:
            nn.adam_step(state, grads, g_lam)
    return SolvedEbsde(cfg.kind, state.lambda_bar, cfg.y0, drv, cfg.model.v0, state=state, log=log,
                       config={"seed": seed, "steps": cfg.steps, "batch": cfg.batch, "h": cfg.grid.h,
                               "runtime": time.perf_counter() - t0})


def gebsde_train(cfg: SolverConfig, **kw) -> SolvedEbsde:
    if cfg.kind != "gebsde":
        raise ValueError("config is not a GeBSDE config")
    return train(cfg, **kw)


def laebsde_train(cfg: SolverConfig, **kw) -> SolvedEbsde:
    if cfg.kind != "laebsde":
        raise ValueError("config is not a LAeBSDE config")
    return train(cfg, **kw)


# ---------------------------------------------------------------- regression backward scheme


def _design(u, degree):
    return u[:, None] ** np.arange(degree + 1)[None, :]


def _fit(x, targets, degree, ridge):
    """Ridge least squares on standardized monomials; returns (centre, scale, coef)."""
    centre = float(x.mean())
    scale = float(x.std())
    if scale < 1e-12:
        degree, scale = 0, 1.0
    X = _design((x - centre) / scale, degree)
    A = X.T @ X / len(x) + ridge * np.eye(degree + 1)
    rhs = X.T @ targets / len(x)
    coef = np.linalg.solve(A, rhs)
    if not np.all(np.isfinite(coef)):
        raise SingularRegression("regression produced non-finite coefficients")
    return centre, scale, coef


def _eval_fit(fit, v):
    centre, scale, coef = fit
    return _design((np.asarray(v, dtype=float) - centre) / scale, coef.shape[0] - 1) @ coef


def _regression_z(tables, i, v):
    v = np.asarray(v, dtype=float)
    if i is None or i >= len(tables["z"]) or tables["z"][i] is None:
        return np.zeros(v.shape + (tables["dim"],))
    return _eval_fit(tables["z"][i], v.ravel()).reshape(v.shape + (tables["dim"],))


def _regression_y(tables, drv, lam, i, v):
    v = np.asarray(v, dtype=float).ravel()
    e = _eval_fit(tables["e"][i], v)
    z = _regression_z(tables, i, v)
    return e + tables["h"] * (drv(v, z) - lam)


def backward_regression(paths: PathBundle, drv: Driver, lambda_hat: float, basis_degree: int = 4,
                        y0: float = 0.0, z_max: float | None = None, truncate: bool = True,
                        ridge: float = 1e-8) -> SolvedEbsde:
    """Least-squares Monte Carlo version of the discrete backward scheme.

    From Y_{N_j} = y0, for i = L-1..0 on the paths still alive at t_i:
    Z_i = E[(Y_{i+1} - E[Y_{i+1}|V_i]) dW_i | V_i] / h and
    Y_i = E[Y_{i+1}|V_i] + h (F(V_i, Z_i) - lambda). Paths past their own
    return time stay at y0 with Z = 0. Subtracting the fitted conditional
    mean before the Z regression leaves the target unchanged and cuts its
    variance.
    """
    if truncate and z_max is not None:
        drv = drv.with_truncation(z_max)
    b = paths
    L, h, d = b.n_max, b.h, b.dims
    mask = b.alive()
    y_next = np.full(b.n_paths, float(y0))
    e_tab, z_tab = [None] * L, [None] * L
    y_all = np.full((b.n_paths, L + 1), float(y0))
    reduced = []
    for i in range(L - 1, -1, -1):
        rows = mask[:, i]
        cnt = int(rows.sum())
        if cnt == 0:
            continue
        deg = basis_degree
        if cnt < basis_degree + 1:
            deg = max(cnt - 1, 0)
            reduced.append(i)
        x = b.v[rows, i]
        tgt = y_next[rows]
        fe = _fit(x, tgt, deg, ridge)
        cond = _eval_fit(fe, x)
        fz = _fit(x, (tgt - cond)[:, None] * b.dw[rows, i] / h, deg, ridge)
        e_tab[i], z_tab[i] = fe, fz
        z = _eval_fit(fz, x).reshape(cnt, d)
        y_cur = y_next.copy()
        y_cur[rows] = cond + h * (drv(x, z) - lambda_hat)
        y_next = y_cur
        y_all[:, i] = y_cur
    if reduced:
        warnings.warn(f"basis degree reduced at {len(reduced)} late steps with fewer than "
                      f"{basis_degree + 1} alive paths", DegreeReducedWarning)
    tables = {"e": e_tab, "z": z_tab, "h": h, "dim": d, "degree": basis_degree}
    sol = SolvedEbsde("regression", float(lambda_hat), float(y0), drv, b.v0, tables=tables,
                      config={"n_paths": b.n_paths, "h": h, "degree": basis_degree})
    sol.config["y_in_sample"] = y_all
    return sol


# ---------------------------------------------------------------- evaluation


@dataclass
class ErrorReport:
    times: np.ndarray
    eps_y: np.ndarray
    I_Y: float
    I_Z: float
    lambda_error: float
    excluded: int
    n_paths: int
    err_h: float | None = None


def injected_solution(oracle: OracleSolution, drv: Driver, y0: float, v0: float) -> SolvedEbsde:
    """Wrap an oracle as a solution object (for consistency checks)."""
    return SolvedEbsde("callable", oracle.lam, y0, drv, v0,
                       y_fn=lambda v: oracle.Y(v, y0, v0), z_fn=oracle.z)


def evaluate(solution: SolvedEbsde, oracle: OracleSolution, paths: PathBundle, pinned: bool = False) -> ErrorReport:
    """Relative error on Y per t_i <= T, integral errors on [0, T], and the lambda error."""
    b = paths
    n_T, h = b.n_T, b.h
    y_hat = solution.y_paths(b, pinned=pinned)[:, :n_T + 1]
    y_true = oracle.Y(b.v[:, :n_T + 1], solution.y0, b.v0)
    ok = np.abs(y_true) >= 1e-10
    rel = np.where(ok, np.abs(y_true - y_hat) / np.where(ok, np.abs(y_true), 1.0), 0.0)
    cnt = ok.sum(axis=0)
    eps = np.where(cnt > 0, rel.sum(axis=0) / np.maximum(cnt, 1), np.nan)
    z_hat = solution.z_paths(b)[:, 1:n_T + 1]
    z_true = oracle.z(b.v[:, 1:n_T + 1])
    I_Y = float(np.mean(h * np.abs(y_true[:, 1:] - y_hat[:, 1:]).sum(axis=1)))
    I_Z = float(np.mean(h * np.sum((z_true - z_hat) ** 2, axis=-1).sum(axis=1)))
    return ErrorReport(h * np.arange(n_T + 1), eps, I_Y, I_Z, abs(solution.lambda_bar - oracle.lam),
                       int((~ok).sum()), b.n_paths)


def err_h(solution: SolvedEbsde, oracle: OracleSolution, paths: PathBundle) -> float:
    """Discrete Err(h): max_i E[1{t_i < tau} |Y - Ybar|^2] + E[sum_{i<N} h |Z - Zbar|^2], square-rooted."""
    b = paths
    L, h = b.n_max, b.h
    mask = b.alive()
    y_hat = solution.y_paths(b)[:, :L]
    y_true = oracle.Y(b.v[:, :L], solution.y0, b.v0)
    y_term = np.max(np.mean(np.where(mask, (y_true - y_hat) ** 2, 0.0), axis=0))
    z_hat = solution.z_paths(b)
    z_true = oracle.z(b.v[:, :L])
    z_term = np.mean(h * np.where(mask, np.sum((z_true - z_hat) ** 2, axis=-1), 0.0).sum(axis=1))
    return float(math.sqrt(y_term + z_term))
