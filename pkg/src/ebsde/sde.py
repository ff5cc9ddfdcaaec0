"""One-dimensional stochastic factor: Euler paths, return times, recurrence diagnostics."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.signal import lfilter

from .errors import DissipativityViolated, QuadratureNonConvergent, ReturnTimeCapExceeded

# Paths are generated in fixed-size chunks, each with its own counter-based
# stream. Every chunk always draws CHUNK rows per block, so the increments of
# path j depend only on (seed, j) and never on n_paths or the thread count.
CHUNK = 2048
BLOCK = 256


@dataclass(frozen=True)
class FactorModel:
    """Affine-drift factor dV = mu(V) dt + kappa . dW.

    ``drift_kind`` is ``"ou"`` (mu(v) = -rate * v) or ``"affine"``
    (mu(v) = slope * v + intercept, slope < 0).
    """

    kappa: tuple[float, ...]
    v0: float = 0.0
    drift_kind: str = "ou"
    rate: float = 1.0
    slope: float = -1.0
    intercept: float = 0.0

    def __post_init__(self):
        kappa = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        object.__setattr__(self, "kappa", tuple(float(k) for k in kappa))
        if self.drift_kind == "ou":
            if not self.rate > 0:
                raise ValueError("OU rate must be positive")
        elif self.drift_kind == "affine":
            if not self.slope < 0:
                raise ValueError("affine slope must be negative")
        else:
            raise ValueError(f"unknown drift kind {self.drift_kind!r}")

    @classmethod
    def ou(cls, rate, kappa, v0=0.0):
        return cls(kappa=tuple(np.atleast_1d(kappa)), v0=v0, drift_kind="ou", rate=rate)

    @classmethod
    def affine(cls, slope, intercept, kappa, v0=0.0):
        return cls(kappa=tuple(np.atleast_1d(kappa)), v0=v0, drift_kind="affine",
                   slope=slope, intercept=intercept)

    @property
    def dim(self) -> int:
        return len(self.kappa)

    @property
    def kappa_vec(self) -> np.ndarray:
        return np.asarray(self.kappa, dtype=float)

    @property
    def kappa_norm(self) -> float:
        return float(np.linalg.norm(self.kappa_vec))

    @property
    def a(self) -> float:
        return -self.rate if self.drift_kind == "ou" else self.slope

    @property
    def b(self) -> float:
        return 0.0 if self.drift_kind == "ou" else self.intercept

    @property
    def c_mu(self) -> float:
        return -self.a

    @property
    def stationary_mean(self) -> float:
        return -self.b / self.a

    @property
    def stationary_std(self) -> float:
        return self.kappa_norm / math.sqrt(2.0 * self.c_mu)


def drift_eval(model: FactorModel, v):
    return model.a * v + model.b


@dataclass(frozen=True)
class TimeGrid:
    h: float
    T: float = 1.0
    max_steps: int | None = None

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError("time step h must be positive")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError("minimal horizon T must be positive")
        if self.max_steps is not None and self.max_steps <= self.n_T:
            raise ValueError("max_steps must exceed n_T")

    @property
    def n_T(self) -> int:
        # floor(T/h) + 1; the small offset absorbs representation error in T/h
        return int(math.floor(self.T / self.h + 1e-9)) + 1

    @property
    def cap(self) -> int:
        return self.max_steps if self.max_steps is not None else 100 * self.n_T


@dataclass
class PathBundle:
    """Euler trajectories stored on a common padded grid.

    ``v[j, k]`` is the factor at t_k, ``dw[j, k]`` the increment on
    [t_k, t_{k+1}], ``n_ret[j]`` the return index N_j (tau_j = h * N_j).
    Entries past N_j are padding and must be masked by consumers.
    """

    v: np.ndarray
    dw: np.ndarray
    n_ret: np.ndarray
    h: float
    n_T: int
    v0: float
    seed: tuple = field(default=())

    @property
    def n_paths(self) -> int:
        return self.v.shape[0]

    @property
    def dims(self) -> int:
        return self.dw.shape[2]

    @property
    def n_max(self) -> int:
        return int(self.n_ret.max()) if self.n_paths else 0

    @property
    def tau(self) -> np.ndarray:
        return self.h * self.n_ret

    def alive(self) -> np.ndarray:
        """Boolean (n_paths, n_max) mask of steps k < N_j."""
        return np.arange(self.n_max)[None, :] < self.n_ret[:, None]

    def take(self, idx) -> "PathBundle":
        idx = np.asarray(idx)
        n_ret = self.n_ret[idx]
        L = int(n_ret.max()) if n_ret.size else 0
        return PathBundle(self.v[idx, :L + 1], self.dw[idx, :L], n_ret, self.h, self.n_T,
                          self.v0, self.seed)


def _as_seed(seed) -> tuple:
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def _chunk_rng(seed: tuple, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([*seed, chunk])))


def euler_from_increments(model: FactorModel, h: float, dw: np.ndarray, v_start=None) -> np.ndarray:
    """Run the Euler recursion on given increments ``dw`` of shape (n, L, d).

    Returns the (n, L+1) array of factor values including the start point.
    """
    n, L, _ = dw.shape
    v_start = np.full(n, model.v0) if v_start is None else np.asarray(v_start, dtype=float)
    x = model.b * h + dw @ model.kappa_vec
    c = 1.0 + model.a * h
    out = np.empty((n, L + 1))
    out[:, 0] = v_start
    if L:
        out[:, 1:], _ = lfilter([1.0], [1.0, -c], x, axis=1, zi=(c * v_start)[:, None])
    return out


def _simulate_chunk(model: FactorModel, grid: TimeGrid, n: int, seed: tuple, chunk: int,
                    keep: bool = True):
    rng = _chunk_rng(seed, chunk)
    d, h, n_T, cap = model.dim, grid.h, grid.n_T, grid.cap
    sqrt_h = math.sqrt(h)
    v_prev = np.full(n, float(model.v0))
    n_ret = np.zeros(n, dtype=np.int64)
    crossed = np.zeros(n, dtype=bool)
    ref = None
    v_blocks, dw_blocks = [np.full((n, 1), float(model.v0))], []
    k = 0
    while True:
        dw = rng.standard_normal((CHUNK, BLOCK, d))[:n] * sqrt_h
        vb = euler_from_increments(model, h, dw, v_prev)[:, 1:]
        idx = np.arange(k + 1, k + BLOCK + 1)
        if ref is None and idx[-1] >= n_T:
            ref = vb[:, n_T - k - 1] - model.v0
        if ref is not None:
            test = idx > n_T
            hit = (ref[:, None] * (vb[:, test] - model.v0) <= 0) & ~crossed[:, None]
            any_hit = hit.any(axis=1)
            first = idx[test][np.argmax(hit, axis=1)]
            n_ret[any_hit] = first[any_hit]
            crossed |= any_hit
        v_blocks.append(vb)
        dw_blocks.append(dw)
        v_prev = vb[:, -1]
        k += BLOCK
        if ref is not None and crossed.all():
            break
        if k >= cap:
            break
    if not crossed.all() or n_ret.max() > cap:
        raise ReturnTimeCapExceeded(
            f"a path did not return to v0={model.v0} within max_steps={cap} (h={h}, T={grid.T})")
    L = int(n_ret.max())
    v = np.concatenate(v_blocks, axis=1)[:, :L + 1]
    dws = np.concatenate(dw_blocks, axis=1)[:, :L]
    return v, dws, n_ret


def iter_path_chunks(model: FactorModel, grid: TimeGrid, n_paths: int, seed,
                     threads: int = 1) -> Iterator[PathBundle]:
    """Yield the bundle chunk by chunk, in path order, without holding all of it."""
    seed = _as_seed(seed)
    n_chunks = -(-n_paths // CHUNK)
    sizes = [min(CHUNK, n_paths - c * CHUNK) for c in range(n_chunks)]

    def run(c):
        v, dw, n_ret = _simulate_chunk(model, grid, sizes[c], seed, c)
        return PathBundle(v, dw, n_ret, grid.h, grid.n_T, model.v0, seed)

    if threads <= 1 or n_chunks <= 1:
        for c in range(n_chunks):
            yield run(c)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            # map preserves submission order, so reductions stay deterministic
            for c0 in range(0, n_chunks, threads):
                yield from pool.map(run, range(c0, min(c0 + threads, n_chunks)))


def concat_bundles(parts: Sequence[PathBundle]) -> PathBundle:
    L = max(p.n_max for p in parts)
    n = sum(p.n_paths for p in parts)
    d = parts[0].dims
    v = np.empty((n, L + 1))
    dw = np.zeros((n, L, d))
    row = 0
    for p in parts:
        m, Lp = p.n_paths, p.v.shape[1] - 1
        v[row:row + m, :Lp + 1] = p.v
        v[row:row + m, Lp + 1:] = p.v[:, -1:]
        dw[row:row + m, :Lp] = p.dw
        row += m
    n_ret = np.concatenate([p.n_ret for p in parts])
    first = parts[0]
    return PathBundle(v, dw, n_ret, first.h, first.n_T, first.v0, first.seed)


def simulate_paths(model: FactorModel, grid: TimeGrid, n_paths: int, seed,
                   threads: int = 1) -> PathBundle:
    return concat_bundles(list(iter_path_chunks(model, grid, n_paths, seed, threads)))


def check_dissipativity(model: FactorModel, n_samples: int, seed=0, scale: float = 10.0) -> float:
    """Smallest sampled ratio -(mu(v)-mu(w))(v-w)/|v-w|^2 over random pairs."""
    if n_samples < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    v = rng.normal(model.stationary_mean, scale, n_samples)
    w = rng.normal(model.stationary_mean, scale, n_samples)
    keep = v != w
    v, w = v[keep], w[keep]
    ratio = -(drift_eval(model, v) - drift_eval(model, w)) * (v - w) / (v - w) ** 2
    est = float(ratio.min())
    if est < 0:
        raise DissipativityViolated(f"sampled dissipativity constant {est} < 0")
    return est


@dataclass(frozen=True)
class ExpMomentBounds:
    b_plus: float
    b_minus: float
    argmax_plus: float
    argmax_minus: float

    @property
    def gamma_threshold(self) -> float:
        return 1.0 / (4.0 * max(self.b_plus, self.b_minus))


def _log_scale(model: FactorModel, x):
    # log s(x) = -2/|kappa|^2 * int_0^x mu(u) du for an affine drift
    return -(model.a * x * x + 2.0 * model.b * x) / model.kappa_norm ** 2


def _quad(f, lo, hi):
    val, err = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-10, limit=200)
    if not math.isfinite(val) or err > 1e-8 * max(abs(val), 1e-300):
        raise QuadratureNonConvergent(f"quadrature on [{lo}, {hi}] did not converge (err={err})")
    return val


def exp_moment_bounds(model: FactorModel, v0: float | None = None, n_mesh: int = 400,
                      width: float = 12.0) -> ExpMomentBounds:
    """Scale/speed-measure bounds B+ and B- on the exponential moments of the return time.

    The products are evaluated with both factors normalised by s(x), which
    keeps every integrand in [0, 1].
    """
    v0 = model.v0 if v0 is None else v0
    k2 = model.kappa_norm ** 2
    sd = model.stationary_std
    hi_edge = max(v0, model.stationary_mean) + width * sd
    lo_edge = min(v0, model.stationary_mean) - width * sd

    def prod_plus(x):
        lx = _log_scale(model, x)
        left = _quad(lambda u: math.exp(_log_scale(model, u) - lx), v0, x)
        right = _quad(lambda u: math.exp(lx - _log_scale(model, u)), x, hi_edge + width * sd)
        return left * right * 2.0 / k2

    def prod_minus(x):
        lx = _log_scale(model, x)
        left = _quad(lambda u: math.exp(_log_scale(model, u) - lx), x, v0)
        right = _quad(lambda u: math.exp(lx - _log_scale(model, u)), lo_edge - width * sd, x)
        return left * right * 2.0 / k2

    def sup(fun, a, b):
        xs = np.linspace(a, b, n_mesh)
        vals = np.array([fun(x) for x in xs])
        i = int(np.argmax(vals))
        lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, n_mesh - 1)]
        res = optimize.minimize_scalar(lambda x: -fun(x), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10})
        if res.success and -res.fun > vals[i]:
            return float(-res.fun), float(res.x)
        return float(vals[i]), float(xs[i])

    bp, xp = sup(prod_plus, v0, hi_edge)
    bm, xm = sup(prod_minus, lo_edge, v0)
    if not (math.isfinite(bp) and math.isfinite(bm)):
        raise QuadratureNonConvergent("non-finite exponential-moment bound")
    return ExpMomentBounds(bp, bm, xp, xm)
