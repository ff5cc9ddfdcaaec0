"""Closed-form Markovian solutions (y, z, lambda) of the two benchmark ergodic BSDEs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline
from scipy.special import erfcx

from .errors import ValidityViolated
from .sde import FactorModel

SQRT2 = math.sqrt(2.0)
SQRT_2PI = math.sqrt(2.0 * math.pi)


def normal_cdf(x):
    """Standard normal CDF through the complementary error function."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / SQRT2)
    from scipy.special import erfc
    return 0.5 * erfc(-np.asarray(x, dtype=float) / SQRT2)


@dataclass
class OracleSolution:
    """Exact triplet with y(0) fixed by the benchmark's own normalisation.

    ``y`` and ``z`` accept scalars or arrays; ``z`` returns shape (..., d).
    """

    y: Callable
    z: Callable
    lam: float
    kappa: np.ndarray
    validity: dict = field(default_factory=dict)
    name: str = ""
    dy: Callable | None = None

    @property
    def dim(self) -> int:
        return len(self.kappa)

    def check(self, model: FactorModel):
        rate = self.validity.get("rate")
        if rate is not None and (model.drift_kind != "ou" or not math.isclose(model.rate, rate, rel_tol=1e-12)):
            raise ValidityViolated(f"{self.name} requires an OU factor with rate {rate}")
        kn = self.validity.get("kappa_norm")
        if kn is not None and not math.isclose(model.kappa_norm, kn, rel_tol=1e-12):
            raise ValidityViolated(f"{self.name} was built for |kappa| = {kn}")
        return self

    def Y(self, v, y0: float, v0: float):
        """Solution pinned at Y_0 = y0: y(v) + y0 - y(v0)."""
        return self.y(v) + (y0 - float(self.y(v0)))


def example1_solution(c_v, mu, kappa, literal_z: bool = False) -> OracleSolution:
    """Benchmark with F(v) = c_v v exp(-v^2/2) on an OU factor of rate ``mu``.

    By default z = kappa * y' (the Markovian relation). ``literal_z`` returns
    the scalar c e^{-v^2/2} in the first coordinate instead.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    kap = np.atleast_1d(np.asarray(kappa, dtype=float))
    kn2 = float(kap @ kap)
    c = c_v / (mu + 0.5 * kn2)

    def y(v):
        return c * SQRT_2PI * normal_cdf(v)

    def z(v):
        v = np.asarray(v, dtype=float)
        g = c * np.exp(-0.5 * v * v)
        if literal_z:
            out = np.zeros(v.shape + (len(kap),))
            out[..., 0] = g
            return out
        return g[..., None] * kap

    return OracleSolution(y, z, 0.0, kap, {"rate": mu, "kappa_norm": math.sqrt(kn2)}, "example1",
                          dy=lambda v: c * np.exp(-0.5 * np.asarray(v, dtype=float) ** 2))


class _Example2Y:
    """y for the second benchmark, cached on [-L, L] and interpolated.

    Node values come from 5-point Gauss-Legendre on each cell of the grid,
    the interpolant is cubic Hermite with the exact derivative z/kappa.
    Points outside the grid fall back to adaptive quadrature.
    """

    def __init__(self, dz, half_width=8.0, step=1e-3):
        self.dz = dz
        n = int(round(half_width / step))
        self.nodes = np.linspace(-half_width, half_width, 2 * n + 1)
        gl_x, gl_w = np.polynomial.legendre.leggauss(5)
        left, right = self.nodes[:-1], self.nodes[1:]
        mid, half = 0.5 * (left + right), 0.5 * (right - left)
        pts = mid[:, None] + half[:, None] * gl_x[None, :]
        cell = (dz(pts) * gl_w[None, :]).sum(axis=1) * half
        cum = np.concatenate([[0.0], np.cumsum(cell)])
        vals = cum - cum[n]  # y(0) = 0
        self.half_width = half_width
        self.spline = CubicHermiteSpline(self.nodes, vals, dz(self.nodes))

    def exact(self, v: float) -> float:
        val, _ = integrate.quad(lambda u: float(self.dz(u)), 0.0, v, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val

    def __call__(self, v):
        scalar = np.ndim(v) == 0
        v = np.atleast_1d(np.asarray(v, dtype=float))
        out = self.spline(np.clip(v, -self.half_width, self.half_width))
        outside = np.abs(v) > self.half_width
        for i in np.flatnonzero(outside):
            out[i] = self.exact(v[i])
        return float(out[0]) if scalar else out


def example2_solution(c_v, kappa, model: FactorModel | None = None) -> OracleSolution:
    """Benchmark with F(v) = c_v |v| exp(-v^2/2); requires an OU rate of |kappa|^2 / 2.

    A1 = c_v/|kappa|^2 and A2 = 2 A1. Products of the form e^{v^2/2}(1 - Phi(v))
    are evaluated with the scaled complementary error function.
    """
    kap = np.atleast_1d(np.asarray(kappa, dtype=float))
    kn2 = float(kap @ kap)
    a1 = c_v / kn2

    def dz(v):
        # y'(v): e^{v^2/2}(A1 e^{-v^2} + 2 A1 (Phi(v) - 1)) for v >= 0, odd extension below
        v = np.asarray(v, dtype=float)
        av = np.abs(v)
        return np.sign(v) * a1 * (np.exp(-0.5 * av * av) - erfcx(av / SQRT2))

    y = _Example2Y(dz)

    def z(v):
        return np.asarray(dz(v))[..., None] * kap

    sol = OracleSolution(y, z, c_v / SQRT_2PI, kap, {"rate": 0.5 * kn2, "kappa_norm": math.sqrt(kn2)},
                         "example2", dy=dz)
    if model is not None:
        sol.check(model)
    return sol
