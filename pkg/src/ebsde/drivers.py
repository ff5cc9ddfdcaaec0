"""Generators of the ergodic BSDEs: homothetic utilities and two benchmark drivers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BoundUnavailable
from .sde import FactorModel


@dataclass(frozen=True)
class ConvexSet:
    """Closed convex constraint set: ``full``, ``box`` or ``axis`` (coordinate subspace)."""

    kind: str = "full"
    lo: tuple = ()
    hi: tuple = ()
    free: tuple = ()

    def __post_init__(self):
        if self.kind == "box":
            if len(self.lo) != len(self.hi) or np.any(np.asarray(self.lo) > np.asarray(self.hi)):
                raise ValueError("box requires lo <= hi componentwise")
        elif self.kind not in ("full", "axis"):
            raise ValueError(f"unknown constraint set {self.kind!r}")

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def box(cls, lo, hi):
        return cls("box", lo=tuple(map(float, lo)), hi=tuple(map(float, hi)))

    @classmethod
    def axis(cls, free):
        return cls("axis", free=tuple(int(i) for i in free))

    @property
    def is_full(self) -> bool:
        return self.kind == "full"

    def project(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "full":
            return x.copy()
        if self.kind == "box":
            return np.clip(x, self.lo, self.hi)
        out = np.zeros_like(x)
        idx = list(self.free)
        out[..., idx] = x[..., idx]
        return out

    def dist2(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum((x - self.project(x)) ** 2, axis=-1)


def project(pi_set: ConvexSet, x):
    return pi_set.project(x)


def dist2(pi_set: ConvexSet, x):
    return pi_set.dist2(x)


@dataclass(frozen=True)
class RiskPremiumSpec:
    """Market price of risk theta(v) as a d-vector.

    ``truncated_linear``: clamp(slope * v, -bound, bound) placed in coordinate
    ``coord``, zeros elsewhere. ``constant``: a fixed vector.
    """

    kind: str = "truncated_linear"
    slope: float = 0.8
    bound: float = 3.0
    dim: int = 1
    coord: int = 0
    value: tuple = ()

    @classmethod
    def truncated_linear(cls, slope, bound, dim=1, coord=0):
        return cls("truncated_linear", slope=float(slope), bound=float(bound), dim=dim, coord=coord)

    @classmethod
    def constant(cls, value):
        value = tuple(float(x) for x in np.atleast_1d(value))
        return cls("constant", dim=len(value), value=value)

    @property
    def sup_norm(self) -> float:
        if self.kind == "constant":
            return float(np.linalg.norm(self.value))
        return self.bound

    @property
    def lipschitz(self) -> float:
        return 0.0 if self.kind == "constant" else abs(self.slope)

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "constant":
            return np.broadcast_to(np.asarray(self.value), v.shape + (self.dim,)).copy()
        out = np.zeros(v.shape + (self.dim,))
        out[..., self.coord] = np.clip(self.slope * v, -self.bound, self.bound)
        return out


def theta_eval(spec: RiskPremiumSpec, v):
    return spec(v)


DRIVER_KINDS = ("log", "exp", "power", "example1", "example2")


@dataclass(frozen=True)
class Driver:
    """Generator F(v, z). Utility drivers carry (pi_set, theta); examples carry c_v.

    ``truncate_at`` composes F with the projection of z on the ball of that
    radius; it is off (None) unless requested.
    """

    kind: str
    dim: int = 1
    gamma: float = 0.5
    delta: float = 0.5
    c_v: float = 1.0
    pi_set: ConvexSet = field(default_factory=ConvexSet.full)
    theta: RiskPremiumSpec = field(default_factory=RiskPremiumSpec)
    truncate_at: float | None = None

    def __post_init__(self):
        if self.kind not in DRIVER_KINDS:
            raise ValueError(f"unknown driver kind {self.kind!r}")
        if self.kind == "exp" and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.kind == "power" and not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.kind in ("log", "exp", "power") and self.theta.dim != self.dim:
            raise ValueError("theta dimension must equal the Brownian dimension")

    @classmethod
    def log(cls, theta, pi_set=None):
        return cls("log", dim=theta.dim, theta=theta, pi_set=pi_set or ConvexSet.full())

    @classmethod
    def exp(cls, gamma, theta, pi_set=None):
        return cls("exp", dim=theta.dim, gamma=gamma, theta=theta, pi_set=pi_set or ConvexSet.full())

    @classmethod
    def power(cls, delta, theta, pi_set=None):
        return cls("power", dim=theta.dim, delta=delta, theta=theta, pi_set=pi_set or ConvexSet.full())

    @classmethod
    def example1(cls, c_v, dim=1):
        return cls("example1", dim=dim, c_v=c_v)

    @classmethod
    def example2(cls, c_v, dim=1):
        return cls("example2", dim=dim, c_v=c_v)

    @property
    def depends_on_z(self) -> bool:
        return self.kind in ("exp", "power")

    def with_truncation(self, radius):
        return replace(self, truncate_at=radius)

    def _truncate(self, z):
        if self.truncate_at is None:
            return z
        return truncate_z(self.truncate_at, z)

    def _raw(self, v, z):
        v = np.asarray(v, dtype=float)
        if self.kind == "example1":
            return self.c_v * v * np.exp(-0.5 * v * v)
        if self.kind == "example2":
            return self.c_v * np.abs(v) * np.exp(-0.5 * v * v)
        th = self.theta(v)
        if self.kind == "log":
            return -0.5 * self.pi_set.dist2(th) + 0.5 * np.sum(th * th, axis=-1)
        z = np.asarray(z, dtype=float)
        s = z + th
        if self.kind == "exp":
            g = self.gamma
            return (0.5 * g * g * self.pi_set.dist2(s / g) - 0.5 * np.sum(s * s, axis=-1)
                    + 0.5 * np.sum(z * z, axis=-1))
        dl = self.delta
        return (0.5 * dl * (dl - 1.0) * self.pi_set.dist2(s / (1.0 - dl))
                + dl / (2.0 * (1.0 - dl)) * np.sum(s * s, axis=-1) + 0.5 * np.sum(z * z, axis=-1))

    def _raw_grad_z(self, v, z):
        z = np.asarray(z, dtype=float)
        if not self.depends_on_z:
            return np.zeros_like(z)
        th = self.theta(v)
        s = z + th
        if self.kind == "exp":
            u = s / self.gamma
            return self.gamma * (u - self.pi_set.project(u)) - th
        dl = self.delta
        u = s / (1.0 - dl)
        return -dl * (u - self.pi_set.project(u)) + dl / (1.0 - dl) * s + z

    def __call__(self, v, z=None):
        if z is None:
            z = np.zeros(np.shape(v) + (self.dim,))
        return self._raw(v, self._truncate(np.asarray(z, dtype=float)))

    def grad_z(self, v, z):
        """Gradient of F(v, .) at z, shape (..., d)."""
        z = np.asarray(z, dtype=float)
        if self.truncate_at is None:
            return self._raw_grad_z(v, z)
        zt = truncate_z(self.truncate_at, z)
        g = self._raw_grad_z(v, zt)
        nrm = np.linalg.norm(z, axis=-1, keepdims=True)
        outside = nrm > self.truncate_at
        safe = np.where(outside, nrm, 1.0)
        e = z / safe
        # Jacobian of the ball projection is (R/|z|)(I - e e^T) outside the ball
        proj = (self.truncate_at / safe) * (g - e * np.sum(e * g, axis=-1, keepdims=True))
        return np.where(outside, proj, g)


def driver_eval(drv: Driver, v, z=None):
    return drv(v, z)


def truncate_z(radius: float, z):
    z = np.asarray(z, dtype=float)
    nrm = np.linalg.norm(z, axis=-1, keepdims=True)
    scale = np.where(nrm > radius, radius / np.where(nrm > 0, nrm, 1.0), 1.0)
    return z * scale


@dataclass(frozen=True)
class DriverBounds:
    K: float
    z_max: float
    c_v: float
    c_z: float


def sup_abs_f0(drv: Driver, lo=-20.0, hi=20.0, step=1e-3) -> float:
    v = np.arange(lo, hi + 0.5 * step, step)
    return float(np.max(np.abs(drv(v))))


def analytic_k(drv: Driver) -> float | None:
    """Closed-form sup |F(v, 0)| where available (unconstrained utilities, examples)."""
    if drv.kind in ("example1", "example2"):
        return drv.c_v * math.exp(-0.5)
    if not drv.pi_set.is_full:
        return None
    b2 = drv.theta.sup_norm ** 2
    if drv.kind in ("log", "exp"):
        return 0.5 * b2
    return drv.delta / (2.0 * (1.0 - drv.delta)) * b2


def lipschitz_constants(drv: Driver) -> tuple[float, float]:
    """(C_v, C_z) such that the growth conditions on F hold.

    For the utility drivers these are upper bounds built from the sup-norm
    ``b`` and Lipschitz constant ``L`` of theta; for the examples C_v is the
    declared constant and F does not depend on z.
    """
    if drv.kind in ("example1", "example2"):
        return drv.c_v, 0.0
    b, L = drv.theta.sup_norm, drv.theta.lipschitz
    if drv.kind == "log":
        return L * b, 0.0
    if drv.kind == "exp":
        if drv.pi_set.is_full:
            return L * max(1.0, b), b
        return 2.0 * L * max(1.0, b), max(2.0 * b, 1.0)
    dl = drv.delta
    r = dl / (1.0 - dl)
    if drv.pi_set.is_full:
        return r * L * max(1.0, b), max(r * b, 1.0 / (2.0 * (1.0 - dl)))
    # general sets: assumes 0 in Pi so that |u - Proj(u)| <= |u|
    return 2.0 * r * L * max(1.0, b), max(2.0 * r * b, 2.0 * r + 1.0)


def bounds(drv: Driver, model: FactorModel) -> DriverBounds:
    c_v, c_z = lipschitz_constants(drv)
    if c_v >= model.c_mu:
        raise BoundUnavailable(f"C_v={c_v} must be smaller than C_mu={model.c_mu}")
    z_max = model.kappa_norm * c_v / (model.c_mu - c_v)
    return DriverBounds(K=sup_abs_f0(drv), z_max=z_max, c_v=c_v, c_z=c_z)


def z_max_from(c_v: float, c_mu: float, kappa_norm: float) -> float:
    if c_v >= c_mu:
        raise BoundUnavailable(f"C_v={c_v} must be smaller than C_mu={c_mu}")
    return kappa_norm * c_v / (c_mu - c_v)
