import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebsde.drivers import (ConvexSet, Driver, RiskPremiumSpec, analytic_k, bounds, dist2, lipschitz_constants,
                           project, sup_abs_f0, theta_eval, truncate_z, z_max_from)
from ebsde.errors import BoundUnavailable
from ebsde.sde import FactorModel


def test_projection_examples():
    x = np.array([3.0, -1.0])
    assert np.array_equal(project(ConvexSet.full(), x), x) and dist2(ConvexSet.full(), x) == 0
    ax = ConvexSet.axis([0])
    assert np.array_equal(project(ax, [2.0, 5.0]), [2.0, 0.0]) and dist2(ax, [2.0, 5.0]) == 25.0
    box = ConvexSet.box([-1, -1], [1, 1])
    assert np.array_equal(project(box, [2.0, 0.5]), [1.0, 0.5]) and dist2(box, [2.0, 0.5]) == 1.0


def test_theta_examples():
    th = RiskPremiumSpec.truncated_linear(0.8, 3.0)
    assert theta_eval(th, 1.0)[0] == pytest.approx(0.8)
    assert theta_eval(th, 10.0)[0] == 3.0
    assert theta_eval(th, -10.0)[0] == -3.0


def test_driver_examples(power_theta):
    pw = Driver.power(0.5, power_theta)
    assert pw(0.0, np.zeros(1)) == 0.0
    assert Driver.example1(1.0)(0.0, np.array([3.0])) == 0.0
    assert Driver.example2(0.75)(1.0) == pytest.approx(0.75 * math.exp(-0.5))
    assert Driver.example2(0.75)(1.0) == pytest.approx(0.454898, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-3, 3), st.floats(0.05, 0.95))
def test_power_full_reduces(v, z, delta):
    th = RiskPremiumSpec.truncated_linear(0.8, 3.0)
    drv = Driver.power(delta, th)
    t = th(v)[0]
    expect = delta / (2 * (1 - delta)) * (t + z) ** 2 + 0.5 * z * z
    assert drv(v, np.array([z])) == pytest.approx(expect, rel=1e-12, abs=1e-12)


def _fd_grad(drv, v, z, eps=1e-6):
    g = np.zeros_like(z)
    for i in range(len(z)):
        e = np.zeros_like(z)
        e[i] = eps
        g[i] = (drv(v, z + e) - drv(v, z - e)) / (2 * eps)
    return g


@pytest.mark.parametrize("drv", [
    Driver.power(0.5, RiskPremiumSpec.truncated_linear(0.8, 3.0, dim=2), ConvexSet.axis([0])),
    Driver.exp(0.4, RiskPremiumSpec.truncated_linear(0.8, 3.0, dim=2), ConvexSet.box([-0.2, -1], [0.3, 1])),
    Driver.power(0.3, RiskPremiumSpec.truncated_linear(0.8, 3.0, dim=2)).with_truncation(0.7),
    Driver.exp(0.6, RiskPremiumSpec.truncated_linear(1.2, 2.0, dim=2)),
])
def test_grad_z_matches_finite_differences(drv, rng):
    for _ in range(20):
        v = rng.normal() * 2
        z = rng.normal(size=2)
        assert np.allclose(drv.grad_z(v, z), _fd_grad(drv, v, z), rtol=1e-6, atol=1e-7)


def test_log_and_examples_ignore_z():
    th = RiskPremiumSpec.truncated_linear(0.8, 3.0)
    for drv in (Driver.log(th), Driver.example1(1.0), Driver.example2(1.0)):
        assert not drv.depends_on_z
        assert drv(0.7, np.array([1.0])) == drv(0.7, np.array([-4.0]))


def test_truncation():
    z = np.array([0.3, 0.4])
    assert np.array_equal(truncate_z(1.6, z), z)
    out = truncate_z(1.0, np.array([3.0, 4.0]))
    assert np.allclose(out, [0.6, 0.8])


def test_bounds_examples():
    assert z_max_from(1.0, 1.5, 0.8) == pytest.approx(1.6)
    b = bounds(Driver.example1(1.0), FactorModel.ou(1.5, 0.8))
    assert b.z_max == pytest.approx(1.6)
    assert b.K == pytest.approx(math.exp(-0.5), abs=1e-6)
    with pytest.raises(BoundUnavailable):
        bounds(Driver.example1(2.0), FactorModel.ou(1.5, 0.8))


@pytest.mark.parametrize("drv", [
    Driver.example1(1.0), Driver.example2(0.75),
    Driver.log(RiskPremiumSpec.truncated_linear(0.8, 3.0)),
    Driver.exp(0.5, RiskPremiumSpec.truncated_linear(0.8, 3.0)),
    Driver.power(0.5, RiskPremiumSpec.truncated_linear(0.8, 3.0)),
])
def test_mesh_k_matches_closed_form(drv):
    assert sup_abs_f0(drv) == pytest.approx(analytic_k(drv), rel=1e-6)


@pytest.mark.parametrize("drv", [
    Driver.log(RiskPremiumSpec.truncated_linear(0.8, 3.0)),
    Driver.exp(0.5, RiskPremiumSpec.truncated_linear(0.8, 3.0)),
    Driver.exp(0.5, RiskPremiumSpec.truncated_linear(0.8, 3.0), ConvexSet.box([-0.5], [0.5])),
    Driver.power(0.5, RiskPremiumSpec.truncated_linear(0.8, 3.0)),
    Driver.power(0.7, RiskPremiumSpec.truncated_linear(0.8, 3.0), ConvexSet.box([-0.5], [0.5])),
])
def test_growth_constants_hold(drv, rng):
    # |F(v,z) - F(v',z)| <= C_v |v - v'| (1 + |z|) and |F(v,z) - F(v,z')| <= C_z (1 + |z| + |z'|) |z - z'|
    c_v, c_z = lipschitz_constants(drv)
    for _ in range(400):
        v, w = rng.normal(scale=4, size=2)
        z, zp = rng.normal(scale=2, size=(2, 1))
        lhs_v = abs(drv(v, z) - drv(w, z))
        assert lhs_v <= c_v * abs(v - w) * (1 + np.linalg.norm(z)) + 1e-12
        lhs_z = abs(drv(v, z) - drv(v, zp))
        rhs_z = c_z * (1 + np.linalg.norm(z) + np.linalg.norm(zp)) * np.linalg.norm(z - zp)
        assert lhs_z <= rhs_z + 1e-12


def test_invalid_parameters():
    th = RiskPremiumSpec.truncated_linear(0.8, 3.0)
    with pytest.raises(ValueError):
        Driver.power(1.0, th)
    with pytest.raises(ValueError):
        Driver.exp(0.0, th)
    with pytest.raises(ValueError):
        ConvexSet.box([1.0], [0.0])
