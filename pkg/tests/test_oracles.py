import math

import numpy as np
import pytest
from scipy import integrate

from ebsde.drivers import Driver, bounds
from ebsde.errors import ValidityViolated
from ebsde.oracles import example1_solution, example2_solution, normal_cdf
from ebsde.sde import FactorModel


def test_normal_cdf():
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(40.0) == 1.0
    ref = integrate.quad(lambda u: math.exp(-u * u / 2) / math.sqrt(2 * math.pi), -np.inf, 1.0)[0]
    assert normal_cdf(1.0) == pytest.approx(ref, abs=1e-14)
    assert np.allclose(normal_cdf(np.array([0.0, 1.0])), [0.5, ref])


def test_example1_values():
    s = example1_solution(1.0, 1.5, 0.8)
    assert s.lam == 0.0
    assert s.y(0.0) == pytest.approx(math.sqrt(2 * math.pi) / 2 / 1.82, rel=1e-12)
    assert s.y(0.0) == pytest.approx(0.688630, abs=1e-5)
    lit = example1_solution(1.0, 1.5, 0.8, literal_z=True)
    assert lit.z(0.0)[0] == pytest.approx(1 / 1.82)
    assert s.z(0.0)[0] == pytest.approx(0.8 / 1.82)
    assert abs(s.z(40.0)[0]) < 1e-300


def _pde_residual(sol, drv, mu, kappa, v, eps=1e-4):
    # stationary equation: kappa^2/2 y'' - mu v y' + F(v) - lambda = 0
    y = sol.y
    d2 = (y(v + eps) - 2 * y(v) + y(v - eps)) / eps ** 2
    d1 = (y(v + eps) - y(v - eps)) / (2 * eps)
    return 0.5 * kappa ** 2 * d2 - mu * v * d1 + drv(v) - sol.lam


@pytest.mark.parametrize("v", [-2.5, -0.7, 0.3, 1.1, 3.0])
def test_example1_solves_the_pde(v):
    s = example1_solution(1.0, 1.5, 0.8)
    assert abs(_pde_residual(s, Driver.example1(1.0), 1.5, 0.8, v)) < 1e-6


@pytest.mark.parametrize("v", [-2.5, -0.7, 0.3, 1.1, 3.0])
def test_example2_solves_the_pde(v):
    k = math.sqrt(2.0)
    s = example2_solution(0.75, k)
    sol_exact = type("E", (), {"y": staticmethod(s.y.exact), "lam": s.lam})
    assert abs(_pde_residual(sol_exact, Driver.example2(0.75), 1.0, k, v)) < 1e-5


def test_example2_values():
    assert example2_solution(0.75, math.sqrt(2)).lam == pytest.approx(0.299206, abs=1e-6)
    assert example2_solution(1.0, 2.0).lam == pytest.approx(0.398942, abs=1e-6)
    s = example2_solution(0.75, math.sqrt(2))
    assert s.z(0.0)[0] == 0.0
    assert s.y(0.0) == 0.0


def test_example2_z_is_kappa_y_prime():
    k = math.sqrt(2.0)
    s = example2_solution(0.75, k)
    v = np.linspace(-6, 6, 241)
    eps = 1e-5
    fd = np.array([(s.y.exact(x + eps) - s.y.exact(x - eps)) / (2 * eps) for x in v])
    z = s.z(v)[:, 0]
    big = np.abs(z) > 1e-8
    assert np.allclose(fd[big] * k, z[big], rtol=1e-6)


def test_example2_spline_matches_quadrature():
    s = example2_solution(0.75, math.sqrt(2))
    for v in (-7.3, -1.234, 0.01, 2.5, 7.99, 9.5):
        assert s.y(v) == pytest.approx(s.y.exact(v), rel=1e-10, abs=1e-12)


def test_example2_validity():
    s = example2_solution(0.75, math.sqrt(2))
    s.check(FactorModel.ou(1.0, math.sqrt(2)))
    with pytest.raises(ValidityViolated):
        example2_solution(0.75, math.sqrt(2), model=FactorModel.ou(1.5, math.sqrt(2)))


@pytest.mark.parametrize("which", ["ex1", "ex2"])
def test_z_bounded_by_zmax(which):
    if which == "ex1":
        model, s, drv = FactorModel.ou(1.5, 0.8), example1_solution(1.0, 1.5, 0.8), Driver.example1(1.0)
    else:
        model, s, drv = FactorModel.ou(1.0, math.sqrt(2)), example2_solution(0.75, math.sqrt(2)), Driver.example2(0.75)
    zmax = bounds(drv, model).z_max
    v = np.linspace(-10, 10, 4001)
    assert np.max(np.linalg.norm(s.z(v), axis=-1)) <= zmax
