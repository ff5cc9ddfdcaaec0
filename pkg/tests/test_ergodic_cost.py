import math
import warnings

import numpy as np
import pytest
from scipy import optimize

from ebsde.drivers import Driver, RiskPremiumSpec
from ebsde.ergodic_cost import (LambdaBoundWarning, cole_hopf_parts, estimate_lambda, gamma_martingale_test,
                                gamma_mean, gamma_terminal,
                                lambda_colehopf_general, lambda_colehopf_power, lambda_linear_exp, lambda_ratio,
                                power_coefficients, solve_gamma_root)
from ebsde.errors import DriverDependsOnZ, InvalidCombination, RootNotBracketed
from ebsde.sde import FactorModel, TimeGrid, simulate_paths


class Const:
    depends_on_z = False
    kind = "const"

    def __init__(self, c):
        self.c = c

    def __call__(self, v, z=None):
        return np.full(np.shape(v), self.c)


@pytest.fixture(scope="module")
def paths():
    return simulate_paths(FactorModel.ou(3.0, 1.3, 0.0), TimeGrid(0.01), 3000, seed=11)


@pytest.mark.parametrize("c", [0.0, 0.37, -2.5])
@pytest.mark.parametrize("h", [0.05, 0.01])
def test_ratio_constant_driver(c, h):
    b = simulate_paths(FactorModel.ou(2.0, 2.0, 0.5), TimeGrid(h), 500, seed=int(10 * h))
    assert lambda_ratio(Const(c), b).value == pytest.approx(c, abs=1e-12)


def test_ratio_rejects_z_dependent(paths, power_driver):
    with pytest.raises(DriverDependsOnZ):
        lambda_ratio(power_driver, paths)
    with pytest.raises(InvalidCombination):
        estimate_lambda(power_driver, FactorModel.ou(3.0, 1.3), TimeGrid(0.05), 100, 0, method="ratio")


def test_ratio_pooled_formula(paths):
    drv = Driver.example2(1.0)
    v = paths.v[:, :paths.n_max]
    num = sum(0.01 * drv(v[j, :paths.n_ret[j]]).sum() for j in range(paths.n_paths))
    assert lambda_ratio(drv, paths).value == pytest.approx(num / paths.tau.sum(), rel=1e-12)


def test_ratio_examples_close_to_exact():
    m = FactorModel.ou(2.0, 2.0, 0.5)
    e2 = estimate_lambda(Driver.example2(1.0), m, TimeGrid(0.01), 20_000, seed=3)
    assert e2.value == pytest.approx(1 / math.sqrt(2 * math.pi), abs=4e-3)
    e1 = estimate_lambda(Driver.example1(1.0), m, TimeGrid(0.01), 20_000, seed=3)
    assert abs(e1.value) < 0.012


def test_linear_exp_zero_theta(paths):
    th = RiskPremiumSpec.constant([0.0])
    est = lambda_linear_exp(th, paths, y0=0.7)
    assert est.value == pytest.approx(0.0, abs=1e-14)


def test_linear_exp_gamma_positive_and_matches_ratio_oracle(paths, power_theta):
    from ebsde.ergodic_cost import linear_exp_parts
    g_tau, q, i = linear_exp_parts(power_theta, paths)
    assert np.all(g_tau > 0) and np.all(i > 0)
    est = lambda_linear_exp(power_theta, paths, y0=0.0)
    assert est.value < 0
    # independent form: E[int Gamma (-|theta|^2/2)] / E[int Gamma] with Gamma rebuilt step by step
    num = den = 0.0
    for j in range(200):
        n = paths.n_ret[j]
        th = power_theta(paths.v[j, :n])[:, 0]
        g = 1.0
        for k in range(n):
            num += g * (-0.5 * th[k] ** 2) * 0.01
            den += g * 0.01
            g *= math.exp(-th[k] * paths.dw[j, k, 0] - 0.5 * th[k] ** 2 * 0.01)
    sub = lambda_linear_exp(power_theta, paths.take(np.arange(200)), y0=0.0).value
    assert sub == pytest.approx(num / den, rel=1e-10)


def test_linear_exp_y0_cancels_in_expectation(power_theta):
    b = simulate_paths(FactorModel.ou(3.0, 1.3, 0.0), TimeGrid(0.01), 20_000, seed=5)
    a = lambda_linear_exp(power_theta, b, y0=0.0)
    c = lambda_linear_exp(power_theta, b, y0=0.5)
    assert abs(a.value - c.value) < 4 * max(a.std_error, c.std_error)


def test_colehopf_small_delta(paths, power_theta):
    est = lambda_colehopf_power(1e-8, power_theta, paths, K=1.0)
    assert abs(est.value) < 1e-6


def test_general_reproduces_power_bitwise(paths, power_theta):
    a = lambda_colehopf_power(0.5, power_theta, paths, K=4.5)
    beta = 1 / (1 - 0.5)
    b = lambda_colehopf_general(beta, lambda v: 0.5 / (2 * 0.5) * np.sum(power_theta(v) ** 2, axis=-1),
                                lambda v: 0.5 / 0.5 * power_theta(v), paths, K=4.5)
    assert a.value == b.value


def test_deterministic_exponent_root(paths):
    est = lambda_colehopf_general(1.7, lambda v: np.full(np.shape(v), 0.3), lambda v: np.zeros(np.shape(v) + (1,)),
                                  paths, K=2.0)
    assert est.value == pytest.approx(0.3, abs=1e-12)


def test_root_matches_golden_section(rng):
    b = simulate_paths(FactorModel.ou(2.0, 1.0, 0.0), TimeGrid(0.02), 300, seed=8)
    cl, ca = rng.uniform(0.1, 0.6), rng.uniform(-0.5, 0.5)
    l = lambda v: cl * np.cos(v) ** 2
    a = lambda v: (ca * np.tanh(v))[..., None]
    lam = lambda_colehopf_general(1.3, l, a, b, K=2.0).value
    log_g0, tau = cole_hopf_parts(1.3, l, a, b)
    obj = lambda x: abs(gamma_mean(log_g0, tau, 1.3, x) - 1)  # noqa: E731
    xs = np.linspace(-2, 2, 4001)
    xb = xs[np.argmin([obj(x) for x in xs])]
    res = optimize.minimize_scalar(obj, bracket=(xb - 1e-3, xb, xb + 1e-3), method="golden", tol=1e-12)
    assert lam == pytest.approx(res.x, abs=1e-8)


def test_newton_and_bisection_agree(paths, power_theta):
    a = lambda_colehopf_power(0.5, power_theta, paths, K=4.5)
    b = lambda_colehopf_power(0.5, power_theta, paths, K=4.5, method="bisect")
    assert abs(a.value - b.value) < 1e-10


def test_g_strictly_decreasing(paths, power_theta):
    beta, l, a = power_coefficients(0.5, power_theta)
    log_g0, tau = cole_hopf_parts(beta, l, a, paths)
    g = [gamma_mean(log_g0, tau, beta, x) for x in np.linspace(-2, 2, 41)]
    assert np.all(np.diff(g) < 0)


def test_root_not_bracketed(paths, power_theta):
    with pytest.raises(RootNotBracketed):
        lambda_colehopf_power(0.5, power_theta, paths, K=1e-4)
    with pytest.raises(RootNotBracketed):
        solve_gamma_root(np.full(3, 5.0), np.ones(3), 1.0, 1.0)


def test_martingale_at_root(power_model, power_theta):
    beta, l, a = power_coefficients(0.5, power_theta)
    fit = simulate_paths(power_model, TimeGrid(0.02), 20_000, seed=21)
    lam = lambda_colehopf_general(beta, l, a, fit, K=4.5).value
    fresh = simulate_paths(power_model, TimeGrid(0.02), 20_000, seed=22)
    # on the fitting sample the identity holds by construction
    assert gamma_terminal(beta, l, a, fit, lam).mean() == pytest.approx(1.0, abs=1e-12)
    t = gamma_martingale_test(beta, l, a, fit, fresh, lam)
    assert abs(t.mean - 1) <= 3 * t.std_error
    g = gamma_terminal(beta, l, a, fresh, lam)
    assert t.std_error > g.std(ddof=1) / math.sqrt(len(g))


def test_reps_and_bound_warning():
    m = FactorModel.ou(2.0, 2.0, 0.5)
    est = estimate_lambda(Driver.example2(1.0), m, TimeGrid(0.05), 500, seed=1, reps=4)
    assert len(est.values) == 4 and est.variance == pytest.approx(np.var(est.values, ddof=1))
    with pytest.warns(LambdaBoundWarning):
        estimate_lambda(Driver.example2(1.0), m, TimeGrid(0.05), 500, seed=1, K=1e-3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        estimate_lambda(Driver.example2(1.0), m, TimeGrid(0.05), 500, seed=1)


def test_thread_invariance(power_driver, power_model):
    a = estimate_lambda(power_driver, power_model, TimeGrid(0.05), 5000, seed=2)
    b = estimate_lambda(power_driver, power_model, TimeGrid(0.05), 5000, seed=2, threads=2)
    assert a.value == b.value and a.variance == b.variance
