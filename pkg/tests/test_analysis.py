import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddcoupling.analysis import (
    AnalysisError,
    find_equilibrium,
    flow,
    lyapunov_residual,
    principal_matrix,
    stationary_covariance,
)
from ddcoupling.model import Domain, DomainError, PolynomialRate, make_catalog_model, make_custom_model

from oracles import simpson_covariance


def test_logistic_equilibrium(logistic_eq):
    assert logistic_eq.x_star == pytest.approx([1.0], abs=1e-12)
    assert logistic_eq.rho_star == pytest.approx(1.0, abs=1e-12)
    assert logistic_eq.Sigma_star[0, 0] == pytest.approx(2.0, abs=1e-10)
    assert logistic_eq.stable
    assert logistic_eq.relaxation_time(100) == pytest.approx(6 * math.log(100))


def test_sirs_equilibrium(sirs_eq):
    np.testing.assert_allclose(sirs_eq.x_star, [0.5, 0.25], atol=1e-12)
    np.testing.assert_allclose(sirs_eq.jac, [[-1.5, -2.0], [0.5, 0.0]], atol=1e-12)


def test_zero_newton_steps(logistic):
    rep = find_equilibrium(logistic, [1.0])
    assert rep.iterations == 0 and rep.residual == 0.0


def test_newton_errors(logistic):
    with pytest.raises(DomainError):
        find_equilibrium(logistic, [-1.0])
    with pytest.raises(AnalysisError):
        find_equilibrium(logistic, [0.5], max_iter=1)
    with pytest.raises(ValueError):
        find_equilibrium(logistic, [0.5], tol=0)


def test_unstable_equilibrium_reported():
    # x' = x (x - 1) on (0, 2): x*=1 repels
    birth = PolynomialRate.from_coeffs({(2,): 1.0})
    death = PolynomialRate.from_coeffs({(1,): 1.0})
    m = make_custom_model([[1], [-1]], [birth, death], Domain(lo=(0.0,), hi=(2.0,)))
    rep = find_equilibrium(m, [1.2])
    assert not rep.stable and rep.Sigma_star is None
    with pytest.raises(AnalysisError):
        rep.require_stable()


def test_stationary_covariance_examples():
    assert stationary_covariance([[-1.0]], [[4.0]])[0, 0] == pytest.approx(2.0)
    np.testing.assert_allclose(stationary_covariance(-np.eye(2), np.eye(2)), np.eye(2) / 2)
    with pytest.raises(AnalysisError):
        stationary_covariance([[0.5]], [[1.0]])


def test_sirs_covariance_quadrature(sirs_eq):
    oracle = simpson_covariance(sirs_eq.jac, sirs_eq.S_star)
    np.testing.assert_allclose(sirs_eq.Sigma_star, oracle, atol=1e-6)
    assert lyapunov_residual(sirs_eq.jac, sirs_eq.Sigma_star, sirs_eq.S_star) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4))
def test_lyapunov_residual_random(seed, d):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    J = A - (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.2, 2)) * np.eye(d)
    B = rng.normal(size=(d, d))
    S = B @ B.T
    sigma = stationary_covariance(J, S)
    assert lyapunov_residual(J, sigma, S) <= 1e-10 * max(1.0, np.abs(S).max())
    np.testing.assert_allclose(sigma, sigma.T)
    assert np.linalg.eigvalsh(sigma).min() >= -1e-10


def test_catalog_stability_sampled():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = rng.uniform(1.05, 5)
        q = rng.uniform(0.05, p - 0.01)
        assert find_equilibrium(make_catalog_model("logistic", {"p": p, "q": q}), [(p - q) / 2]).stable
        lam, gam, theta = rng.uniform(1.2, 5), rng.uniform(0.1, 1.1), rng.uniform(0.1, 4)
        guess = [gam / lam, 0.5 * (1 - gam / lam) * theta / (gam + theta)]
        assert find_equilibrium(make_catalog_model("sirs", {"lam": lam, "gam": gam, "theta": theta}), guess).stable


def test_flow_constant_at_equilibrium(logistic):
    tr = flow(logistic, [1.0], 10.0)
    np.testing.assert_allclose(tr.states, 1.0)
    assert not tr.exited


def test_flow_logistic_closed_form(logistic):
    tr = flow(logistic, [0.5], 10.0, dt=0.01)
    t = tr.times
    exact = 1.0 / (1.0 + (1.0 / 0.5 - 1.0) * np.exp(-t))
    np.testing.assert_allclose(tr.states[:, 0], exact, atol=1e-8)
    mid = np.linspace(0, 10, 137)
    np.testing.assert_allclose(tr(mid)[:, 0], 1.0 / (1.0 + np.exp(-mid)), atol=1e-8)


def test_flow_sirs_converges(sirs):
    a = flow(sirs, [0.6, 0.2], 60.0, dt=0.01).states[-1]
    b = flow(sirs, [0.6, 0.2], 60.0, dt=0.005).states[-1]
    assert np.linalg.norm(a - [0.5, 0.25]) < 1e-6
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_flow_semigroup(sirs):
    rng = np.random.default_rng(5)
    for _ in range(5):
        a, b = rng.integers(1, 200, 2) * 0.01
        whole = flow(sirs, [0.6, 0.2], a + b).states[-1]
        first = flow(sirs, [0.6, 0.2], a).states[-1]
        second = flow(sirs, first, b).states[-1]
        np.testing.assert_allclose(whole, second, atol=1e-8)


def test_flow_domain_exit():
    # constant outward drift leaves [0, 1]
    up = PolynomialRate.from_coeffs({(0,): 1.0})
    m = make_custom_model([[1]], [up], Domain(lo=(0.0,), hi=(1.0,)))
    tr = flow(m, [0.5], 2.0, dt=0.01)
    assert tr.exited and tr.times[-1] < 0.51
    with pytest.raises(DomainError):
        flow(m, [2.0], 1.0)
    with pytest.raises(ValueError):
        flow(m, [0.5], 1.0, dt=0)


def test_principal_matrix_identity_and_equilibrium(logistic):
    tr = flow(logistic, [1.0], 5.0)
    assert np.array_equal(principal_matrix(logistic, tr, 2.0, 2.0).psi, np.eye(1))
    for t in (0.5, 2.0, 5.0):
        assert principal_matrix(logistic, tr, 0.0, t).psi[0, 0] == pytest.approx(math.exp(-t), abs=1e-8)
    with pytest.raises(ValueError):
        principal_matrix(logistic, tr, 0.0, 6.0)
    with pytest.raises(ValueError):
        principal_matrix(logistic, tr, 3.0, 1.0)


def test_principal_matrix_cocycle(sirs):
    tr = flow(sirs, [0.7, 0.1], 10.0)
    rng = np.random.default_rng(6)
    for _ in range(10):
        r, s, t = np.sort(rng.uniform(0, 10, 3))
        lhs = principal_matrix(sirs, tr, r, t).psi
        rhs = principal_matrix(sirs, tr, s, t).psi @ principal_matrix(sirs, tr, r, s).psi
        assert np.linalg.norm(lhs - rhs) < 1e-6


@pytest.mark.parametrize("name,x0", [("logistic", [0.5]), ("sirs", [0.7, 0.1])])
def test_principal_matrix_decay(name, x0):
    m = make_catalog_model(name)
    eq = find_equilibrium(m, flow(m, x0, 30.0).states[-1])
    tr = flow(m, x0, 20.0)
    ts = np.arange(1, 21, 1.0)
    norms = np.array([np.linalg.norm(principal_matrix(m, tr, 0.0, t).psi, 2) for t in ts])
    scaled = norms * np.exp(eq.rho_star * ts / 2)
    assert scaled.max() < 50
    assert norms[-1] < 1e-3
