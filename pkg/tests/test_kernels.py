import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ddcoupling import BACKEND
from ddcoupling._backend import get_kernels
from ddcoupling.model import make_catalog_model
from ddcoupling.simulate import simulate_ctmc

py = get_kernels("python")
try:
    cy = get_kernels("compiled")
except ImportError:  # pragma: no cover
    cy = None

needs_compiled = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


def test_active_backend_known():
    assert BACKEND in ("compiled", "python")
    with pytest.raises(ValueError):
        get_kernels("fortran")


def _is_quantile(dist, k, u, tol=1e-10):
    """Smallest k with cdf(k) >= u, up to rounding of the cdf at ties."""
    return dist.cdf(k) >= u - tol and (k == 0 or dist.cdf(k - 1) < u + tol)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 400), st.floats(1e-6, 1 - 1e-6))
def test_binomial_quantile_matches_scipy(n, u):
    k = py.binom_half_quantile(n, u)
    assert _is_quantile(stats.binom(n, 0.5), k, u)
    if cy is not None:
        assert cy.binom_half_quantile(n, u) == k


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 500), st.floats(1e-6, 1 - 1e-6))
def test_poisson_quantile_matches_scipy(mu, u):
    k = py.poisson_quantile(mu, u)
    assert _is_quantile(stats.poisson(mu), k, u)
    if cy is not None:
        assert cy.poisson_quantile(mu, u) == k


def test_quantiles_large_arguments():
    for u in (1e-9, 0.3, 0.5, 0.999999):
        assert _is_quantile(stats.binom(10**6, 0.5), py.binom_half_quantile(10**6, u), u)
        assert _is_quantile(stats.poisson(1e5), py.poisson_quantile(1e5, u), u)


@needs_compiled
@pytest.mark.parametrize("T,levels", [(1.0, 0), (7.5, 3), (300.0, 10)])
def test_kmt_tree_backends_agree(T, levels):
    u = np.random.default_rng(levels).random(1 << levels)
    c1, b1 = py.kmt_tree(T, levels, u)
    c2, b2 = cy.kmt_tree(T, levels, u)
    np.testing.assert_array_equal(c1, c2)
    np.testing.assert_allclose(b1, b2, rtol=0, atol=1e-12)


@needs_compiled
def test_bridge_fill_backends_agree():
    rng = np.random.default_rng(1)
    kt = np.linspace(0, 10, 11)
    kb = np.cumsum(rng.normal(size=11))
    kb[0] = 0
    q = np.sort(rng.uniform(0, 10, 50))
    z = rng.normal(size=50)
    np.testing.assert_allclose(py.bridge_fill(kt, kb, q, z), cy.bridge_fill(kt, kb, q, z), atol=1e-13)


def test_bridge_fill_variance():
    # bridge from (0,0) to (1,0): B(1/2) ~ N(0, 1/4)
    z = np.random.default_rng(2).normal(size=20000)
    vals = np.array([py.bridge_fill(np.array([0.0, 1.0]), np.array([0.0, 0.0]), np.array([0.5]), z[i:i + 1])[0]
                     for i in range(2000)])
    assert np.var(vals) == pytest.approx(0.25, rel=0.1)


def test_linear_em_backends_agree():
    rng = np.random.default_rng(3)
    A = np.ascontiguousarray(rng.normal(size=(100, 2, 2)) * 0.3)
    noise = np.ascontiguousarray(rng.normal(size=(100, 2)) * 0.1)
    u = py.linear_em(A, noise, np.zeros(2), 0.01)
    # independent recursion
    ref = [np.zeros(2)]
    for k in range(100):
        ref.append(ref[-1] + 0.01 * A[k] @ ref[-1] + noise[k])
    np.testing.assert_allclose(u, np.array(ref), atol=1e-14)
    if cy is not None:
        np.testing.assert_allclose(cy.linear_em(A, noise, np.zeros(2), 0.01), u, atol=1e-13)


@needs_compiled
@pytest.mark.parametrize("name,x0", [("logistic", [0.5]), ("sirs", [0.6, 0.2])])
@pytest.mark.parametrize("channels", ["exponential", "kmt"])
def test_ctmc_backends_agree(name, x0, channels):
    m = make_catalog_model(name)
    a = simulate_ctmc(m, 200, x0, 3.0, channels=channels, rng=4, backend="python")
    b = simulate_ctmc(m, 200, x0, 3.0, channels=channels, rng=4, backend="compiled")
    np.testing.assert_array_equal(a.event_jumps, b.event_jumps)
    np.testing.assert_allclose(a.event_times, b.event_times, rtol=1e-12)
    np.testing.assert_array_equal(a.n_end, b.n_end)
