import numpy as np
import pytest
from scipy import stats

from lattice_topo import mvn
from lattice_topo.mvn import NotPositiveSemidefinite, mvn_cdf, orthant_probability


def equicorrelated(k, rho):
    return np.full((k, k), rho) + (1 - rho) * np.eye(k)


def random_corr(rng, k):
    a = rng.normal(size=(k, k + 2))
    c = a @ a.T
    d = np.sqrt(np.diag(c))
    return c / np.outer(d, d)


def test_univariate_and_bivariate_closed_forms():
    assert mvn_cdf([0.0], [[1.0]]).probability == pytest.approx(0.5, abs=1e-15)
    p = orthant_probability(equicorrelated(2, 0.5)).probability
    assert p == pytest.approx(1 / 3, abs=1e-12)
    p = mvn_cdf([0.3, -0.7], [[2.0, -0.4], [-0.4, 0.5]]).probability
    ref = stats.multivariate_normal([0, 0], [[2.0, -0.4], [-0.4, 0.5]]).cdf([0.3, -0.7])
    assert p == pytest.approx(ref, abs=1e-7)


def test_trivariate_equicorrelated():
    res = orthant_probability(equicorrelated(3, 0.5), 1e-6)
    assert abs(res.probability - 0.25) <= max(res.error, 1e-6)


@pytest.mark.parametrize("k", [3, 4, 6, 9])
def test_equicorrelated_orthant_closed_form(k):
    res = orthant_probability(equicorrelated(k, 0.5), 1e-5)
    assert abs(res.probability - 1 / (k + 1)) <= max(res.error, 1e-5)


def test_independent_product():
    res = orthant_probability(np.eye(5), 1e-6)
    assert res.probability == pytest.approx(1 / 32, abs=max(res.error, 1e-7))


def test_against_scipy(rng):
    for _ in range(10):
        k = int(rng.integers(3, 7))
        cov = random_corr(rng, k)
        b = rng.normal(size=k)
        res = mvn_cdf(b, cov, 1e-5)
        ref = stats.multivariate_normal(np.zeros(k), cov).cdf(b)
        assert abs(res.probability - ref) < 5e-5


def test_deterministic_default_seed(rng):
    cov = random_corr(rng, 5)
    assert mvn_cdf(np.zeros(5), cov) == mvn_cdf(np.zeros(5), cov)


def test_singular_duplicate_coordinate():
    # Z1 == Z2 exactly: P(Z1<=0, Z2<=0, Z3<=0) = P(Z1<=0, Z3<=0)
    c = np.array([[1.0, 1.0, 0.3], [1.0, 1.0, 0.3], [0.3, 0.3, 1.0]])
    res = orthant_probability(c, 1e-6)
    ref = orthant_probability(c[np.ix_([0, 2], [0, 2])]).probability
    assert ref == pytest.approx(0.25 + np.arcsin(0.3) / (2 * np.pi), abs=1e-12)
    assert abs(res.probability - ref) <= 1e-6


def test_singular_antithetic_pair():
    # Z2 == -Z1 leaves only the event Z1 == 0, probability zero
    c = np.array([[1.0, -1.0, 0.2], [-1.0, 1.0, -0.2], [0.2, -0.2, 1.0]])
    assert orthant_probability(c).probability == pytest.approx(0.0, abs=1e-9)


def test_singular_difference_constraint():
    # (Z1, Z2, Z1 - Z2): P(Z1<=0, Z2<=0, Z1<=Z2) = P(Z1<=0,Z2<=0)/2 for iid
    c = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, -1.0], [1.0, -1.0, 2.0]])
    res = orthant_probability(c, 1e-7)
    assert abs(res.probability - 0.125) <= max(res.error, 1e-7)


def test_rank_one_is_exact():
    c = np.ones((4, 4))
    res = mvn_cdf([0.1, -0.2, 0.5, 1.0], c)
    assert res.probability == pytest.approx(stats.norm.cdf(-0.2), abs=1e-14)


def test_infinite_limits():
    c = equicorrelated(4, 0.3)
    assert mvn_cdf([np.inf] * 4, c).probability == 1.0
    assert mvn_cdf([0, 0, -np.inf, 0], c).probability == 0.0
    sub = mvn_cdf([0.0, 0.0, np.inf, np.inf], c).probability
    assert sub == pytest.approx(orthant_probability(c[:2, :2]).probability, abs=1e-12)


def test_errors():
    with pytest.raises(NotPositiveSemidefinite):
        orthant_probability(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        orthant_probability(np.eye(17))
    with pytest.raises(ValueError):
        mvn_cdf([0.0, 0.0], np.eye(3))
    with pytest.raises(ValueError):
        mvn_cdf([np.nan], [[1.0]])


def test_error_bound_is_honest():
    rng = np.random.default_rng(7)
    ok = 0
    trials = 100
    for t in range(trials):
        cov = random_corr(rng, 4)
        b = rng.normal(scale=0.7, size=4)
        base = mvn_cdf(b, cov, 0.0, seed=t, max_points=1024)
        ref = mvn_cdf(b, cov, 0.0, seed=10_000 + t, max_points=16384)
        ok += abs(base.probability - ref.probability) <= base.error
    assert ok >= 0.95 * trials


def test_numba_and_numpy_kernels_agree(rng):
    cov = random_corr(rng, 6)
    b = rng.normal(size=6)
    L, bp, ptr, rows, rank, _ = mvn.prioritized_cholesky(cov, b)
    gen = mvn._RICHTMYER[: rank - 1].copy()
    shifts = rng.random((4, rank - 1))
    a = mvn._sov_sums_loop(L, bp, ptr, rows, gen, shifts, 0, 300)
    c = mvn._sov_sums_numpy(L, bp, ptr, rows, gen, shifts, 0, 300)
    np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-12)


def test_trivariate_quadrature_agrees_with_qmc(rng):
    from lattice_topo.mvn import trivariate_cdf

    assert trivariate_cdf([0, 0, 0], equicorrelated(3, 0.5)) == pytest.approx(0.25, abs=1e-12)
    for _ in range(5):
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + 0.2 * np.eye(3)
        b = rng.normal(size=3)
        res = mvn_cdf(b, cov, 1e-7)
        assert abs(trivariate_cdf(b, cov) - res.probability) <= max(res.error, 1e-7)
