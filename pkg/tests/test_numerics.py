import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oneshot_dpd.numerics import (
    DomainError,
    chisq_quantile,
    chisq_sf,
    gamma_p,
    gamma_q,
    invert_spd,
    solve_spd,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
    std_normal_sf,
)


def test_pdf_values():
    assert std_normal_pdf(0.0) == pytest.approx(0.3989422804014327, abs=1e-16)
    assert std_normal_pdf(1.0) == pytest.approx(0.24197072451914337, abs=1e-16)
    assert std_normal_pdf(-1.7) == std_normal_pdf(1.7)


@pytest.mark.parametrize(
    "z, expected, tol",
    [(0.0, 0.5, 0.0), (3.0, 0.9986501019683699, 1e-15), (-0.54764, 0.29196, 1e-4)],
)
def test_cdf_values(z, expected, tol):
    assert abs(std_normal_cdf(z) - expected) <= tol


def test_cdf_against_scipy_grid():
    z = np.linspace(-8, 8, 1601)
    assert np.max(np.abs(std_normal_cdf(z) - stats.norm.cdf(z))) <= 1e-14


def test_cdf_symmetry():
    z = np.linspace(-8, 8, 801)
    assert np.max(np.abs(std_normal_cdf(z) + std_normal_cdf(-z) - 1.0)) <= 1e-14
    assert np.max(np.abs(std_normal_sf(z) - std_normal_cdf(-z))) == 0.0


@pytest.mark.parametrize("fn", [std_normal_pdf, std_normal_cdf, std_normal_sf])
@pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
def test_nonfinite_rejected(fn, bad):
    with pytest.raises(DomainError):
        fn(bad)


@pytest.mark.parametrize(
    "p, expected",
    [(0.5, 0.0), (0.95, 1.6448536269514722), (0.975, 1.959963984540054)],
)
def test_quantile_values(p, expected):
    assert std_normal_quantile(p) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_quantile_domain(bad):
    with pytest.raises(DomainError):
        std_normal_quantile(bad)


def test_quantile_inverts_cdf():
    for z in np.linspace(-6, 6, 241):
        assert abs(std_normal_quantile(std_normal_cdf(z)) - z) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-300, max_value=1 - 1e-16, exclude_min=True))
def test_quantile_residual(p):
    x = std_normal_quantile(p)
    if p < 0.5:
        assert abs(std_normal_cdf(x) - p) <= 1e-12 * max(p, 1e-300) + 1e-300 or abs(std_normal_cdf(x) / p - 1) < 1e-12
    else:
        assert abs(std_normal_cdf(x) - p) <= 1e-12


@pytest.mark.parametrize("a", [0.5, 1.0, 2.5, 7.0, 30.0])
@pytest.mark.parametrize("x", [0.01, 0.5, 3.0, 10.0, 60.0])
def test_incomplete_gamma_against_scipy(a, x):
    assert gamma_p(a, x) == pytest.approx(stats.gamma.cdf(x, a), abs=1e-14)
    assert gamma_q(a, x) == pytest.approx(stats.gamma.sf(x, a), rel=1e-12, abs=1e-300)


def test_chisq_examples():
    assert chisq_quantile(0.05, 2) == pytest.approx(5.991464547107979, abs=1e-12)
    assert chisq_quantile(0.05, 1) == pytest.approx(3.8414588206941254, abs=1e-10)
    assert chisq_quantile(1 - 1e-12, 3) < 1e-6
    assert chisq_sf(0.0, 4) == 1.0
    assert chisq_sf(5.9915, 2) == pytest.approx(0.05, abs=1e-4)
    assert chisq_sf(3.8415, 1) == pytest.approx(0.05, abs=1e-4)


@pytest.mark.parametrize("alpha", [0.01, 0.05, 0.1])
@pytest.mark.parametrize("r", [1, 2, 3, 4, 5, 6])
def test_chisq_roundtrip(alpha, r):
    q = chisq_quantile(alpha, r)
    assert abs(chisq_sf(q, r) - alpha) <= 1e-8
    assert q == pytest.approx(stats.chi2.isf(alpha, r), rel=1e-10)


@pytest.mark.parametrize("args", [(-1.0, 2), (1.0, 0), (1.0, 1.5)])
def test_chisq_sf_domain(args):
    with pytest.raises(DomainError):
        chisq_sf(*args)


@pytest.mark.parametrize("args", [(0.0, 2), (1.0, 2), (0.05, 0)])
def test_chisq_quantile_domain(args):
    with pytest.raises(DomainError):
        chisq_quantile(*args)


def test_solve_spd_trivial():
    b = np.array([1.0, -2.0, 3.0])
    sol = solve_spd(np.eye(3), b)
    assert np.array_equal(sol.value, b) and not sol.near_singular
    assert np.allclose(solve_spd(np.diag([2.0, 4.0]), [2.0, 4.0]).value, [1.0, 1.0])


def test_asymmetric_rejected():
    with pytest.raises(DomainError):
        solve_spd(np.array([[1.0, 0.5], [0.0, 1.0]]), [1.0, 1.0])


def test_near_singular_fallback():
    m = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-15]])
    sol = invert_spd(m)
    assert sol.near_singular
    assert np.allclose(m @ sol.value @ m, m, atol=1e-8)


def _random_spd(rng, n, cond):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.geomspace(1.0, cond, n)
    return (q * w) @ q.T


@pytest.mark.parametrize("seed", range(10))
def test_invert_spd_identity_and_involution(seed):
    rng = np.random.default_rng(seed)
    m = _random_spd(rng, 4, 10 ** rng.uniform(0, 6))
    m = 0.5 * (m + m.T)
    inv = invert_spd(m).value
    assert np.allclose(m @ inv, np.eye(4), atol=1e-8 * np.linalg.cond(m) / 1e2 + 1e-8)
    back = invert_spd(0.5 * (inv + inv.T)).value
    assert np.max(np.abs(back - m)) <= 1e-8 * np.max(np.abs(m)) * max(1.0, np.linalg.cond(m) / 1e4)
