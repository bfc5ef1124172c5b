"""Special functions and small dense linear algebra.

Normal density/CDF/quantile, chi-squared tail probabilities and quantiles
(through the regularized incomplete gamma function), and symmetric
positive-definite solves with a pseudo-inverse fallback.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "std_normal_pdf",
    "std_normal_cdf",
    "std_normal_sf",
    "std_normal_quantile",
    "gamma_p",
    "gamma_q",
    "chisq_sf",
    "chisq_quantile",
    "SPDSolution",
    "solve_spd",
    "invert_spd",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT_HALF = math.sqrt(0.5)

PIVOT_RTOL = 1e-12
SYMMETRY_TOL = 1e-10


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a function."""


def _require_finite(z, name="z"):
    if not np.all(np.isfinite(z)):
        raise DomainError(f"{name} must be finite")


def _as_output(value, like):
    return float(value) if np.ndim(like) == 0 else value


def _pdf(z):
    # unchecked array kernels for the hot loops; z*z may overflow to inf, giving 0
    with np.errstate(over="ignore"):
        return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _cdf(z):
    return 0.5 * special.erfc(-z * _SQRT_HALF)


def _sf(z):
    return 0.5 * special.erfc(z * _SQRT_HALF)


def std_normal_pdf(z):
    """Standard normal density. Accepts scalars or arrays."""
    z = np.asarray(z, dtype=float) if not np.isscalar(z) else float(z)
    _require_finite(z)
    return _as_output(_INV_SQRT_2PI * np.exp(-0.5 * np.square(z)), z)


def std_normal_cdf(z):
    """Standard normal CDF evaluated as ``erfc(-z/sqrt(2))/2``.

    The complementary error function keeps full relative accuracy in the
    lower tail and absolute error below 1e-16 elsewhere.
    """
    z = np.asarray(z, dtype=float) if not np.isscalar(z) else float(z)
    _require_finite(z)
    return _as_output(0.5 * special.erfc(-np.asarray(z) * _SQRT_HALF), z)


def std_normal_sf(z):
    """Upper tail ``1 - Phi(z)`` without cancellation."""
    z = np.asarray(z, dtype=float) if not np.isscalar(z) else float(z)
    _require_finite(z)
    return _as_output(0.5 * special.erfc(np.asarray(z) * _SQRT_HALF), z)


# Acklam's rational approximation (relative error ~1.15e-9), used only as a
# starting point for Newton refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
        (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


def std_normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF for ``p`` in (0, 1).

    A rational initial guess is polished by Newton steps on ``Phi(x) - p``;
    in the lower half the residual is taken on the lower tail, in the upper
    half on the upper tail, so both tails keep relative precision.
    """
    p = float(p)
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    x = _acklam(p)
    upper = p > 0.5
    q = 1.0 - p
    for _ in range(4):
        dens = _INV_SQRT_2PI * math.exp(-0.5 * x * x)
        if dens == 0.0:
            break
        if upper:
            resid = q - 0.5 * math.erfc(x * _SQRT_HALF)
            step = resid / dens
        else:
            resid = 0.5 * math.erfc(-x * _SQRT_HALF) - p
            step = resid / dens
        # Halley correction; the density's log-derivative is -x
        step = step / (1.0 + 0.5 * x * step)
        x -= step
        if abs(step) <= 1e-16 * max(1.0, abs(x)):
            break
    return x


def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x), valid for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_contfrac(a: float, x: float) -> float:
    # upper regularized Q(a, x) by modified Lentz, valid for x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if a <= 0.0 or x < 0.0:
        raise DomainError("gamma_p requires a > 0 and x >= 0")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_contfrac(a, x)


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x) = 1 - P(a, x)."""
    if a <= 0.0 or x < 0.0:
        raise DomainError("gamma_q requires a > 0 and x >= 0")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_contfrac(a, x)


def _check_dof(r) -> int:
    if isinstance(r, bool) or int(r) != r or r < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {r}")
    return int(r)


def chisq_sf(x: float, r: int) -> float:
    """Survival function P(chi2_r > x)."""
    r = _check_dof(r)
    x = float(x)
    if not math.isfinite(x) and x > 0:
        return 0.0
    if not (x >= 0.0):
        raise DomainError(f"x must be nonnegative, got {x}")
    return gamma_q(0.5 * r, 0.5 * x)


def _chisq_logpdf(x: float, r: int) -> float:
    k = 0.5 * r
    return (k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k)


def chisq_quantile(alpha: float, r: int) -> float:
    """Upper ``alpha`` point of chi2_r: the x with P(chi2_r > x) = alpha."""
    r = _check_dof(r)
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if r == 2:
        return -2.0 * math.log(alpha)

    # Wilson-Hilferty start, then safeguarded Newton inside a bracket
    z = std_normal_quantile(1.0 - alpha)
    c = 2.0 / (9.0 * r)
    x = r * max(1.0 - c + z * math.sqrt(c), 1e-3) ** 3
    lo, hi = 0.0, max(2.0 * x, r + 10.0)
    while chisq_sf(hi, r) > alpha:
        hi *= 2.0
    for _ in range(200):
        if not (lo < x < hi):
            x = 0.5 * (lo + hi)
        resid = chisq_sf(x, r) - alpha
        if resid > 0.0:
            lo = x
        else:
            hi = x
        if abs(resid) <= 1e-15 * max(alpha, 1e-300) or hi - lo <= 1e-15 * hi:
            break
        # d/dx sf = -pdf
        x_new = x + resid / math.exp(_chisq_logpdf(x, r))
        x = x_new if lo < x_new < hi else 0.5 * (lo + hi)
    return x


class SPDSolution(NamedTuple):
    value: np.ndarray
    near_singular: bool


def _check_symmetric(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix has non-finite entries")
    if np.any(np.abs(m - m.T) > SYMMETRY_TOL * (1.0 + np.abs(m))):
        raise DomainError("matrix is not symmetric")
    return m


def _pinv_sym(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    # never invert below the smallest normal number, where 1/w overflows
    cutoff = max(PIVOT_RTOL * np.max(np.abs(w)), np.finfo(float).tiny)
    keep = np.abs(w) > cutoff
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (v * inv_w) @ v.T


def _cholesky_ok(m: np.ndarray):
    try:
        low = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None
    pivots = np.diag(low) ** 2
    if pivots.min() < PIVOT_RTOL * np.max(np.diag(m)):
        return None
    return low


def solve_spd(m, rhs) -> SPDSolution:
    """Solve ``m @ x = rhs`` for symmetric positive-definite ``m``.

    Falls back to an eigenvalue-thresholded pseudo-inverse when the
    Cholesky factorization fails or its smallest pivot is below
    ``1e-12 * max(diag(m))``; the result is then flagged near-singular.
    """
    m = _check_symmetric(m)
    rhs = np.asarray(rhs, dtype=float)
    low = _cholesky_ok(m)
    if low is None:
        return SPDSolution(_pinv_sym(m) @ rhs, True)
    y = np.linalg.solve(low, rhs)
    return SPDSolution(np.linalg.solve(low.T, y), False)


def invert_spd(m) -> SPDSolution:
    """Inverse of a symmetric positive-definite matrix, same fallback as :func:`solve_spd`."""
    m = _check_symmetric(m)
    low = _cholesky_ok(m)
    if low is None:
        return SPDSolution(_pinv_sym(m), True)
    low_inv = np.linalg.inv(low)
    inv = low_inv.T @ low_inv
    return SPDSolution(0.5 * (inv + inv.T), False)
