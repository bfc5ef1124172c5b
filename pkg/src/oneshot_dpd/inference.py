"""Confidence intervals and Wald-type tests built on a fitted estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimation import FitResult
from .model import Dataset, cell_probabilities, delta_vector
from .numerics import DomainError, chisq_sf, invert_spd, std_normal_quantile

__all__ = [
    "ConfidenceInterval",
    "ci_asymptotic",
    "ci_logit_reliability",
    "ci_arsech_reliability",
    "ci_log_mean",
    "WaldSpec",
    "WaldResult",
    "wald_type_test",
    "stress_factor_test",
    "observed_fisher_information",
    "classical_wald_test",
    "RANK_TOL",
]

RANK_TOL = 1e-10
DEFAULT_LEVELS = (0.01, 0.05, 0.10)


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    method: str
    degenerate: bool = False

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise DomainError(f"interval bounds out of order: ({self.lower}, {self.upper})")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def _z(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return std_normal_quantile(1.0 - alpha / 2.0)


def _check_se(se: float) -> float:
    se = float(se)
    if not (se >= 0.0) or not math.isfinite(se):
        raise DomainError(f"standard error must be finite and nonnegative, got {se}")
    return se


def ci_asymptotic(estimate, se, alpha) -> ConfidenceInterval:
    """Wald interval ``estimate -/+ z se``. No truncation is applied."""
    z = _z(alpha)
    se = _check_se(se)
    estimate = float(estimate)
    return ConfidenceInterval(estimate - z * se, estimate + z * se, 1.0 - alpha, "asy")


def _check_reliability(R_hat) -> float:
    R_hat = float(R_hat)
    if not (0.0 <= R_hat <= 1.0):
        raise DomainError(f"reliability estimate must lie in [0, 1], got {R_hat}")
    return R_hat


def ci_logit_reliability(R_hat, se_R, alpha) -> ConfidenceInterval:
    """Interval for a reliability built on the logit scale.

    With ``S = exp(z se / (R (1 - R)))`` the bounds are
    ``R / (R + (1 - R) S)`` and ``R / (R + (1 - R) / S)``. A boundary estimate
    gives the point interval ``(R, R)`` flagged as degenerate.
    """
    z = _z(alpha)
    se_R = _check_se(se_R)
    R = _check_reliability(R_hat)
    if R in (0.0, 1.0):
        return ConfidenceInterval(R, R, 1.0 - alpha, "logit", degenerate=True)
    S = math.exp(min(z * se_R / (R * (1.0 - R)), 700.0))
    lower = R / (R + (1.0 - R) * S)
    upper = R / (R + (1.0 - R) / S)
    return ConfidenceInterval(lower, upper, 1.0 - alpha, "logit")


def ci_arsech_reliability(R_hat, se_R, alpha) -> ConfidenceInterval:
    """Interval for a reliability built on the arsech scale.

    ``f = arsech(R)`` has standard error ``se / (R sqrt(1 - R^2))``; the
    interval is ``(sech(f + z se_f), sech(f - z se_f))``. ``sech`` is even, so
    when ``f - z se_f`` drops below zero the image of the interval is
    ``(sech(max(U_f, |L_f|)), 1)``.
    """
    z = _z(alpha)
    se_R = _check_se(se_R)
    R = _check_reliability(R_hat)
    if R in (0.0, 1.0):
        return ConfidenceInterval(R, R, 1.0 - alpha, "arsech", degenerate=True)
    root = math.sqrt(1.0 - R * R)
    f = math.log((1.0 + root) / R)
    se_f = se_R / (R * root)
    U = f + z * se_f
    L = f - z * se_f
    if L >= 0.0:
        lower, upper = _sech(U), _sech(L)
    else:
        # [L, U] straddles 0 where sech peaks at 1
        lower, upper = _sech(max(U, -L)), 1.0
    return ConfidenceInterval(lower, upper, 1.0 - alpha, "arsech")


def _sech(u: float) -> float:
    u = abs(u)
    if u > 700.0:
        return 0.0
    return 2.0 / (math.exp(-u) + math.exp(u))


def ci_log_mean(T_hat, se_T, alpha) -> ConfidenceInterval:
    """Interval ``T exp(-/+ z se / T)`` for a positive quantity such as a mean lifetime."""
    z = _z(alpha)
    se_T = _check_se(se_T)
    T = float(T_hat)
    if not (T > 0.0) or not math.isfinite(T):
        raise DomainError(f"estimate must be positive and finite, got {T}")
    factor = math.exp(min(z * se_T / T, 700.0))
    return ConfidenceInterval(T / factor, T * factor, 1.0 - alpha, "log")


# --------------------------------------------------------------------------
# Wald-type tests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WaldSpec:
    """Linear null hypothesis ``A theta = c`` with ``A`` of full row rank."""

    A: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim == 1:
            A = A.reshape(1, -1)
        c = np.array(self.c, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != c.size:
            raise DomainError(f"A has {A.shape[0]} rows but c has {c.size} entries")
        if A.shape[0] > A.shape[1]:
            raise DomainError("more constraints than parameters")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(c))):
            raise DomainError("constraint entries must be finite")
        sv = np.linalg.svd(A, compute_uv=False)
        if sv.size == 0 or sv[-1] <= RANK_TOL * max(sv[0], 1.0):
            raise DomainError("constraint matrix A is rank deficient")
        A.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    @property
    def r(self) -> int:
        return self.A.shape[0]

    def m(self, theta) -> np.ndarray:
        return self.A @ np.asarray(theta, dtype=float) - self.c


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    dof: int
    p_value: float
    reject_at: dict = field(default_factory=dict)


def _wald(m: np.ndarray, cov: np.ndarray, dof: int, levels) -> WaldResult:
    # cov is the covariance of m itself, A V A^T
    cov = 0.5 * (cov + cov.T)
    inv, near_singular = invert_spd(cov)
    if near_singular:
        raise DomainError("constraint covariance singular")
    stat = float(m @ inv @ m)
    stat = max(stat, 0.0)
    p = chisq_sf(stat, dof)
    return WaldResult(stat, dof, p, {float(a): bool(p < a) for a in levels})


def wald_type_test(fit: FitResult, spec: WaldSpec, levels=DEFAULT_LEVELS) -> WaldResult:
    """Wald-type statistic ``m^T (A V A^T)^-1 m`` with ``m = A theta_hat - c``.

    ``V`` is the fit's covariance (the sandwich divided by ``K``), so this
    equals ``K m^T (A Sigma A^T)^-1 m``; the null distribution is chi-squared
    with ``r`` degrees of freedom.
    """
    theta = fit.theta_hat
    if spec.A.shape[1] != theta.size:
        raise DomainError(f"A has {spec.A.shape[1]} columns, theta has {theta.size} entries")
    V = fit.covariance
    if not np.all(np.isfinite(V)):
        raise DomainError("constraint covariance singular")
    return _wald(spec.m(theta), spec.A @ V @ spec.A.T, spec.r, levels)


def stress_factor_spec(n_params: int, j: int) -> WaldSpec:
    """Constraint ``a_j = b_j = 0`` for stress factor ``j`` (1-based)."""
    half = n_params // 2
    J = half - 1
    if not (isinstance(j, (int, np.integer)) and 1 <= j <= J):
        raise DomainError(f"stress factor index must be in 1..{J}, got {j}")
    A = np.zeros((2, n_params))
    A[0, j] = 1.0
    A[1, half + j] = 1.0
    return WaldSpec(A, np.zeros(2))


def stress_factor_test(fit: FitResult, j: int, levels=DEFAULT_LEVELS) -> WaldResult:
    """Test whether stress factor ``j`` affects the lifetime (``a_j = b_j = 0``)."""
    return wald_type_test(fit, stress_factor_spec(fit.theta_hat.size, j), levels)


def observed_fisher_information(theta, data: Dataset) -> np.ndarray:
    """``sum_i K_i (1/F_i + 1/R_i) g_i g_i^T`` with ``g_i = dF_i/dtheta``.

    Assembled group by group from the link derivatives, independently of the
    vectorized sandwich code.
    """
    p = data.n_params
    half = p // 2
    info = np.zeros((p, p))
    for i in range(data.I):
        x = data.X[i]
        d = delta_vector(theta, x, data.W[i])
        F, R = cell_probabilities(theta, Dataset(tau=data.tau[i : i + 1], K=[1.0], n=[0.0], X=data.X[i : i + 1]))
        g = np.empty(p)
        g[:half] = d[0] * x
        g[half:] = d[1] * x
        info += data.K[i] * (1.0 / F[0] + 1.0 / R[0]) * np.outer(g, g)
    return 0.5 * (info + info.T)


def classical_wald_test(theta_hat, data: Dataset, spec: WaldSpec, levels=DEFAULT_LEVELS) -> WaldResult:
    """Classical Wald test using the inverse observed Fisher information."""
    info = observed_fisher_information(theta_hat, data)
    V, near_singular = invert_spd(info)
    if near_singular:
        raise DomainError("constraint covariance singular")
    return _wald(spec.m(theta_hat), spec.A @ V @ spec.A.T, spec.r, levels)
