"""Divergence objectives between empirical and model failure probabilities.

For each test condition the empirical pair is ``(n/K, 1 - n/K)`` and the
model pair is ``(F, R)``. The weighted minimum-DPD estimator minimizes

    sum_i (K_i/K) [ F^(b+1) + R^(b+1) - (b+1)/b (p1 F^b + p2 R^b) ]

for tuning parameter ``b > 0``; ``b = 0`` is the maximum-likelihood case and
is served by ``neg_log_likelihood / K``, the limit of the expression above
after removing its ``-1/b`` divergence.
"""

from __future__ import annotations

import numpy as np

from .model import Dataset, cell_gradients, cell_probabilities, delta_vector
from .numerics import DomainError

__all__ = [
    "PROB_FLOOR",
    "neg_log_likelihood",
    "kl_objective",
    "kl_constant",
    "dpd_objective",
    "dpd_gradient",
    "estimating_equations",
    "mle_score",
    "clamp_active",
]

PROB_FLOOR = 1e-12


def _check_beta(beta) -> float:
    beta = float(beta)
    if not (beta >= 0.0) or not np.isfinite(beta):
        raise DomainError(f"tuning parameter beta must be >= 0, got {beta}")
    return beta


def _xlogy(x, y):
    # 0 * log(0) = 0; nonzero count against a zero probability gives +inf
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x == 0.0, 0.0, x * np.log(y))


def neg_log_likelihood(theta, data: Dataset) -> float:
    """``-sum_i [n_i log F_i + (K_i - n_i) log R_i]``.

    Returns ``inf`` when a probability underflows to zero against a
    nonzero count.
    """
    F, R = cell_probabilities(theta, data)
    return float(-np.sum(_xlogy(data.n, F) + _xlogy(data.K - data.n, R)))


def kl_constant(data: Dataset) -> float:
    """theta-free part of the weighted KL divergence: ``sum (K_i/K) [p log p + q log q]``."""
    p = data.p_hat
    q = 1.0 - p
    return float(np.sum(data.weights * (_xlogy(p, p) + _xlogy(q, q))))


def kl_objective(theta, data: Dataset) -> float:
    """Weighted Kullback-Leibler divergence ``sum (K_i/K) d_KL(p_hat_i, pi_i)``."""
    F, R = cell_probabilities(theta, data)
    p = data.p_hat
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(p == 0.0, 0.0, p * (np.log(p) - np.log(F)))
        t2 = np.where(q == 0.0, 0.0, q * (np.log(q) - np.log(R)))
    return float(np.sum(data.weights * (t1 + t2)))


def _clamp(F, R):
    return np.clip(F, PROB_FLOOR, 1.0 - PROB_FLOOR), np.clip(R, PROB_FLOOR, 1.0 - PROB_FLOOR)


def clamp_active(theta, data: Dataset) -> bool:
    """True when some cell probability falls outside the clamp range."""
    F, R = cell_probabilities(theta, data)
    return bool(np.any(F < PROB_FLOOR) or np.any(R < PROB_FLOOR))


def dpd_objective(theta, data: Dataset, beta: float) -> float:
    """Weighted DPD objective (theta-dependent part only).

    ``beta == 0`` returns ``neg_log_likelihood / K``.
    """
    beta = _check_beta(beta)
    if beta == 0.0:
        return neg_log_likelihood(theta, data) / data.total
    F, R = cell_probabilities(theta, data)
    p = data.p_hat
    q = 1.0 - p
    terms = F ** (beta + 1.0) + R ** (beta + 1.0) - (beta + 1.0) / beta * (p * F**beta + q * R**beta)
    return float(np.sum(data.weights * terms))


def _cell_weight(F, R, beta):
    Fc, Rc = _clamp(F, R)
    return Fc ** (beta - 1.0) + Rc ** (beta - 1.0)


def dpd_gradient(theta, data: Dataset, beta: float) -> np.ndarray:
    """Exact gradient of :func:`dpd_objective`.

    Equals ``(beta+1)/K * sum_i (K_i F_i - n_i)(F_i^(beta-1) + R_i^(beta-1)) dF_i/dtheta``,
    with the powers evaluated on probabilities clamped to ``[1e-12, 1-1e-12]``.
    """
    beta = _check_beta(beta)
    F, R, G = cell_gradients(theta, data)
    resid = data.K * F - data.n
    coef = (beta + 1.0) * resid * _cell_weight(F, R, beta) / data.total
    return coef @ G


def estimating_equations(theta, data: Dataset, beta: float) -> np.ndarray:
    """Estimating-equation residual ``sum_i delta_i (K_i F_i - n_i)(F^(b-1) + R^(b-1)) x_i``.

    Computed group by group from the delta factors; vanishes at the
    estimator. Relation: ``K * dpd_gradient == (beta + 1) * estimating_equations``.
    """
    beta = _check_beta(beta)
    out = np.zeros(data.n_params)
    half = data.n_params // 2
    for i in range(data.I):
        x = data.X[i]
        d = delta_vector(theta, x, data.W[i])
        F, R = cell_probabilities(theta, _single(data, i))
        w = _cell_weight(F[0], R[0], beta)
        factor = (data.K[i] * F[0] - data.n[i]) * w
        out[:half] += d[0] * factor * x
        out[half:] += d[1] * factor * x
    return out


def mle_score(theta, data: Dataset) -> np.ndarray:
    """Gradient of the log-likelihood: ``sum_i [n_i/F_i - (K_i-n_i)/R_i] dF_i/dtheta``."""
    F, R, G = cell_gradients(theta, data)
    return (data.n / F - (data.K - data.n) / R) @ G


def _single(data: Dataset, i: int) -> Dataset:
    return Dataset(tau=data.tau[i : i + 1], K=data.K[i : i + 1], n=data.n[i : i + 1], X=data.X[i : i + 1])
