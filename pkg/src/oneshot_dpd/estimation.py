"""Weighted minimum-DPD estimation and its asymptotic covariance."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from .model import (
    Dataset,
    cell_gradients,
    full_gradient_F,
    mean_lifetime,
    mean_lifetime_gradient,
    reliability,
)
from .numerics import DomainError, invert_spd, solve_spd, std_normal_quantile
from .objectives import _cell_weight, _check_beta, clamp_active, dpd_gradient, dpd_objective

__all__ = [
    "FitConfig",
    "FitResult",
    "NonIdentifiableError",
    "fit",
    "probit_initializer",
    "j_beta_matrix",
    "k_beta_matrix",
    "sigma_beta",
    "Reliability",
    "MeanLifetime",
    "delta_method_se",
    "target_value",
    "target_gradient",
]


class NonIdentifiableError(ValueError):
    """Every group shows the same degenerate outcome, so theta cannot be estimated."""


@dataclass(frozen=True)
class FitConfig:
    beta: float = 0.0
    max_iter: int = 200
    grad_tol: float = 1e-8
    n_starts: int = 5
    seed: int = 0

    def __post_init__(self):
        _check_beta(self.beta)
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class FitResult:
    theta_hat: np.ndarray
    beta: float
    objective: float
    grad_norm: float
    covariance: np.ndarray
    converged: bool
    near_singular: bool
    iterations: int
    total_devices: float
    clamped: bool = False
    start_index: int = 0
    n_converged_starts: int = 0
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def n_params(self) -> int:
        return self.theta_hat.size

    @property
    def a(self) -> np.ndarray:
        return self.theta_hat[: self.n_params // 2]

    @property
    def b(self) -> np.ndarray:
        return self.theta_hat[self.n_params // 2 :]

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def sigma_hat(self) -> np.ndarray:
        """Estimated ``Sigma_beta``: the covariance scaled back up by ``K``."""
        return self.covariance * self.total_devices


# --------------------------------------------------------------------------
# Sandwich pieces
# --------------------------------------------------------------------------

def j_beta_matrix(theta, data: Dataset, beta: float) -> np.ndarray:
    """``J_beta = sum_i (K_i/K) (F^(b-1) + R^(b-1)) g_i g_i^T`` with ``g_i = dF_i/dtheta``."""
    beta = _check_beta(beta)
    F, R, G = cell_gradients(theta, data)
    w = data.weights * _cell_weight(F, R, beta)
    J = (G * w[:, None]).T @ G
    return 0.5 * (J + J.T)


def k_beta_matrix(theta, data: Dataset, beta: float) -> np.ndarray:
    """``K_beta = sum_i (K_i/K) F R (F^(b-1) + R^(b-1))^2 g_i g_i^T``."""
    beta = _check_beta(beta)
    F, R, G = cell_gradients(theta, data)
    w = data.weights * F * R * _cell_weight(F, R, beta) ** 2
    Km = (G * w[:, None]).T @ G
    return 0.5 * (Km + Km.T)


def sigma_beta(theta, data: Dataset, beta: float, return_flag: bool = False):
    """Asymptotic covariance of ``sqrt(K)(theta_hat - theta)``: ``J^-1 K J^-1``."""
    J = j_beta_matrix(theta, data, beta)
    Km = k_beta_matrix(theta, data, beta)
    J_inv, near_singular = invert_spd(J)
    S = J_inv @ Km @ J_inv
    S = 0.5 * (S + S.T)
    return (S, near_singular) if return_flag else S


# --------------------------------------------------------------------------
# Optimizer
# --------------------------------------------------------------------------

def probit_initializer(data: Dataset) -> np.ndarray:
    """Least-squares seed from empirical probits.

    With ``z_i = Phi^-1((n_i + 0.5)/(K_i + 1))``, regress ``W_i`` on
    ``(x_i, z_i)``: the ``x`` coefficients seed ``a`` and the ``z``
    coefficient is a common scale ``sigma``; ``b = (log sigma, 0, ..., 0)``.
    """
    p_tilde = (data.n + 0.5) / (data.K + 1.0)
    z = np.array([std_normal_quantile(p) for p in p_tilde])
    design = np.column_stack([data.X, z])
    coef, *_ = np.linalg.lstsq(design, data.W, rcond=None)
    a = coef[:-1]
    scale = coef[-1]
    if not (np.isfinite(scale) and scale > 1e-3):
        # probits carry no usable slope; fall back to the spread of log-times
        scale = max(float(np.std(data.W)), 1.0)
        a = np.linalg.lstsq(data.X, data.W - scale * z, rcond=None)[0]
    b = np.zeros(data.X.shape[1])
    b[0] = math.log(scale)
    return np.concatenate([a, b])


def _safe_objective(theta, data, beta) -> float:
    try:
        value = dpd_objective(theta, data, beta)
    except DomainError:
        return math.inf
    return value if math.isfinite(value) else math.inf


class _Descent(NamedTuple):
    theta: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    converged: bool


_ARMIJO_C = 1e-4
ROUNDOFF_RTOL = 1e-14
_MAX_HALVINGS = 60


def _roundoff(f: float) -> float:
    return ROUNDOFF_RTOL * max(1.0, abs(f))


def _line_search(theta, f, g, direction, data, beta):
    slope = float(g @ direction)
    noise = _roundoff(f)
    step = 1.0
    for _ in range(_MAX_HALVINGS):
        trial = theta + step * direction
        f_new = _safe_objective(trial, data, beta)
        if f_new < f and f_new <= f + _ARMIJO_C * step * slope:
            return trial, f_new
        if -step * slope < 1e-3 * noise:
            break
        step *= 0.5
    # Near the optimum the predicted decrease drops below the objective's
    # rounding error; accept the full step there if it shrinks the gradient.
    if -slope < noise:
        trial = theta + direction
        f_new = _safe_objective(trial, data, beta)
        if f_new <= f + noise:
            g_new = dpd_gradient(trial, data, beta)
            if np.linalg.norm(g_new) < np.linalg.norm(g):
                return trial, f_new
    return None


def _newton(theta, data: Dataset, beta: float, max_iter: int, grad_tol: float) -> _Descent:
    f = _safe_objective(theta, data, beta)
    if not math.isfinite(f):
        return _Descent(theta, math.inf, math.inf, 0, False)
    g = dpd_gradient(theta, data, beta)
    gnorm = float(np.linalg.norm(g))
    for it in range(1, max_iter + 1):
        H = (beta + 1.0) * j_beta_matrix(theta, data, beta)
        step = _newton_step(H, g)
        if gnorm <= grad_tol:
            return _Descent(theta, f, gnorm, it - 1, step is not None)
        direction = step.value if step is not None else solve_spd(H, -g).value
        if not np.all(np.isfinite(direction)) or g @ direction >= -1e-14 * gnorm * np.linalg.norm(direction):
            direction = -g
        found = _line_search(theta, f, g, direction, data, beta)
        if found is None and not np.array_equal(direction, -g):
            found = _line_search(theta, f, g, -g, data, beta)
        if found is None:
            # no representable decrease left along either direction
            return _Descent(theta, f, gnorm, it, gnorm <= grad_tol and _curved(theta, data, beta))
        theta, f = found
        g = dpd_gradient(theta, data, beta)
        gnorm = float(np.linalg.norm(g))
    return _Descent(theta, f, gnorm, max_iter, gnorm <= grad_tol and _curved(theta, data, beta))


def _newton_step(H, g):
    # None flags a (numerically) flat objective, e.g. every cell saturated at
    # F = 0 or 1 where the gradient underflows to zero; such points are
    # never reported as converged
    sol = solve_spd(H, -g) if np.all(np.isfinite(H)) and np.any(H) else None
    if sol is None or sol.near_singular:
        return None
    return sol


def _curved(theta, data: Dataset, beta: float) -> bool:
    H = j_beta_matrix(theta, data, beta)
    return _newton_step(H, np.zeros(H.shape[0])) is not None


def _check_identifiable(data: Dataset) -> None:
    if np.all(data.n == 0) or np.all(data.n == data.K):
        raise NonIdentifiableError("non-identifiable: degenerate outcome (all groups have n=0 or all have n=K)")


def fit(data: Dataset, config: FitConfig | None = None, **overrides) -> FitResult:
    """Weighted minimum-DPD estimate of theta.

    Damped Gauss-Newton on the DPD objective: the curvature surrogate is
    ``(beta+1) J_beta``, steps are backtracked until the Armijo condition
    holds, and steepest descent is used when the Newton direction fails to
    descend. Runs ``config.n_starts`` starts: the probit seed followed by
    seeded Gaussian perturbations of it. The winner is the converged start
    with the lowest objective (ties: gradient norm, then start index); if no
    start converges the best iterate is returned with ``converged=False``.
    """
    if config is None:
        config = FitConfig(**overrides)
    elif overrides:
        config = FitConfig(**{**config.__dict__, **overrides})
    _check_identifiable(data)
    beta = config.beta

    seed_theta = probit_initializer(data)
    starts = [seed_theta]
    if config.n_starts > 1:
        rng = np.random.default_rng(config.seed)
        jitter = 0.25 * (1.0 + np.abs(seed_theta))
        for _ in range(config.n_starts - 1):
            starts.append(seed_theta + jitter * rng.standard_normal(seed_theta.size))

    runs = [_newton(s, data, beta, config.max_iter, config.grad_tol) for s in starts]
    converged = [i for i, r in enumerate(runs) if r.converged]
    pool = converged if converged else list(range(len(runs)))
    best = min(pool, key=lambda i: (runs[i].objective, runs[i].grad_norm, i))
    run = runs[best]

    theta_hat = run.theta
    K = data.total
    try:
        S, near_singular = sigma_beta(theta_hat, data, beta, return_flag=True)
        covariance = S / K
    except DomainError:
        covariance = np.full((theta_hat.size, theta_hat.size), np.nan)
        near_singular = True
    try:
        clamped = clamp_active(theta_hat, data)
    except DomainError:
        clamped = True
    return FitResult(
        theta_hat=theta_hat,
        beta=beta,
        objective=run.objective,
        grad_norm=run.grad_norm,
        covariance=covariance,
        converged=run.converged,
        near_singular=near_singular,
        iterations=sum(r.iterations for r in runs),
        total_devices=K,
        clamped=clamped,
        start_index=best,
        n_converged_starts=len(converged),
        config=config,
    )


# --------------------------------------------------------------------------
# Delta method
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Reliability:
    """Reliability at covariates ``x`` (intercept included) and mission time ``t``."""

    x: tuple
    t: float


@dataclass(frozen=True)
class MeanLifetime:
    """Mean lifetime at covariates ``x`` (intercept included)."""

    x: tuple


Target = Union[Reliability, MeanLifetime]


def target_value(theta, target: Target) -> float:
    if isinstance(target, Reliability):
        return float(reliability(theta, np.asarray(target.x, float), target.t))
    if isinstance(target, MeanLifetime):
        return float(mean_lifetime(theta, np.asarray(target.x, float)))
    raise TypeError(f"unsupported target {target!r}")


def target_gradient(theta, target: Target) -> np.ndarray:
    if isinstance(target, Reliability):
        x = np.asarray(target.x, float)
        return -full_gradient_F(theta, x, math.log(target.t))
    if isinstance(target, MeanLifetime):
        return mean_lifetime_gradient(theta, np.asarray(target.x, float))
    raise TypeError(f"unsupported target {target!r}")


def delta_method_se(fit_result: FitResult, target: Target) -> float:
    """Standard error of a lifetime characteristic: ``sqrt(P^T V P)``."""
    P = target_gradient(fit_result.theta_hat, target)
    var = float(P @ fit_result.covariance @ P)
    if var < 0.0:
        warnings.warn(f"negative delta-method variance {var:.3g} clipped to zero", RuntimeWarning, stacklevel=2)
        var = 0.0
    return math.sqrt(var)
