"""Influence-function diagnostics for the minimum-DPD estimator and Wald-type tests.

Devices are observed only through their failed/survived status, so a
contaminating observation is represented by its binary outcome ``y``
(1 = failed by inspection, 0 = survived).
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import special

from .estimation import j_beta_matrix, sigma_beta
from .inference import WaldSpec
from .model import Dataset, _cell_z, link
from .numerics import DomainError, _cdf, invert_spd
from .objectives import _check_beta

__all__ = [
    "IFResult",
    "if_single",
    "if_all",
    "h_factors",
    "if2_wald",
    "omega_curve",
    "stress_curve",
    "PRESETS",
    "FIG_BETAS",
]

FIG_BETAS = (0.0, 0.2, 0.4, 0.6, 0.8)


class IFResult(NamedTuple):
    value: np.ndarray
    near_singular: bool


def _check_outcome(y):
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DomainError("contaminating outcomes must be 0 or 1")
    return y


def _weighted_density(z, beta):
    # phi(z) (Phi(z)^(b-1) + (1 - Phi(z))^(b-1)) in log space: no probability
    # floor, so the beta = 0 growth phi/(1 - Phi) ~ z stays visible far into
    # the tails
    log_dens = -0.5 * z * z - 0.5 * math.log(2.0 * math.pi)
    return np.exp(log_dens + (beta - 1.0) * special.log_ndtr(z)) + np.exp(
        log_dens + (beta - 1.0) * special.log_ndtr(-z)
    )


def _terms(theta0, data: Dataset, beta: float):
    # per-group score direction (K_i/K) w_i (-dF_i/dtheta); its product with
    # (F_i - y_i) is the per-group contribution before J^-1
    z, sigma = _cell_z(theta0, data)
    dw = data.weights * _weighted_density(z, beta)
    T = np.concatenate([(dw / sigma)[:, None] * data.X, (z * dw)[:, None] * data.X], axis=1)
    return _cdf(z), T


def if_single(theta0, data: Dataset, group: int, y, beta: float) -> IFResult:
    """First-order IF of the estimator for one contaminating observation in ``group``.

    ``J_beta^-1 (K_i/K) (delta_i x_i) (F^(b-1) + R^(b-1)) (F_i - y)`` where
    ``delta_i x_i = -dF_i/dtheta`` (positive derivative factors with respect
    to the location and log-scale links).
    """
    beta = _check_beta(beta)
    if not (isinstance(group, (int, np.integer)) and 0 <= group < data.I):
        raise DomainError(f"group index must be in 0..{data.I - 1}, got {group}")
    y = float(_check_outcome(y))
    F, T = _terms(theta0, data, beta)
    J_inv, flag = invert_spd(j_beta_matrix(theta0, data, beta))
    return IFResult(J_inv @ (T[group] * (F[group] - y)), flag)


def if_all(theta0, data: Dataset, y, beta: float) -> IFResult:
    """First-order IF with one contaminating observation in every group."""
    beta = _check_beta(beta)
    y = _check_outcome(y).reshape(-1)
    if y.size != data.I:
        raise DomainError(f"expected {data.I} outcomes, got {y.size}")
    F, T = _terms(theta0, data, beta)
    J_inv, flag = invert_spd(j_beta_matrix(theta0, data, beta))
    return IFResult(J_inv @ ((F - y) @ T), flag)


def h_factors(omega, x, theta, beta: float):
    """IF factors ``(h1, h2)`` for a single stress factor.

    ``h1 = phi(z)/sigma * w * x`` and ``h2 = z phi(z) * w * x`` with
    ``z = (omega - mu)/sigma`` and ``w = Phi(z)^(b-1) + (1 - Phi(z))^(b-1)``.
    ``theta = (a0, a1, b0, b1)``; ``omega`` may be an array.
    """
    beta = _check_beta(beta)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (4,):
        raise DomainError("h_factors expects theta = (a0, a1, b0, b1)")
    x = float(x)
    mu, sigma = link(theta, np.array([1.0, x]))
    omega = np.asarray(omega, dtype=float)
    if not np.all(np.isfinite(omega)):
        raise DomainError("omega must be finite")
    z = (omega - mu) / sigma
    dw = _weighted_density(z, beta)
    h1 = dw / sigma * x
    h2 = z * dw * x
    if np.ndim(omega) == 0:
        return float(h1), float(h2)
    return h1, h2


def if2_wald(theta0, data: Dataset, spec: WaldSpec, beta: float, y, group: int | None = None) -> float:
    """Second-order IF of the Wald-type test functional.

    ``2 s IF^T IF`` with ``s = (A theta0 - c)^T (A Sigma A^T)^-1 (A theta0 - c)``
    and ``Sigma`` the sandwich at ``theta0``. ``IF`` is :func:`if_single` when
    ``group`` is given (``y`` a scalar) and :func:`if_all` otherwise. The
    middle factor vanishes when ``theta0`` satisfies the null.
    """
    if group is None:
        IF = if_all(theta0, data, y, beta).value
    else:
        IF = if_single(theta0, data, group, y, beta).value
    m = spec.m(theta0)
    S = sigma_beta(theta0, data, beta)
    middle = spec.A @ S @ spec.A.T
    inv, near_singular = invert_spd(0.5 * (middle + middle.T))
    if near_singular:
        raise DomainError("constraint covariance singular")
    s = float(m @ inv @ m)
    return 2.0 * s * float(IF @ IF)


# --------------------------------------------------------------------------
# Curve presets
# --------------------------------------------------------------------------

PRESETS = {
    # mu = 1, sigma = 1, x = 1 while omega varies
    "fig1-omega": {"theta": (1.0, 0.0, 0.0, 0.0), "x": 1.0, "grid": (-4.0, 10.0, 0.05)},
    # omega = 1 while the stress x >= 0 varies, for b1 = +1 and b1 = -1
    "fig1-x-pos": {"theta": (0.0, -1.0, 0.0, 1.0), "omega": 1.0, "grid": (0.0, 5.0, 0.025)},
    "fig1-x-neg": {"theta": (0.0, -1.0, 0.0, -1.0), "omega": 1.0, "grid": (0.0, 5.0, 0.025)},
}


def _grid(start: float, stop: float, step: float) -> np.ndarray:
    if not step > 0 or stop < start:
        raise DomainError("grid needs step > 0 and stop >= start")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def omega_curve(theta, x, betas=FIG_BETAS, grid=(-4.0, 10.0, 0.05)):
    """Rows ``(omega, beta, h1, h2)`` over a fixed-step ``omega`` grid."""
    omegas = _grid(*grid)
    rows = []
    for beta in betas:
        h1, h2 = h_factors(omegas, x, theta, beta)
        rows.extend(zip(omegas, [float(beta)] * omegas.size, h1, h2))
    return rows


def stress_curve(theta, omega, betas=FIG_BETAS, grid=(0.0, 5.0, 0.025)):
    """Rows ``(x, beta, h1, h2)`` over a fixed-step stress grid."""
    xs = _grid(*grid)
    rows = []
    for beta in betas:
        for x in xs:
            h1, h2 = h_factors(omega, x, theta, beta)
            rows.append((float(x), float(beta), h1, h2))
    return rows


def preset_curve(name: str, betas=FIG_BETAS):
    try:
        p = PRESETS[name]
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if "x" in p:
        return omega_curve(p["theta"], p["x"], betas, p["grid"])
    return stress_curve(p["theta"], p["omega"], betas, p["grid"])
