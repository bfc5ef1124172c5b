"""Lognormal one-shot device model.

Test data are grouped by test condition: ``K`` devices held at stress ``x``
are inspected once at time ``tau`` and ``n`` of them are found failed.
Lifetimes are lognormal with log-linear links

    mu    = a . x
    sigma = exp(b . x)

on the log-lifetime scale, with ``x[0] == 1``. The parameter vector is a flat
array ``theta = (a_0, ..., a_J, b_0, ..., b_J)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .numerics import DomainError, _cdf, _pdf, _sf, std_normal_cdf, std_normal_pdf, std_normal_sf

__all__ = [
    "TestGroup",
    "Dataset",
    "LinkValues",
    "DatasetFormatError",
    "split_theta",
    "link",
    "failure_probability",
    "reliability",
    "mean_lifetime",
    "lifetime_pdf",
    "hazard",
    "delta_vector",
    "full_gradient_F",
    "mean_lifetime_gradient",
    "cell_probabilities",
    "cell_gradients",
    "read_csv",
    "write_csv",
]


class DatasetFormatError(ValueError):
    """Malformed dataset file. Carries the 1-based ``row`` and column name when known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class TestGroup:
    """One test condition (a row of the data table)."""

    __test__ = False  # not a pytest class

    tau: float
    K: int
    n: int
    x: tuple[float, ...]

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise DomainError(f"inspection time must be positive, got {self.tau}")
        if self.K < 1 or int(self.K) != self.K:
            raise DomainError(f"K must be a positive integer, got {self.K}")
        if int(self.n) != self.n or not (0 <= self.n <= self.K):
            raise DomainError(f"n must be an integer in [0, K], got {self.n}")
        if len(self.x) < 1 or self.x[0] != 1.0:
            raise DomainError("covariate vector must start with the intercept 1")
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))

    @property
    def W(self) -> float:
        return math.log(self.tau)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of test groups stored column-wise.

    ``X`` has shape ``(I, J+1)`` and includes the intercept column. Counts
    ``n`` are stored as floats so that expected (non-integer) counts can be
    fed to the estimators; :class:`TestGroup` and the CSV reader insist on
    integers.
    """

    tau: np.ndarray
    K: np.ndarray
    n: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float).reshape(-1)
        K = np.array(self.K, dtype=float).reshape(-1)
        n = np.array(self.n, dtype=float).reshape(-1)
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        n_groups = tau.size
        if n_groups < 1:
            raise DomainError("a dataset needs at least one test group")
        if not (K.size == n.size == X.shape[0] == n_groups):
            raise DomainError("tau, K, n and X disagree on the number of groups")
        if not np.all(np.isfinite(tau)) or np.any(tau <= 0):
            raise DomainError("inspection times must be positive and finite")
        if np.any(K <= 0) or not np.all(np.isfinite(K)):
            raise DomainError("device counts must be positive")
        if np.any(n < 0) or np.any(n > K):
            raise DomainError("failure counts must satisfy 0 <= n <= K")
        if not np.all(X[:, 0] == 1.0):
            raise DomainError("first covariate column must be the intercept 1")
        if not np.all(np.isfinite(X)):
            raise DomainError("covariates must be finite")
        for name, arr in (("tau", tau), ("K", K), ("n", n), ("X", X)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        W = np.log(tau)
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @classmethod
    def from_groups(cls, groups: Sequence[TestGroup]) -> "Dataset":
        groups = list(groups)
        if not groups:
            raise DomainError("a dataset needs at least one test group")
        width = {len(g.x) for g in groups}
        if len(width) != 1:
            raise DomainError("all groups must share the covariate length")
        return cls(
            tau=[g.tau for g in groups],
            K=[g.K for g in groups],
            n=[g.n for g in groups],
            X=[g.x for g in groups],
        )

    @classmethod
    def from_stress(cls, tau, K, n, stress) -> "Dataset":
        """Build from stress covariates *without* the intercept column."""
        stress = np.asarray(stress, dtype=float)
        if stress.ndim == 1:
            stress = stress.reshape(-1, 1)
        X = np.column_stack([np.ones(stress.shape[0]), stress])
        return cls(tau=tau, K=K, n=n, X=X)

    def with_counts(self, n) -> "Dataset":
        return Dataset(tau=self.tau, K=self.K, n=n, X=self.X)

    @property
    def I(self) -> int:  # noqa: E743
        return self.tau.size

    @property
    def J(self) -> int:
        return self.X.shape[1] - 1

    @property
    def n_params(self) -> int:
        return 2 * self.X.shape[1]

    @property
    def total(self) -> float:
        """Total number of devices ``K = sum K_i``."""
        return float(self.K.sum())

    @property
    def weights(self) -> np.ndarray:
        return self.K / self.K.sum()

    @property
    def p_hat(self) -> np.ndarray:
        """Empirical failure proportions ``n_i / K_i``."""
        return self.n / self.K

    @property
    def groups(self) -> list[TestGroup]:
        return [
            TestGroup(tau=float(t), K=int(k), n=int(round(m)), x=tuple(row))
            for t, k, m, row in zip(self.tau, self.K, self.n, self.X)
        ]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in ("tau", "K", "n", "X")
        )

    def __repr__(self):
        return f"Dataset(I={self.I}, J={self.J}, K={self.total:g})"


class LinkValues(NamedTuple):
    mu: float | np.ndarray
    sigma: float | np.ndarray


def split_theta(theta) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size % 2 or theta.size == 0:
        raise DomainError(f"theta must be a flat vector of even length, got shape {theta.shape}")
    half = theta.size // 2
    return theta[:half], theta[half:]


def _design(theta, x):
    a, b = split_theta(theta)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != a.size:
        raise DomainError(f"covariate length {x.shape[-1]} does not match J+1 = {a.size}")
    return a, b, x


def link(theta, x) -> LinkValues:
    """Location and scale of log-lifetime at covariates ``x``.

    ``x`` may be a single covariate vector or an ``(I, J+1)`` matrix.
    """
    a, b, x = _design(theta, x)
    mu = x @ a
    eta = x @ b
    with np.errstate(over="ignore", under="ignore"):
        sigma = np.exp(eta)
    bad = ~np.isfinite(sigma) | (sigma <= 0.0) | ~np.isfinite(mu)
    if np.any(bad):
        where = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise DomainError(f"scale link overflow/underflow at group {where} (b.x = {np.atleast_1d(eta)[where]:.4g})")
    if x.ndim == 1:
        return LinkValues(float(mu), float(sigma))
    return LinkValues(mu, sigma)


def _standardized(theta, x, W):
    mu, sigma = link(theta, x)
    z = (np.asarray(W, dtype=float) - mu) / sigma
    return z, mu, sigma


def failure_probability(theta, x, tau):
    """``F = Phi((log tau - mu) / sigma)``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("tau must be positive")
    z, _, _ = _standardized(theta, x, np.log(tau))
    return std_normal_cdf(z)


def reliability(theta, x, tau):
    """``R = 1 - F``, computed from the upper tail."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("tau must be positive")
    z, _, _ = _standardized(theta, x, np.log(tau))
    return std_normal_sf(z)


def mean_lifetime(theta, x):
    """``E = exp(mu + sigma^2 / 2)``."""
    mu, sigma = link(theta, x)
    with np.errstate(over="ignore"):
        value = np.exp(mu + 0.5 * np.square(sigma))
    if not np.all(np.isfinite(value)):
        raise DomainError("mean lifetime overflows")
    return float(value) if np.ndim(value) == 0 else value


def lifetime_pdf(theta, x, t):
    """Lognormal lifetime density at time ``t``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("t must be positive")
    z, _, sigma = _standardized(theta, x, np.log(t))
    value = std_normal_pdf(z) / (sigma * t)
    return float(value) if np.ndim(value) == 0 else value


def hazard(theta, x, t):
    """Lognormal hazard ``f(t) / R(t)``."""
    rel = reliability(theta, x, t)
    if np.any(np.asarray(rel) == 0.0):
        raise DomainError("reliability underflows to zero; hazard undefined")
    value = lifetime_pdf(theta, x, t) / rel
    return float(value) if np.ndim(value) == 0 else value


def delta_vector(theta, x, W):
    """Derivatives of ``F`` with respect to ``mu``-links and ``log sigma``-links.

    Returns ``(-phi(z)/sigma, -z*phi(z))`` with ``z = (W - mu)/sigma``: the
    exact chain-rule factors, so that ``dF/da_j = d[0]*x_j`` and
    ``dF/db_j = d[1]*x_j``. For a matrix ``x`` the result has shape ``(I, 2)``.
    """
    z, _, sigma = _standardized(theta, x, W)
    dens = std_normal_pdf(z)
    out = np.stack([-dens / sigma, -z * dens], axis=-1)
    return out


def full_gradient_F(theta, x, W) -> np.ndarray:
    """Gradient of ``F(W; x, theta)`` with respect to ``theta``.

    Layout: entries ``0..J`` are ``d[0]*x``, entries ``J+1..2J+1`` are ``d[1]*x``.
    Works row-wise when ``x`` is an ``(I, J+1)`` matrix.
    """
    d = delta_vector(theta, x, W)
    x = np.asarray(x, dtype=float)
    return np.concatenate([d[..., :1] * x, d[..., 1:] * x], axis=-1)


def mean_lifetime_gradient(theta, x) -> np.ndarray:
    """Gradient of ``E(x, theta)``: ``E * (x, sigma^2 x)``."""
    _, sigma = link(theta, x)
    value = mean_lifetime(theta, x)
    x = np.asarray(x, dtype=float)
    return value * np.concatenate([x, sigma**2 * x])


def _cell_z(theta, data: Dataset):
    half = data.X.shape[1]
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (2 * half,):
        raise DomainError(f"theta must have length {2 * half}, got shape {theta.shape}")
    mu = data.X @ theta[:half]
    eta = data.X @ theta[half:]
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        sigma = np.exp(eta)
        z = (data.W - mu) / sigma
    if not np.all(np.isfinite(z)) or np.any(sigma <= 0.0):
        bad = ~np.isfinite(z) | (sigma <= 0.0)
        where = int(np.flatnonzero(bad)[0])
        raise DomainError(f"link overflow/underflow at group {where} (b.x = {eta[where]:.4g})")
    return z, sigma


def cell_probabilities(theta, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """``(F_i, R_i)`` at every test condition."""
    z, _ = _cell_z(theta, data)
    return _cdf(z), _sf(z)


def cell_gradients(theta, data: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(F, R, G)`` where row ``i`` of ``G`` is ``dF_i/dtheta``."""
    z, sigma = _cell_z(theta, data)
    dens = _pdf(z)
    G = np.concatenate([(-dens / sigma)[:, None] * data.X, (-z * dens)[:, None] * data.X], axis=1)
    return _cdf(z), _sf(z), G


# --------------------------------------------------------------------------
# CSV I/O
# --------------------------------------------------------------------------

def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetFormatError(f"cannot parse {text!r} as a number", row, column) from None
    if not math.isfinite(value):
        raise DatasetFormatError("value must be finite", row, column)
    return value


def _parse_count(text: str, row: int, column: str) -> int:
    value = _parse_float(text, row, column)
    if value != int(value):
        raise DatasetFormatError(f"{text!r} is not an integer", row, column)
    return int(value)


def parse_csv(text: str) -> Dataset:
    """Parse the ``tau,K,n,x1,...,xJ`` CSV layout. The intercept is implicit."""
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DatasetFormatError("empty file: no data rows")
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["tau", "K", "n"]:
        raise DatasetFormatError(f"header must start with tau,K,n, got {','.join(header)}", row=1)
    stress_cols = header[3:]
    expected = [f"x{j}" for j in range(1, len(stress_cols) + 1)]
    if stress_cols != expected:
        raise DatasetFormatError(f"stress columns must be named {','.join(expected) or 'x1,...'}", row=1)
    if len(rows) == 1:
        raise DatasetFormatError("no data rows")
    groups = []
    for lineno, raw in enumerate(rows[1:], start=2):
        if len(raw) != len(header):
            raise DatasetFormatError(f"expected {len(header)} fields, found {len(raw)}", row=lineno)
        cells = [c.strip() for c in raw]
        tau = _parse_float(cells[0], lineno, "tau")
        if tau <= 0:
            raise DatasetFormatError("tau must be positive", lineno, "tau")
        K = _parse_count(cells[1], lineno, "K")
        if K < 1:
            raise DatasetFormatError("K must be at least 1", lineno, "K")
        n = _parse_count(cells[2], lineno, "n")
        if not 0 <= n <= K:
            raise DatasetFormatError("n must lie in [0, K]", lineno, "n")
        x = [1.0] + [_parse_float(c, lineno, name) for c, name in zip(cells[3:], stress_cols)]
        groups.append(TestGroup(tau=tau, K=K, n=n, x=tuple(x)))
    return Dataset.from_groups(groups)


def read_csv(path) -> Dataset:
    return parse_csv(Path(path).read_text(encoding="utf-8"))


def format_csv(data: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["tau", "K", "n"] + [f"x{j}" for j in range(1, data.J + 1)])
    for t, k, m, row in zip(data.tau, data.K, data.n, data.X):
        writer.writerow([repr(float(t)), int(k), int(round(m))] + [repr(float(v)) for v in row[1:]])
    return buf.getvalue()


def write_csv(data: Dataset, path) -> None:
    Path(path).write_text(format_csv(data), encoding="utf-8")
