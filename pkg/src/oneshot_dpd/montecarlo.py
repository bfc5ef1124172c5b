"""Monte Carlo studies: data generation, SMAE, interval coverage, test level/power, tuning.

Every replication ``r`` draws from its own generator ``default_rng([seed, r])``
and the same dataset is reused for every ``beta``, so comparisons across
tuning parameters are paired. Results are aggregated in replication order,
so the output does not depend on the number of worker processes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .estimation import FitConfig, MeanLifetime, NonIdentifiableError, Reliability, delta_method_se, fit
from .inference import (
    WaldSpec,
    ci_arsech_reliability,
    ci_asymptotic,
    ci_log_mean,
    ci_logit_reliability,
    wald_type_test,
)
from .model import Dataset, cell_probabilities, mean_lifetime, reliability
from .numerics import DomainError

__all__ = [
    "Design",
    "Contamination",
    "Scenario",
    "SCENARIOS",
    "scenario_design",
    "default_contamination",
    "generate",
    "smae",
    "SimReport",
    "run_estimator_study",
    "TestReport",
    "run_test_study",
    "TuneResult",
    "tune_beta",
    "paired_difference",
    "replication_rng",
    "resolve_workers",
    "PURE",
    "DEFAULT_BETAS",
]

DEFAULT_BETAS = (0.0, 0.2, 0.4, 0.6)
PARAM_NAMES = ("a0", "a1", "b0", "b1")
MAX_FAILURE_RATE = 0.02
TIE_TOL = 1e-9  # MaxAE differences below this are fitting roundoff


@dataclass(frozen=True)
class Design:
    """Full factorial test plan: every stress level is inspected at every time.

    ``stress_levels`` hold covariate vectors including the intercept. Cells
    are ordered stress-major: cell ``s * len(inspection_times) + t``.
    """

    stress_levels: tuple
    inspection_times: tuple
    K_per_cell: int
    theta0: tuple

    def __post_init__(self):
        levels = tuple(tuple(float(v) for v in x) for x in self.stress_levels)
        if not levels or any(x[0] != 1.0 for x in levels) or len({len(x) for x in levels}) != 1:
            raise DomainError("stress levels must share a length and start with the intercept 1")
        times = tuple(float(t) for t in self.inspection_times)
        if not times or any(not t > 0 for t in times):
            raise DomainError("inspection times must be positive")
        if int(self.K_per_cell) != self.K_per_cell or self.K_per_cell < 1:
            raise DomainError("K_per_cell must be a positive integer")
        theta0 = tuple(float(v) for v in self.theta0)
        if len(theta0) != 2 * len(levels[0]):
            raise DomainError("theta0 length does not match the covariates")
        object.__setattr__(self, "stress_levels", levels)
        object.__setattr__(self, "inspection_times", times)
        object.__setattr__(self, "K_per_cell", int(self.K_per_cell))
        object.__setattr__(self, "theta0", theta0)

    @property
    def n_cells(self) -> int:
        return len(self.stress_levels) * len(self.inspection_times)

    def layout(self):
        X = np.array([x for x in self.stress_levels for _ in self.inspection_times])
        tau = np.array([t for _ in self.stress_levels for t in self.inspection_times])
        K = np.full(self.n_cells, float(self.K_per_cell))
        return tau, K, X

    def dataset(self, n) -> Dataset:
        tau, K, X = self.layout()
        return Dataset(tau=tau, K=K, n=n, X=X)

    def probabilities(self, theta) -> np.ndarray:
        tau, K, X = self.layout()
        F, _ = cell_probabilities(np.asarray(theta, float), Dataset(tau=tau, K=K, n=np.zeros_like(K), X=X))
        return F


@dataclass(frozen=True)
class Contamination:
    """Cells whose counts are drawn from ``theta_tilde`` instead of ``theta0``."""

    cells: frozenset = frozenset()
    theta_tilde: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "cells", frozenset(int(c) for c in self.cells))
        if self.cells and self.theta_tilde is None:
            raise DomainError("contaminated cells need theta_tilde")
        if self.theta_tilde is not None:
            object.__setattr__(self, "theta_tilde", tuple(float(v) for v in self.theta_tilde))

    @property
    def active(self) -> bool:
        return bool(self.cells)


PURE = Contamination()


@dataclass(frozen=True)
class Scenario:
    name: str
    a0: float
    inspection_times: tuple
    R_true: float
    E_true: float


STRESS = (30.0, 40.0, 50.0)
SLOPES = (-0.1, -0.6, 0.02)  # a1, b0, b1
X0 = (1.0, 15.0)
T0 = 60.0

SCENARIOS = {
    "low": Scenario("low", 5.8, (5.0, 10.0, 15.0, 20.0), 0.6093, 96.9704),
    "moderate": Scenario("moderate", 6.0, (8.0, 16.0, 24.0, 36.0), 0.7080, 118.4399),
    "high": Scenario("high", 6.2, (12.0, 24.0, 36.0, 48.0), 0.7932, 144.6628),
}


def preset_theta(a0: float) -> tuple:
    return (float(a0),) + SLOPES


def scenario_design(name: str, K_per_cell: int, a0: float | None = None) -> Design:
    try:
        sc = SCENARIOS[name]
    except KeyError:
        raise DomainError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return Design(
        stress_levels=tuple((1.0, s) for s in STRESS),
        inspection_times=sc.inspection_times,
        K_per_cell=K_per_cell,
        theta0=preset_theta(sc.a0 if a0 is None else a0),
    )


def default_contamination(design: Design, a0: float | None = None, b0: float | None = 0.0, cells=(0,)) -> Contamination:
    """Perturb the intercepts ``a0``/``b0`` in the given cells (default: first stress, first time)."""
    theta = list(design.theta0)
    half = len(theta) // 2
    if a0 is not None:
        theta[0] = float(a0)
    if b0 is not None:
        theta[half] = float(b0)
    cells = frozenset(cells)
    if any(not 0 <= c < design.n_cells for c in cells):
        raise DomainError(f"contaminated cells must be in 0..{design.n_cells - 1}")
    return Contamination(cells, tuple(theta))


def generate(design: Design, contamination: Contamination, rng: np.random.Generator) -> Dataset:
    """Binomial failure counts for every cell of the design."""
    F = design.probabilities(design.theta0)
    if contamination.active:
        bad = [c for c in contamination.cells if not 0 <= c < design.n_cells]
        if bad:
            raise DomainError(f"contaminated cell {bad[0]} outside 0..{design.n_cells - 1}")
        F_tilde = design.probabilities(contamination.theta_tilde)
        idx = sorted(contamination.cells)
        F[idx] = F_tilde[idx]
    n = rng.binomial(design.K_per_cell, F)
    return design.dataset(n.astype(float))


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(rep)])


def smae(estimates, true_value) -> float:
    """Standardized mean absolute error ``mean |(est - true)/true|``.

    For vector estimates (shape ``(S, p)``) the result is the mean of the ``p``
    componentwise SMAEs.
    """
    truth = np.asarray(true_value, dtype=float)
    est = np.asarray(estimates, dtype=float)
    if np.any(truth == 0.0):
        raise DomainError("SMAE needs nonzero true values")
    if est.size == 0:
        return math.nan
    if truth.ndim == 0:
        return float(np.mean(np.abs((est - truth) / truth)))
    est = est.reshape(-1, truth.size)
    return float(np.mean(np.abs((est - truth) / truth)))


def paired_difference(errors_a, errors_b):
    """Mean and standard error of ``errors_b - errors_a`` over paired replications."""
    d = np.asarray(errors_b, float) - np.asarray(errors_a, float)
    if d.size < 2:
        return float(np.mean(d)) if d.size else math.nan, math.nan
    return float(np.mean(d)), float(np.std(d, ddof=1) / math.sqrt(d.size))


# --------------------------------------------------------------------------
# Estimator study
# --------------------------------------------------------------------------

@dataclass
class SimReport:
    scenario: str
    S: int
    seed: int
    K_per_cell: int
    betas: tuple
    contaminated: bool
    truth: dict
    per_beta: dict
    degraded: bool = False
    # per-replication relative errors of theta (mean over components); NaN for failures
    theta_errors: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "S": self.S,
            "seed": self.seed,
            "K_per_cell": self.K_per_cell,
            "betas": list(self.betas),
            "contaminated": self.contaminated,
            "truth": self.truth,
            "per_beta": {repr(float(b)): v for b, v in self.per_beta.items()},
            "degraded": self.degraded,
        }

    def rows(self):
        """Plot-ready ``(beta, metric, value)`` rows."""
        out = []
        for beta, block in self.per_beta.items():
            for group in ("smae", "cp", "aw"):
                for key, value in block[group].items():
                    out.append((float(beta), f"{group}_{key}", value))
            out.append((float(beta), "failures", block["failures"]))
        return out


def _fit_one(data: Dataset, beta: float, n_starts: int, seed: int):
    try:
        res = fit(data, FitConfig(beta=beta, n_starts=n_starts, seed=seed))
    except (NonIdentifiableError, DomainError):
        return None
    if not res.converged or not np.all(np.isfinite(res.covariance)):
        return None
    return res


def _estimator_replicate(args):
    design, contamination, betas, seed, rep, n_starts, alpha, x0, t0 = args
    data = generate(design, contamination, replication_rng(seed, rep))
    out = []
    r_target = Reliability(x0, t0)
    e_target = MeanLifetime(x0)
    for beta in betas:
        res = _fit_one(data, beta, n_starts, seed)
        if res is None:
            out.append(None)
            continue
        th = res.theta_hat
        x = np.asarray(x0, float)
        try:
            R_hat = float(reliability(th, x, t0))
            E_hat = float(mean_lifetime(th, x))
            se_R = delta_method_se(res, r_target)
            se_E = delta_method_se(res, e_target)
            cis = {
                "R_asy": ci_asymptotic(R_hat, se_R, alpha),
                "R_logit": ci_logit_reliability(R_hat, se_R, alpha),
                "R_arsech": ci_arsech_reliability(R_hat, se_R, alpha),
                "E_asy": ci_asymptotic(E_hat, se_E, alpha),
                "E_log": ci_log_mean(E_hat, se_E, alpha),
            }
        except DomainError:
            out.append(None)
            continue
        out.append({"theta": th, "R": R_hat, "E": E_hat,
                    "ci": {k: (c.lower, c.upper) for k, c in cis.items()}})
    return out


def _run(func, jobs, workers):
    if workers is None or workers <= 1 or len(jobs) < 2:
        return [func(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def resolve_workers(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("ONESHOT_DPD_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def run_estimator_study(
    design: Design,
    betas=DEFAULT_BETAS,
    S: int = 100,
    seed: int = 0,
    contamination: Contamination = PURE,
    alpha: float = 0.10,
    x0=X0,
    t0: float = T0,
    n_starts: int = 5,
    workers: int | None = 1,
    scenario: str = "custom",
) -> SimReport:
    """Fit every replication at every ``beta`` and aggregate SMAE and CP/AW.

    Intervals are at level ``1 - alpha`` (90% by default) for ``R(t0; x0)``
    (asymptotic, logit, arsech) and ``E(x0)`` (asymptotic, log). Failed fits
    are excluded and counted; a failure rate above 2% marks the report degraded.
    """
    betas = tuple(float(b) for b in betas)
    theta0 = np.asarray(design.theta0)
    x = np.asarray(x0, float)
    truth = {
        "theta": [float(v) for v in theta0],
        "R": float(reliability(theta0, x, t0)),
        "E": float(mean_lifetime(theta0, x)),
        "x0": [float(v) for v in x],
        "t0": float(t0),
    }
    jobs = [(design, contamination, betas, seed, r, n_starts, alpha, tuple(x), float(t0)) for r in range(S)]
    results = _run(_estimator_replicate, jobs, workers)

    per_beta = {}
    theta_errors = {}
    degraded = False
    for k, beta in enumerate(betas):
        ok = [rep[k] for rep in results if rep[k] is not None]
        failures = S - len(ok)
        errs = np.array([np.mean(np.abs((rep[k]["theta"] - theta0) / theta0)) if rep[k] is not None else np.nan
                         for rep in results])
        theta_errors[beta] = errs
        block = {"n_used": len(ok), "failures": failures}
        if ok:
            thetas = np.array([o["theta"] for o in ok])
            sm = {name: smae(thetas[:, j], theta0[j]) for j, name in enumerate(PARAM_NAMES[: theta0.size])}
            if theta0.size != 4:
                sm = {f"theta{j}": smae(thetas[:, j], theta0[j]) for j in range(theta0.size)}
            sm["theta"] = smae(thetas, theta0)
            sm["R"] = smae([o["R"] for o in ok], truth["R"])
            sm["E"] = smae([o["E"] for o in ok], truth["E"])
            cp, aw = {}, {}
            for key in ok[0]["ci"]:
                target = truth["R"] if key.startswith("R") else truth["E"]
                bounds = np.array([o["ci"][key] for o in ok])
                cp[key] = float(np.mean((bounds[:, 0] <= target) & (target <= bounds[:, 1])))
                aw[key] = float(np.mean(bounds[:, 1] - bounds[:, 0]))
            block.update(smae=sm, cp=cp, aw=aw)
        else:
            block.update(smae={}, cp={}, aw={})
        if S > 0 and failures > MAX_FAILURE_RATE * S:
            degraded = True
        per_beta[beta] = block
    return SimReport(
        scenario=scenario,
        S=S,
        seed=seed,
        K_per_cell=design.K_per_cell,
        betas=betas,
        contaminated=contamination.active,
        truth=truth,
        per_beta=per_beta,
        degraded=degraded,
        theta_errors=theta_errors,
    )


# --------------------------------------------------------------------------
# Test study
# --------------------------------------------------------------------------

@dataclass
class TestReport:
    __test__ = False

    scenario: str
    S: int
    seed: int
    alpha: float
    null_a0: float
    rows: list
    degraded: bool = False

    def rate(self, kind: str, data: str, K: int, beta: float) -> float:
        for row in self.rows:
            if (row["kind"], row["data"], row["K"], row["beta"]) == (kind, data, K, float(beta)):
                return row["rate"]
        raise KeyError((kind, data, K, beta))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "S": self.S,
            "seed": self.seed,
            "alpha": self.alpha,
            "null_a0": self.null_a0,
            "rows": self.rows,
            "degraded": self.degraded,
        }


def _test_replicate(args):
    design, contamination, betas, seed, rep, n_starts, spec, alpha = args
    data = generate(design, contamination, replication_rng(seed, rep))
    out = []
    for beta in betas:
        res = _fit_one(data, beta, n_starts, seed)
        if res is None:
            out.append(None)
            continue
        try:
            out.append(wald_type_test(res, spec, levels=(alpha,)).reject_at[alpha])
        except DomainError:
            out.append(None)
    return out


def run_test_study(
    scenario: str = "moderate",
    betas=DEFAULT_BETAS,
    S: int = 100,
    seed: int = 0,
    K_values=(100,),
    null_a0: float = 6.0,
    alt_a0: float = 5.0,
    contaminated_a0: float | None = 5.6,
    alpha: float = 0.05,
    n_starts: int = 5,
    workers: int | None = 1,
    kinds=("level", "power"),
) -> TestReport:
    """Empirical level and power of Wald-type tests of ``a0 = null_a0``.

    Level data are generated at ``a0 = null_a0`` and power data at
    ``a0 = alt_a0``. With ``contaminated_a0`` set, a second pass generates the
    contaminated version where the default cell is drawn with that ``a0``.
    """
    betas = tuple(float(b) for b in betas)
    rows = []
    degraded = False
    if S <= 0:
        return TestReport(scenario, 0, seed, alpha, null_a0, rows)
    base = scenario_design(scenario, 1)
    A = np.zeros((1, len(base.theta0)))
    A[0, 0] = 1.0
    spec = WaldSpec(A, [null_a0])
    data_kinds = [("pure", None)]
    if contaminated_a0 is not None:
        data_kinds.append(("contaminated", contaminated_a0))
    for K in K_values:
        for kind in kinds:
            a0 = null_a0 if kind == "level" else alt_a0
            design = scenario_design(scenario, int(K), a0=a0)
            for label, ca0 in data_kinds:
                cont = PURE if ca0 is None else default_contamination(design, a0=ca0, b0=None)
                jobs = [(design, cont, betas, seed, r, n_starts, spec, alpha) for r in range(S)]
                results = _run(_test_replicate, jobs, workers)
                for k, beta in enumerate(betas):
                    flags = [rep[k] for rep in results if rep[k] is not None]
                    failures = S - len(flags)
                    if failures > MAX_FAILURE_RATE * S:
                        degraded = True
                    rows.append({
                        "kind": kind,
                        "data": label,
                        "K": int(K),
                        "beta": beta,
                        "rate": float(np.mean(flags)) if flags else math.nan,
                        "n_used": len(flags),
                        "failures": failures,
                    })
    return TestReport(scenario, S, seed, alpha, null_a0, rows, degraded)


# --------------------------------------------------------------------------
# Tuning-parameter selection
# --------------------------------------------------------------------------

@dataclass
class TuneResult:
    beta_star: float
    max_ae: dict
    rmse: dict
    failed: tuple = ()

    def to_dict(self) -> dict:
        return {
            "beta_star": self.beta_star,
            "max_ae": {repr(b): v for b, v in self.max_ae.items()},
            "rmse": {repr(b): v for b, v in self.rmse.items()},
            "failed": list(self.failed),
        }


def tune_beta(data: Dataset, beta_grid, config: FitConfig | None = None) -> TuneResult:
    """Pick ``beta`` minimizing the largest gap between fitted and empirical failure rates.

    ``MaxAE = max_i |F_i - n_i/K_i|`` and ``RMSE = sqrt(mean_i (F_i - n_i/K_i)^2)``.
    Duplicate grid values are dropped; ties (within ``TIE_TOL``, which absorbs
    fitting roundoff) go to the smallest ``beta``.
    """
    grid = sorted({float(b) for b in beta_grid})
    if not grid:
        raise DomainError("beta grid is empty")
    config = config or FitConfig()
    max_ae, rmse, failed = {}, {}, []
    for beta in grid:
        try:
            res = fit(data, replace(config, beta=beta))
        except (NonIdentifiableError, DomainError):
            failed.append(beta)
            continue
        if not res.converged:
            failed.append(beta)
            continue
        F, _ = cell_probabilities(res.theta_hat, data)
        gap = np.abs(F - data.p_hat)
        max_ae[beta] = float(np.max(gap))
        rmse[beta] = float(np.sqrt(np.mean(gap**2)))
    if not max_ae:
        raise DomainError("every fit in the beta grid failed")
    best = min(max_ae.values())
    beta_star = min(b for b, v in max_ae.items() if v <= best + TIE_TOL)
    return TuneResult(beta_star, max_ae, rmse, tuple(failed))
