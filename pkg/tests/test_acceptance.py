"""Acceptance criteria, one test per criterion (criterion 7 is split into its parts).

Each test logs a ``criterion N: PASS|FAIL|SKIP | detail`` line that is echoed
in the terminal summary. Tolerances are fixed here and must not be loosened.
"""

import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import optimize

from oneshot_dpd.estimation import FitConfig, MeanLifetime, Reliability, delta_method_se, fit
from oneshot_dpd.estimation import j_beta_matrix, k_beta_matrix, sigma_beta
from oneshot_dpd.inference import ci_arsech_reliability, ci_asymptotic, ci_log_mean, ci_logit_reliability
from oneshot_dpd.inference import observed_fisher_information
from oneshot_dpd.model import Dataset, failure_probability, full_gradient_F, link, mean_lifetime, read_csv, reliability
from oneshot_dpd.montecarlo import (
    PURE,
    default_contamination,
    generate,
    paired_difference,
    replication_rng,
    run_estimator_study,
    run_test_study,
    scenario_design,
    tune_beta,
)
from oneshot_dpd.numerics import invert_spd
from oneshot_dpd.objectives import dpd_gradient, dpd_objective, neg_log_likelihood
from oneshot_dpd.robustness import h_factors

DATA_DIR = Path(__file__).resolve().parents[1] / "data"
BETA_GRID = (0.0, 0.2, 0.4, 0.6)

# published beta = 0 estimates for the two field datasets
ELECTRO_B0 = (4.78801, -0.04305, 0.80430, -0.01833)
CURRENT_B0 = (6.91992, -0.03979, -0.03734, -1.84593, 0.01003, 0.01354)

# published estimate columns at beta = 0, 0.2, 0.4, 0.6
ELECTRO_FITS = {
    0.0: (4.78801, -0.04305, 0.80430, -0.01833),
    0.2: (4.78801, -0.04308, 0.8043, -0.01833),
    0.4: (4.78858, -0.04325, 0.60442, -0.01420),
    0.6: (4.78693, -0.04329, 0.50556, -0.0122),
}
CURRENT_FITS = {
    0.0: (6.91992, -0.03979, -0.03734, -1.84593, 0.01003, 0.01354),
    0.2: (7.04428, -0.04062, -0.03820, -1.71032, 0.00914, 0.01314),
    0.4: (7.15098, -0.04131, -0.03895, -1.61714, 0.00854, 0.01288),
    0.6: (7.24832, -0.04193, -0.03963, -1.54946, 0.00811, 0.01270),
}


def _elapsed(start):
    return f"{time.perf_counter() - start:.1f}s"


# ---------------------------------------------------------------------------
# 1. closed-form targets
# ---------------------------------------------------------------------------

def test_criterion_1_closed_form_targets(record):
    start = time.perf_counter()
    cases = [(5.8, 0.6093, 96.9704), (6.0, 0.7080, 118.4399), (6.2, 0.7932, 144.6628)]
    worst = 0.0
    for a0, R_true, E_true in cases:
        theta = np.array([a0, -0.1, -0.6, 0.02])
        worst = max(worst, abs(reliability(theta, [1.0, 15.0], 60.0) - R_true),
                    abs(mean_lifetime(theta, [1.0, 15.0]) - E_true))
    ok = worst <= 1e-3
    record(1, ok, f"max abs error {worst:.2e} (tol 1e-3), {_elapsed(start)}")
    assert ok


# ---------------------------------------------------------------------------
# 2. consistency of published fitted parameters
# ---------------------------------------------------------------------------

def test_criterion_2_published_estimates(record):
    start = time.perf_counter()
    checks = [
        ("R(25;10)", reliability(np.array(ELECTRO_B0), [1.0, 25.0], 10.0), 0.84059, 1e-3),
        ("E(25)", mean_lifetime(np.array(ELECTRO_B0), [1.0, 25.0]), 111.16472, 1e-3),
        ("R(25,35;60)", reliability(np.array(CURRENT_B0), [1.0, 25.0, 35.0], 60.0), 0.94600, 1e-2),
        ("E(25,35)", mean_lifetime(np.array(CURRENT_B0), [1.0, 25.0, 35.0]), 106.83129, 1e-2),
    ]
    parts, ok = [], True
    for name, got, want, tol in checks:
        good = abs(got - want) <= tol
        ok &= good
        parts.append(f"{name} {got:.5f} vs {want} ({'ok' if good else 'off'}, tol {tol})")
    record(2, ok, "; ".join(parts) + f", {_elapsed(start)}")
    assert ok


def _rounding_box(theta, x):
    # E is monotone in every coordinate for positive x, so the corners bound it
    values = []
    for signs in itertools.product((-1, 1), repeat=len(theta)):
        values.append(mean_lifetime(np.array(theta) + 0.5e-5 * np.array(signs), x))
    return min(values), max(values)


def test_criterion_2_rounding_box_companion(record):
    # the estimates are printed to five decimals; the mean lifetime is very
    # sensitive to that rounding, so check the printed value is reachable
    lo1, hi1 = _rounding_box(ELECTRO_B0, [1.0, 25.0])
    lo2, hi2 = _rounding_box(CURRENT_B0, [1.0, 25.0, 35.0])
    ok = lo1 <= 111.16472 <= hi1 and lo2 <= 106.83129 <= hi2
    record("2 (rounding companion)", ok,
           f"E(25) range [{lo1:.3f}, {hi1:.3f}] holds 111.16472; E(25,35) range [{lo2:.3f}, {hi2:.3f}] holds 106.83129")
    assert ok


# ---------------------------------------------------------------------------
# 3. beta = 0 against an independent likelihood maximizer
# ---------------------------------------------------------------------------

def _mle_oracle(data, start):
    f = lambda t: neg_log_likelihood(t, data)  # noqa: E731
    x = np.asarray(start, float)
    for _ in range(3):
        x = optimize.minimize(f, x, method="Nelder-Mead",
                              options={"xatol": 1e-11, "fatol": 1e-13, "maxiter": 40000, "maxfev": 40000}).x
    return x


def test_criterion_3_beta0_equivalence(record):
    start = time.perf_counter()
    design = scenario_design("moderate", 50)
    worst = 0.0
    for rep in range(50):
        data = generate(design, PURE, replication_rng(303, rep))
        res = fit(data, FitConfig(beta=0.0))
        worst = max(worst, float(np.linalg.norm(res.theta_hat - _mle_oracle(data, res.theta_hat + 0.05))))
    ok = worst < 1e-5
    record(3, ok, f"max parameter distance {worst:.2e} over 50 datasets (tol 1e-5), {_elapsed(start)}")
    assert ok


# ---------------------------------------------------------------------------
# 4. sandwich identities
# ---------------------------------------------------------------------------

def _random_instance(rng):
    J = int(rng.integers(1, 3))
    I = int(rng.integers(2 * J + 3, 12))
    X = np.column_stack([np.ones(I), rng.uniform(0.0, 2.0, (I, J))])
    theta = np.concatenate([rng.uniform(-0.5, 0.5, J + 1), rng.uniform(-0.3, 0.3, J + 1)])
    tau = np.exp(X @ theta[: J + 1] + rng.uniform(-1.5, 1.5, I))
    K = rng.integers(10, 200, I).astype(float)
    return Dataset(tau=tau, K=K, n=np.zeros(I), X=X), theta


def test_criterion_4_sandwich_identities(record):
    start = time.perf_counter()
    rng = np.random.default_rng(404)
    worst_jk, worst_sigma = 0.0, 0.0
    for _ in range(100):
        data, theta = _random_instance(rng)
        J0 = j_beta_matrix(theta, data, 0.0)
        K0 = k_beta_matrix(theta, data, 0.0)
        worst_jk = max(worst_jk, float(np.max(np.abs(J0 - K0))))
        S0 = sigma_beta(theta, data, 0.0)
        V = invert_spd(observed_fisher_information(theta, data)).value * data.total
        worst_sigma = max(worst_sigma, float(np.max(np.abs(S0 - V) / np.maximum(1.0, np.abs(V)))))
    ok = worst_jk <= 1e-10 and worst_sigma <= 1e-8
    record(4, ok, f"max |J0-K0| {worst_jk:.1e} (tol 1e-10), max Sigma0 vs Fisher inverse {worst_sigma:.1e} "
                  f"(tol 1e-8), {_elapsed(start)}")
    assert ok


# ---------------------------------------------------------------------------
# 5. gradients against central differences
# ---------------------------------------------------------------------------

def _central(f, theta, h):
    out = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        out[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


def test_criterion_5_gradient_suite(record):
    start = time.perf_counter()
    rng = np.random.default_rng(505)
    betas = (0.0, 0.2, 0.4, 0.6, 1.0)
    worst_obj, worst_F = 0.0, 0.0
    for draw in range(200):
        beta = betas[draw % len(betas)]
        data, theta = _random_instance(rng)
        F = np.clip(np.floor(rng.uniform(0, 1, data.I) * (data.K + 1)), 0, data.K)
        data = data.with_counts(F)
        g = dpd_gradient(theta, data, beta)
        fd = _central(lambda t: dpd_objective(t, data, beta), theta, 1e-6)
        worst_obj = max(worst_obj, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-3)))
        x = data.X[draw % data.I]
        mu, sigma = link(theta, x)
        W = mu + sigma * rng.uniform(-2.5, 2.5)
        gF = full_gradient_F(theta, x, W)
        fdF = _central(lambda t: failure_probability(t, x, math.exp(W)), theta, 1e-6)
        worst_F = max(worst_F, float(np.max(np.abs(gF - fdF)) / max(np.max(np.abs(fdF)), 1e-3)))
    ok = worst_obj <= 1e-5 and worst_F <= 1e-5
    record(5, ok, f"max relative error objective {worst_obj:.1e}, F {worst_F:.1e} (tol 1e-5), {_elapsed(start)}")
    assert ok


# ---------------------------------------------------------------------------
# 6. Fisher consistency
# ---------------------------------------------------------------------------

def test_criterion_6_fisher_consistency(record):
    start = time.perf_counter()
    worst = 0.0
    for name in ("low", "moderate", "high"):
        design = scenario_design(name, 1)
        tau, _, X = design.layout()
        F = design.probabilities(design.theta0)
        K = np.full(F.size, 1e6)
        data = Dataset(tau=tau, K=K, n=K * F, X=X)
        for beta in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
            res = fit(data, FitConfig(beta=beta))
            err = float(np.max(np.abs(res.theta_hat - np.array(design.theta0))))
            worst = max(worst, err if res.converged else math.inf)
    ok = worst < 1e-4
    record(6, ok, f"max |theta_hat - theta0| {worst:.1e} over 3 presets x 6 betas (tol 1e-4), {_elapsed(start)}")
    assert ok


# ---------------------------------------------------------------------------
# 7. desk-scale estimator study
# ---------------------------------------------------------------------------

STUDY_BETAS = (0.0, 0.2, 0.4, 0.6)


@pytest.fixture(scope="module")
def moderate_studies():
    start = time.perf_counter()
    design = scenario_design("moderate", 100)
    pure = run_estimator_study(design, betas=STUDY_BETAS, S=1000, seed=2024, scenario="moderate")
    cont = run_estimator_study(design, betas=STUDY_BETAS, S=1000, seed=2024, scenario="moderate",
                               contamination=default_contamination(design))
    return pure, cont, _elapsed(start)


def test_criterion_7_absolute_smae(record, moderate_studies):
    pure, _, took = moderate_studies
    value = pure.per_beta[0.0]["smae"]["theta"]
    ok = abs(value - 0.28172) <= 0.15 * 0.28172
    record("7 (absolute)", ok, f"pure K=100 S=1000 beta=0 SMAE(theta) {value:.5f} vs 0.28172 +/-15% "
                               f"[{0.85 * 0.28172:.5f}, {1.15 * 0.28172:.5f}], studies {took}")
    assert ok


def _ordering(report, direction):
    # paired differences on identical datasets; a step violates the ordering
    # when it moves the wrong way by more than two standard errors
    steps, ok = [], True
    for b0, b1 in zip(STUDY_BETAS, STUDY_BETAS[1:]):
        mean, se = paired_difference(report.theta_errors[b0], report.theta_errors[b1])
        good = direction * mean >= -2.0 * se
        ok &= good
        steps.append(f"{b0}->{b1}: {mean:+.4f} (se {se:.4f})")
    smae = ", ".join(f"{b}: {report.per_beta[b]['smae']['theta']:.4f}" for b in STUDY_BETAS)
    return ok, f"SMAE {smae}; steps {'; '.join(steps)}"


def test_criterion_7_pure_ordering(record, moderate_studies):
    pure, _, _ = moderate_studies
    ok, detail = _ordering(pure, +1)
    record("7 (pure nondecreasing)", ok, detail)
    assert ok


def test_criterion_7_contaminated_ordering(record, moderate_studies):
    _, cont, _ = moderate_studies
    ok, detail = _ordering(cont, -1)
    record("7 (contaminated nonincreasing)", ok, "default cell 0, b0~=0; " + detail)
    assert ok


# ---------------------------------------------------------------------------
# 8. Wald-type test calibration and power
# ---------------------------------------------------------------------------

def test_criterion_8_level_and_power(record):
    start = time.perf_counter()
    level = run_test_study("moderate", betas=(0.0, 0.4), S=500, seed=808, K_values=(100,),
                           kinds=("level",), contaminated_a0=None)
    power = run_test_study("moderate", betas=(0.0, 0.4), S=500, seed=809, K_values=(100, 200),
                           kinds=("power",), contaminated_a0=None)
    levels = {b: level.rate("level", "pure", 100, b) for b in (0.0, 0.4)}
    powers = {(K, b): power.rate("power", "pure", K, b) for K in (100, 200) for b in (0.0, 0.4)}
    ok_level = all(0.03 <= v <= 0.08 for v in levels.values())
    ok_power = all(v > 0.9 for v in powers.values())
    detail = (f"level {', '.join(f'beta={b}: {v:.3f}' for b, v in levels.items())} (band [0.03, 0.08]); "
              f"power {', '.join(f'K={K} beta={b}: {v:.3f}' for (K, b), v in powers.items())} (> 0.9), "
              f"{_elapsed(start)}")
    record(8, ok_level and ok_power, detail)
    assert ok_level and ok_power


# ---------------------------------------------------------------------------
# 9. interval properties
# ---------------------------------------------------------------------------

def test_criterion_9_interval_properties(record):
    start = time.perf_counter()
    design = scenario_design("moderate", 100)
    theta0 = np.array(design.theta0)
    x0, t0, alpha = (1.0, 15.0), 60.0, 0.10
    R_true = reliability(theta0, x0, t0)
    hits = {"asy": 0, "logit": 0, "arsech": 0}
    violations, used = 0, 0
    for rep in range(500):
        data = generate(design, PURE, replication_rng(909, rep))
        res = fit(data, FitConfig(beta=0.0))
        if not res.converged:
            continue
        used += 1
        R = reliability(res.theta_hat, x0, t0)
        E = mean_lifetime(res.theta_hat, x0)
        se_R = delta_method_se(res, Reliability(x0, t0))
        se_E = delta_method_se(res, MeanLifetime(x0))
        cis = {"asy": ci_asymptotic(R, se_R, alpha), "logit": ci_logit_reliability(R, se_R, alpha),
               "arsech": ci_arsech_reliability(R, se_R, alpha)}
        for key, ci in cis.items():
            hits[key] += ci.contains(R_true)
        for key in ("logit", "arsech"):
            ci = cis[key]
            violations += not (0.0 <= ci.lower <= ci.upper <= 1.0 and ci.lower > 0.0)
        violations += not (ci_log_mean(E, se_E, alpha).lower > 0.0)
    cp = {k: v / used for k, v in hits.items()}
    ok = cp["logit"] >= cp["asy"] and violations == 0
    record(9, ok, f"coverage asy {cp['asy']:.3f}, logit {cp['logit']:.3f}, arsech {cp['arsech']:.3f} "
                  f"over {used} fits; bound violations {violations}, {_elapsed(start)}")
    assert ok


# ---------------------------------------------------------------------------
# 10. influence boundedness dichotomy
# ---------------------------------------------------------------------------

def test_criterion_10_boundedness_dichotomy(record):
    start = time.perf_counter()
    theta = (1.0, 0.0, 0.0, 0.0)  # mu = 1, sigma = 1, x = 1
    step = 0.01
    widths = (10, 20, 40, 80)
    maxima = {}
    for beta in (0.0, 0.2, 0.4, 0.6):
        row = []
        for L in widths:
            omega = 1.0 + step * np.arange(-round(L / step), round(L / step) + 1)
            h1, _ = h_factors(omega, 1.0, theta, beta)
            row.append(float(np.max(np.abs(h1))))
        maxima[beta] = row
    grows = all(a < b for a, b in zip(maxima[0.0], maxima[0.0][1:]))
    converges = all(abs(b - a) / a < 1e-6 for beta in (0.2, 0.4, 0.6) for a, b in zip(maxima[beta], maxima[beta][1:]))
    ok = grows and converges
    detail = "; ".join(f"beta={b}: " + ", ".join(f"{v:.4f}" for v in maxima[b]) for b in maxima)
    record(10, ok, f"max|h1| for half-widths {widths}: {detail}, {_elapsed(start)}")
    assert ok


# ---------------------------------------------------------------------------
# 11. field datasets (only when the user supplies them)
# ---------------------------------------------------------------------------

def test_criterion_11_field_datasets(record):
    electro = DATA_DIR / "electro_explosive.csv"
    current = DATA_DIR / "electric_current.csv"
    if not (electro.exists() and current.exists()):
        record(11, None, f"skipped: place {electro.name} and {current.name} in data/ (see data/README.md)")
        pytest.skip("field datasets not supplied")
    start = time.perf_counter()
    worst = 0.0
    for path, table in ((electro, ELECTRO_FITS), (current, CURRENT_FITS)):
        data = read_csv(path)
        for beta, published in table.items():
            res = fit(data, FitConfig(beta=beta))
            worst = max(worst, float(np.max(np.abs(res.theta_hat - np.array(published)))))
    tuned = tune_beta(read_csv(current), BETA_GRID)
    maxae = [tuned.max_ae[b] for b in BETA_GRID]
    decreasing = all(b <= a for a, b in zip(maxae, maxae[1:]))
    ok = worst <= 1e-3 and decreasing
    record(11, ok, f"max estimate error {worst:.1e} (tol 1e-3); MaxAE {', '.join(f'{v:.4f}' for v in maxae)}, "
                   f"{_elapsed(start)}")
    assert ok
