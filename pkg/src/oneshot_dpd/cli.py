"""Command-line interface: ``oneshot-dpd {fit,report,test,simulate,influence,tune}``.

Exit codes: 0 success, 1 input or usage error, 2 non-converged fit or a
degraded simulation.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .estimation import FitConfig, MeanLifetime, NonIdentifiableError, Reliability, delta_method_se, fit
from .inference import (
    WaldSpec,
    ci_arsech_reliability,
    ci_asymptotic,
    ci_log_mean,
    ci_logit_reliability,
    stress_factor_test,
    wald_type_test,
)
from .model import DatasetFormatError, mean_lifetime, read_csv, reliability
from .montecarlo import (
    DEFAULT_BETAS,
    PURE,
    Contamination,
    Design,
    default_contamination,
    resolve_workers,
    run_estimator_study,
    run_test_study,
    scenario_design,
    tune_beta,
)
from .numerics import DomainError
from .robustness import FIG_BETAS, PRESETS, omega_curve, preset_curve, stress_curve

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NONCONVERGED = 2


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def _clean(obj):
    # floats go out through repr (shortest round-trip form); non-finite -> null
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(command: str, inputs, config: dict, seed, started: float) -> dict:
    return {
        "command": command,
        "inputs": [{"path": str(p), "sha256": _sha256(Path(p))} for p in inputs],
        "config": config,
        "seed": seed,
        "version": __version__,
        "wall_time_s": time.perf_counter() - started,
    }


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# Argument helpers
# --------------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _alpha(value: float) -> float:
    if not (0.0 < value < 1.0):
        raise UsageError(f"alpha must lie in (0, 1), got {value}")
    return value


def _fit_config(args) -> FitConfig:
    try:
        return FitConfig(beta=args.beta, max_iter=args.max_iter, grad_tol=args.grad_tol,
                         n_starts=args.n_starts, seed=args.seed)
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _fit_payload(res) -> dict:
    return {
        "theta_hat": res.theta_hat,
        "se": res.se,
        "beta": res.beta,
        "objective": res.objective,
        "grad_norm": res.grad_norm,
        "covariance": res.covariance,
        "converged": res.converged,
        "near_singular": res.near_singular,
        "clamped": res.clamped,
        "iterations": res.iterations,
        "total_devices": res.total_devices,
    }


def _config_echo(cfg: FitConfig) -> dict:
    return {"beta": cfg.beta, "max_iter": cfg.max_iter, "grad_tol": cfg.grad_tol,
            "n_starts": cfg.n_starts, "seed": cfg.seed}


def _param_names(J: int) -> list[str]:
    return [f"a{j}" for j in range(J + 1)] + [f"b{j}" for j in range(J + 1)]


def _ci_dict(ci) -> dict:
    return {"lower": ci.lower, "upper": ci.upper, "level": ci.level, "method": ci.method,
            "degenerate": ci.degenerate}


def _wald_dict(w) -> dict:
    return {"statistic": w.statistic, "dof": w.dof, "p_value": w.p_value,
            "reject_at": {repr(k): v for k, v in w.reject_at.items()}}


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_fit(args) -> int:
    started = time.perf_counter()
    data = read_csv(args.csv)
    cfg = _fit_config(args)
    res = fit(data, cfg)
    payload = {
        "manifest": _manifest("fit", [args.csv], _config_echo(cfg), cfg.seed, started),
        "parameters": _param_names(data.J),
        "fit": _fit_payload(res),
    }
    _emit(dumps(payload), args.output)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_report(args) -> int:
    started = time.perf_counter()
    alpha = _alpha(args.alpha)
    data = read_csv(args.csv)
    x0 = np.concatenate([[1.0], _floats(args.x0)])
    if x0.size != data.J + 1:
        raise UsageError(f"--x0 needs {data.J} stress value(s), got {x0.size - 1}")
    if not args.t0 > 0:
        raise UsageError("--t0 must be positive")
    cfg = _fit_config(args)
    res = fit(data, cfg)
    names = _param_names(data.J)
    coef = {name: {"estimate": res.theta_hat[k], "se": res.se[k],
                   "ci": _ci_dict(ci_asymptotic(res.theta_hat[k], res.se[k], alpha))}
            for k, name in enumerate(names)}
    R_hat = float(reliability(res.theta_hat, x0, args.t0))
    E_hat = float(mean_lifetime(res.theta_hat, x0))
    se_R = delta_method_se(res, Reliability(tuple(x0), args.t0))
    se_E = delta_method_se(res, MeanLifetime(tuple(x0)))
    tests = {}
    for j in range(1, data.J + 1):
        try:
            tests[f"factor{j}"] = _wald_dict(stress_factor_test(res, j))
        except DomainError as exc:
            tests[f"factor{j}"] = {"error": str(exc)}
    config = {**_config_echo(cfg), "x0": x0, "t0": args.t0, "alpha": alpha}
    payload = {
        "manifest": _manifest("report", [args.csv], config, cfg.seed, started),
        "fit": _fit_payload(res),
        "coefficients": coef,
        "reliability": {
            "estimate": R_hat,
            "se": se_R,
            "ci": _ci_dict(ci_logit_reliability(R_hat, se_R, alpha)),
            "ci_asy": _ci_dict(ci_asymptotic(R_hat, se_R, alpha)),
            "ci_arsech": _ci_dict(ci_arsech_reliability(R_hat, se_R, alpha)),
        },
        "mean_lifetime": {
            "estimate": E_hat,
            "se": se_E,
            "ci": _ci_dict(ci_log_mean(E_hat, se_E, alpha)),
            "ci_asy": _ci_dict(ci_asymptotic(E_hat, se_E, alpha)),
        },
        "stress_factor_tests": tests,
    }
    _emit(dumps(payload), args.output)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_test(args) -> int:
    started = time.perf_counter()
    data = read_csv(args.csv)
    cfg = _fit_config(args)
    res = fit(data, cfg)
    if args.factor is not None:
        if args.A is not None:
            raise UsageError("use either --factor or --A/--c, not both")
        result = stress_factor_test(res, args.factor)
        hypothesis = {"factor": args.factor}
    else:
        if args.A is None or args.c is None:
            raise UsageError("give --factor j or both --A and --c")
        try:
            A = json.loads(args.A)
            c = json.loads(args.c)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--A/--c must be JSON arrays: {exc}") from None
        spec = WaldSpec(A, c)
        result = wald_type_test(res, spec)
        hypothesis = {"A": spec.A, "c": spec.c}
    payload = {
        "manifest": _manifest("test", [args.csv], {**_config_echo(cfg), **hypothesis}, cfg.seed, started),
        "fit": _fit_payload(res),
        "test": _wald_dict(result),
    }
    _emit(dumps(payload), args.output)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _get(section, key, cast, default):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    try:
        return cast(raw)
    except ValueError:
        raise UsageError(f"bad value for {key!r}: {raw!r}") from None


def _float_list(text: str) -> tuple:
    return tuple(_floats(text))


def _int_list(text: str) -> tuple:
    return tuple(int(float(v)) for v in _floats(text))


SIM_KEYS = {"scenario", "study", "s", "k_per_cell", "betas", "seed", "n_starts", "alpha", "t0", "x0"}


def _load_sim_config(path: str) -> dict:
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config: {exc}") from None
    if "simulation" not in parser:
        raise UsageError("config needs a [simulation] section")
    sim = parser["simulation"]
    unknown = set(sim) - SIM_KEYS
    if unknown:
        raise UsageError(f"unknown key(s) in [simulation]: {sorted(unknown)}")
    cfg = {
        "scenario": sim.get("scenario", "moderate").strip(),
        "study": sim.get("study", "estimator").strip(),
        "S": _get(sim, "S", int, 100),
        "K_per_cell": _get(sim, "K_per_cell", int, 100),
        "betas": _get(sim, "betas", _float_list, DEFAULT_BETAS),
        "seed": _get(sim, "seed", int, 0),
        "n_starts": _get(sim, "n_starts", int, 5),
        "alpha": _get(sim, "alpha", float, None),
        "t0": _get(sim, "t0", float, 60.0),
        "x0": _get(sim, "x0", _float_list, (15.0,)),
    }
    if cfg["study"] not in ("estimator", "test"):
        raise UsageError(f"unknown study {cfg['study']!r}; use estimator or test")
    if cfg["S"] < 0:
        raise UsageError("S must be nonnegative")
    custom = parser["custom"] if "custom" in parser else None
    if cfg["scenario"] == "custom":
        if custom is None:
            raise UsageError("scenario=custom needs a [custom] section")
        cfg["custom"] = {
            "stress": [list(_floats(row)) for row in custom.get("stress", "").split("|") if row.strip()],
            "times": list(_get(custom, "times", _float_list, ())),
            "theta0": list(_get(custom, "theta0", _float_list, ())),
        }
    elif cfg["scenario"] not in ("low", "moderate", "high"):
        raise UsageError(f"unknown scenario {cfg['scenario']!r}")
    cont = parser["contamination"] if "contamination" in parser else None
    cfg["contamination"] = None
    if cont is not None and cont.getboolean("enabled", fallback=True):
        cfg["contamination"] = {
            "cells": list(_get(cont, "cells", _int_list, (0,))),
            "a0": _get(cont, "a0", float, None),
            "b0": _get(cont, "b0", float, None if "a0" in cont else 0.0),
        }
    test = parser["test"] if "test" in parser else None
    cfg["test"] = {
        "null_a0": _get(test, "null_a0", float, 6.0),
        "alt_a0": _get(test, "alt_a0", float, 5.0),
        "contaminated_a0": _get(test, "contaminated_a0", float, 5.6),
        "K_values": list(_get(test, "K_values", _int_list, (cfg["K_per_cell"],))),
    }
    return cfg


def _design_from(cfg: dict) -> Design:
    if cfg["scenario"] == "custom":
        c = cfg["custom"]
        return Design(tuple((1.0, *row) for row in c["stress"]), tuple(c["times"]), cfg["K_per_cell"], tuple(c["theta0"]))
    return scenario_design(cfg["scenario"], cfg["K_per_cell"])


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    cfg = _load_sim_config(args.config)
    workers = resolve_workers(args.threads)
    if cfg["study"] == "estimator":
        design = _design_from(cfg)
        cont = PURE
        if cfg["contamination"] is not None:
            c = cfg["contamination"]
            cont = default_contamination(design, a0=c["a0"], b0=c["b0"], cells=c["cells"])
        report = run_estimator_study(
            design, betas=cfg["betas"], S=cfg["S"], seed=cfg["seed"], contamination=cont,
            alpha=cfg["alpha"] if cfg["alpha"] is not None else 0.10,
            x0=(1.0, *cfg["x0"]), t0=cfg["t0"], n_starts=cfg["n_starts"], workers=workers,
            scenario=cfg["scenario"],
        )
        rows = report.rows()
    else:
        if cfg["scenario"] == "custom":
            raise UsageError("the test study runs on the low/moderate/high presets")
        t = cfg["test"]
        report = run_test_study(
            cfg["scenario"], betas=cfg["betas"], S=cfg["S"], seed=cfg["seed"], K_values=t["K_values"],
            null_a0=t["null_a0"], alt_a0=t["alt_a0"], contaminated_a0=t["contaminated_a0"],
            alpha=cfg["alpha"] if cfg["alpha"] is not None else 0.05,
            n_starts=cfg["n_starts"], workers=workers,
        )
        rows = [(r["beta"], f"{r['kind']}_{r['data']}_K{r['K']}", r["rate"]) for r in report.rows]
    payload = {"manifest": _manifest("simulate", [args.config], cfg, cfg["seed"], started),
               "report": report.to_dict()}
    _emit(dumps(payload), args.output)
    if args.csv:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["beta", "metric", "value"])
        for beta, metric, value in rows:
            writer.writerow([repr(float(beta)), metric, repr(float(value))])
        Path(args.csv).write_text(buf.getvalue(), encoding="utf-8")
    return EXIT_NONCONVERGED if report.degraded else EXIT_OK


def cmd_influence(args) -> int:
    betas = tuple(_floats(args.betas)) if args.betas else FIG_BETAS
    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        rows = preset_curve(args.preset, betas)
    else:
        if args.theta is None or args.grid is None or (args.x is None) == (args.omega is None):
            raise UsageError("custom curves need --theta, --grid and exactly one of --x (vary omega) or --omega (vary x)")
        theta = _floats(args.theta)
        grid = _floats(args.grid)
        if len(theta) != 4 or len(grid) != 3:
            raise UsageError("--theta needs 4 values and --grid needs start,stop,step")
        if args.x is not None:
            rows = omega_curve(theta, args.x, betas, tuple(grid))
        else:
            rows = stress_curve(theta, args.omega, betas, tuple(grid))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["omega_or_x", "beta", "h1", "h2"])
    for v, beta, h1, h2 in rows:
        writer.writerow([repr(float(v)), repr(float(beta)), repr(float(h1)), repr(float(h2))])
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def cmd_tune(args) -> int:
    started = time.perf_counter()
    data = read_csv(args.csv)
    grid = _floats(args.grid)
    if not grid:
        raise UsageError("--grid is empty")
    cfg = _fit_config(args)
    result = tune_beta(data, grid, cfg)
    config = {**_config_echo(cfg), "grid": sorted(set(grid))}
    config.pop("beta")
    payload = {"manifest": _manifest("tune", [args.csv], config, cfg.seed, started), "tune": result.to_dict()}
    _emit(dumps(payload), args.output)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _add_fit_flags(p, beta_default=0.0):
    p.add_argument("--beta", type=float, default=beta_default, help="DPD tuning parameter (0 = MLE)")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--n-starts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oneshot-dpd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes for simulations (default: $ONESHOT_DPD_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the minimum-DPD estimator to a dataset CSV")
    p.add_argument("csv")
    _add_fit_flags(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="fit plus intervals and stress-factor tests")
    p.add_argument("csv")
    _add_fit_flags(p)
    p.add_argument("--x0", required=True, help="normal operating stress values, comma-separated")
    p.add_argument("--t0", type=float, required=True, help="mission time for the reliability")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("test", help="Wald-type test of a linear hypothesis A theta = c")
    p.add_argument("csv")
    _add_fit_flags(p)
    p.add_argument("--factor", type=int, help="test a_j = b_j = 0 for stress factor j")
    p.add_argument("--A", help="constraint matrix as a JSON array of rows")
    p.add_argument("--c", help="right-hand side as a JSON array")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="Monte Carlo study driven by an INI config")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.add_argument("--csv", help="also write plot-ready (beta, metric, value) rows here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("influence", help="influence-function factor curves as CSV")
    p.add_argument("--preset", help=f"one of {sorted(PRESETS)}")
    p.add_argument("--theta", help="a0,a1,b0,b1 for a custom curve")
    p.add_argument("--x", type=float, help="fixed stress; the curve varies omega")
    p.add_argument("--omega", type=float, help="fixed log-time; the curve varies x")
    p.add_argument("--grid", help="start,stop,step")
    p.add_argument("--betas", help="comma-separated tuning parameters")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_influence)

    p = sub.add_parser("tune", help="choose beta by minimum MaxAE over a grid")
    p.add_argument("csv")
    _add_fit_flags(p)
    p.add_argument("--grid", default="0,0.2,0.4,0.6,0.8,1")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except BrokenPipeError:
        return EXIT_OK
    except DatasetFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (UsageError, NonIdentifiableError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
