"""Command-line front end: flat key-value configs, subcommand dispatch,
deterministic seeding, CSV/JSON emission."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import RivampError
from .experiments import (
    convergence_study,
    generate_instance,
    sweep_alpha,
    sweep_lambda,
)
from .proximal import Penalty
from .replica import check_se_replica_equivalence, solve_replica
from .spectral import (
    ENSEMBLE_KINDS,
    MatrixEnsemble,
    law_for_ensemble,
    law_to_dict,
    r_transform,
    r_transform_derivative,
    stieltjes,
    stieltjes_derivative,
)
from .state_evolution import MonteCarloBackend, Prior, SEParams, solve_se
from .vamp import config_from_fixed_point, run_vamp

SUBCOMMANDS = ("predict", "replica", "vamp", "experiment", "spectrum")
EXPERIMENTS = ("lambda-sweep", "alpha-sweep", "convergence")

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _fmt(x: float) -> str:
    """Full round-trip decimal formatting for CSV payloads."""
    return format(float(x), ".17g")


def _parse_grid(text: str):
    """Either 'lo:hi:count:scale' (scale: linear|log) or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 4:
            raise ValueError("grid must be 'lo:hi:count:linear|log' or a comma list")
        lo, hi, count, scale = float(parts[0]), float(parts[1]), int(parts[2]), parts[3]
        if count < 1:
            raise ValueError("grid count must be at least 1")
        if scale == "linear":
            return [float(v) for v in np.linspace(lo, hi, count)]
        if scale == "log":
            if lo <= 0 or hi <= 0:
                raise ValueError("log grids need positive endpoints")
            return [float(v) for v in np.geomspace(lo, hi, count)]
        raise ValueError(f"unknown grid scale {scale!r}")
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError("expected a boolean")


@dataclass
class RunConfig:
    """Fully-defaulted run description; every key is optional in the file."""

    subcommand: str = "predict"
    seed: int = 1234
    out: str = "run"
    jobs: int = 1
    # model
    ensemble: str = "row-orthogonal"
    alpha: float = 2.0
    n: int = 100
    shift: float = 1.0
    rho: float = 0.3
    delta0: float = 0.01
    lambda1: float = 0.1
    lambda2: float = 0.0
    # scalar solvers
    damping: float = 0.5
    tol: float = 1e-12
    max_iters: int = 2000
    backend: str = "closed-form"
    mc_samples: int = 1_000_000
    mc_seed: int = 0
    # message passing
    vamp_mode: str = "oracle"
    vamp_tol: float = 1e-13
    vamp_max_iters: int = 1000
    # experiments
    experiment: str = "lambda-sweep"
    lambda_grid: list = field(default_factory=lambda: _parse_grid("1e-3:1:10:log"))
    alpha_grid: list = field(default_factory=lambda: _parse_grid("0.25:2:15:linear"))
    lambda1_values: list = field(default_factory=lambda: [1e-4, 1e-1])
    lambda2_values: list = field(default_factory=lambda: [0.1, 0.2, 0.3])
    alpha_values: list = field(default_factory=lambda: [0.1, 0.2, 0.5, 1.0, 2.0])
    n_realizations: int = 200
    cd_tol: float = 1e-9
    cd_max_passes: int = 100_000
    cd_warm_start: bool = False
    stderr_target: float = 0.0
    max_realizations: int = 0
    paired_gaussian: bool = False
    # spectrum
    z_grid: list = field(default_factory=lambda: _parse_grid("-10:-0.01:50:linear"))


_PARSERS = {
    "subcommand": str,
    "seed": int,
    "out": str,
    "jobs": int,
    "ensemble": str,
    "alpha": float,
    "n": int,
    "shift": float,
    "rho": float,
    "delta0": float,
    "lambda1": float,
    "lambda2": float,
    "damping": float,
    "tol": float,
    "max_iters": int,
    "backend": str,
    "mc_samples": int,
    "mc_seed": int,
    "vamp_mode": str,
    "vamp_tol": float,
    "vamp_max_iters": int,
    "experiment": str,
    "lambda_grid": _parse_grid,
    "alpha_grid": _parse_grid,
    "lambda1_values": _parse_grid,
    "lambda2_values": _parse_grid,
    "alpha_values": _parse_grid,
    "n_realizations": int,
    "cd_tol": float,
    "cd_max_passes": int,
    "cd_warm_start": _parse_bool,
    "stderr_target": float,
    "max_realizations": int,
    "paired_gaussian": _parse_bool,
    "z_grid": _parse_grid,
}

_RANGE_CHECKS = {
    "subcommand": (lambda v: v in SUBCOMMANDS, f"must be one of {SUBCOMMANDS}"),
    "jobs": (lambda v: v >= 1, "must be at least 1"),
    "ensemble": (
        lambda v: v in ENSEMBLE_KINDS and v != "explicit-singular-values",
        "must be gaussian-iid, row-orthogonal or uniform-singular",
    ),
    "alpha": (lambda v: v > 0, "must be positive"),
    "n": (lambda v: v >= 1, "must be at least 1"),
    "shift": (lambda v: v > 0, "must be positive"),
    "rho": (lambda v: 0.0 <= v <= 1.0, "must lie in [0, 1]"),
    "delta0": (lambda v: v >= 0, "must be nonnegative"),
    "lambda1": (lambda v: v >= 0, "must be nonnegative"),
    "lambda2": (lambda v: v >= 0, "must be nonnegative"),
    "damping": (lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    "tol": (lambda v: v > 0, "must be positive"),
    "max_iters": (lambda v: v >= 1, "must be at least 1"),
    "backend": (
        lambda v: v in ("closed-form", "quadrature", "monte-carlo"),
        "must be closed-form, quadrature or monte-carlo",
    ),
    "mc_samples": (lambda v: v >= 1, "must be at least 1"),
    "vamp_mode": (lambda v: v in ("oracle", "adaptive"), "must be oracle or adaptive"),
    "vamp_tol": (lambda v: v > 0, "must be positive"),
    "vamp_max_iters": (lambda v: v >= 1, "must be at least 1"),
    "experiment": (lambda v: v in EXPERIMENTS, f"must be one of {EXPERIMENTS}"),
    "n_realizations": (lambda v: v >= 1, "must be at least 1"),
    "cd_tol": (lambda v: v > 0, "must be positive"),
    "cd_max_passes": (lambda v: v >= 1, "must be at least 1"),
    "stderr_target": (lambda v: v >= 0, "must be nonnegative (0 disables the gate)"),
    "max_realizations": (lambda v: v >= 0, "must be nonnegative (0 means automatic)"),
}


def parse_config(text: str) -> tuple[RunConfig | None, list[str]]:
    """Parse the flat key-value format, collecting every error.

    Returns (config, []) on success or (None, errors); errors carry the line
    number and offending key.
    """
    values = {}
    errors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _PARSERS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            parsed = _PARSERS[key](val)
        except (ValueError, TypeError) as exc:
            errors.append(f"line {lineno}: key {key!r}: {exc}")
            continue
        check = _RANGE_CHECKS.get(key)
        if check and not check[0](parsed):
            errors.append(f"line {lineno}: key {key!r} {check[1]} (got {val})")
            continue
        values[key] = parsed
    if errors:
        return None, errors
    return RunConfig(**values), []


def load_config(path: str | None, overrides: list[str]) -> tuple[RunConfig | None, list[str]]:
    """File content plus --set overrides, validated together."""
    text = Path(path).read_text() if path else ""
    for i, item in enumerate(overrides, start=1):
        if "=" not in item:
            return None, [f"--set #{i}: expected KEY=VALUE, got {item!r}"]
        text += f"\n{item}  # --set #{i}"
    return parse_config(text)


# -- dispatch --------------------------------------------------------------


def _ensemble(config: RunConfig) -> MatrixEnsemble:
    return MatrixEnsemble(config.ensemble, config.alpha, config.n, shift=config.shift)


def _se_params(config: RunConfig) -> SEParams:
    backend = config.backend
    if backend == "monte-carlo":
        backend = MonteCarloBackend(config.mc_samples, config.mc_seed)
    return SEParams(
        prior=Prior(config.rho),
        penalty=Penalty(config.lambda1, config.lambda2),
        delta0=config.delta0,
        law=law_for_ensemble(_ensemble(config)),
        damping=config.damping,
        tol=config.tol,
        max_iters=config.max_iters,
        moment_backend=backend,
    )


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _cmd_predict(config: RunConfig) -> int:
    report = solve_se(_se_params(config))
    _write_json(Path(f"{config.out}.json"), {"fixed_point": report.to_dict()})
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _cmd_replica(config: RunConfig) -> int:
    params = _se_params(config)
    se_report = solve_se(params)
    rep_report = solve_replica(params)
    payload = {
        "state_evolution": se_report.to_dict(),
        "replica": rep_report.to_dict(),
    }
    code = EXIT_OK
    if se_report.converged and rep_report.converged:
        payload["gap"] = check_se_replica_equivalence(params)
    else:
        payload["gap"] = None
        code = EXIT_NOT_CONVERGED
    _write_json(Path(f"{config.out}.json"), payload)
    return code


def _cmd_vamp(config: RunConfig) -> int:
    params = _se_params(config)
    report = solve_se(params)
    if not report.converged:
        _write_json(Path(f"{config.out}.json"), {"error": "scalar fixed point did not converge"})
        return EXIT_NOT_CONVERGED
    vamp_config = config_from_fixed_point(
        report, params, mode=config.vamp_mode,
        max_iters=config.vamp_max_iters, tol=config.vamp_tol,
    )
    instance = generate_instance(_ensemble(config), config.rho, config.delta0, config.seed)
    estimate, trace, checks = run_vamp(instance, vamp_config, config.seed)
    _write_csv(Path(f"{config.out}.csv"), ["k", "d_k", "mse_k"], trace.to_rows())
    _write_json(
        Path(f"{config.out}.json"),
        {
            "converged": trace.converged,
            "diverged": trace.diverged,
            "iterations": trace.iterations,
            "kkt_residual": checks.kkt_residual,
            "contraction_ratio": checks.contraction_ratio,
            "fixed_point": report.to_dict(),
            "final_mse": float(trace.mse[-1]) if len(trace.mse) else None,
        },
    )
    return EXIT_OK if trace.converged else EXIT_NOT_CONVERGED


def _sweep_rows(sweep):
    for i in range(len(sweep.grid)):
        yield (
            float(sweep.grid[i]),
            float(sweep.predicted_mse[i]),
            float(sweep.empirical_mse_mean[i]),
            float(sweep.empirical_mse_stderr[i]),
            int(sweep.realization_counts[i]),
            int(sweep.n_nonconverged[i]),
        )


def _cmd_experiment(config: RunConfig) -> int:
    stderr_target = config.stderr_target or None
    max_realizations = config.max_realizations or None
    warm = "ridge" if config.cd_warm_start else None
    if config.experiment == "lambda-sweep":
        ensembles = [_ensemble(config)]
        if config.paired_gaussian and config.ensemble != "gaussian-iid":
            ensembles.append(MatrixEnsemble("gaussian-iid", config.alpha, config.n))
        sweeps = sweep_lambda(
            ensembles, config.rho, config.delta0, config.lambda_grid,
            config.n_realizations, config.seed, lambda2=config.lambda2,
            cd_tol=config.cd_tol, cd_max_passes=config.cd_max_passes, jobs=config.jobs,
            stderr_target=stderr_target, max_realizations=max_realizations,
            cd_warm_start=warm,
        )
    elif config.experiment == "alpha-sweep":
        sweeps = sweep_alpha(
            config.n, config.alpha_grid, config.lambda1_values, config.rho, config.delta0,
            config.n_realizations, config.seed, shift=config.shift, lambda2=config.lambda2,
            cd_tol=config.cd_tol, cd_max_passes=config.cd_max_passes, jobs=config.jobs,
            stderr_target=stderr_target, max_realizations=max_realizations,
            cd_warm_start=warm,
        )
    else:
        cells = convergence_study(
            config.alpha_values, config.lambda1, config.lambda2_values,
            config.n, config.rho, config.delta0, config.seed,
            max_iters=config.vamp_max_iters,
        )
        rows = [
            (a, l2, t.converged, t.diverged, t.iterations,
             float(t.d[-1]) if len(t.d) else float("nan"), c.contraction_ratio)
            for (a, l2), (t, c) in sorted(cells.items())
        ]
        _write_csv(
            Path(f"{config.out}.csv"),
            ["alpha", "lambda2", "converged", "diverged", "iterations", "d_final", "ratio"],
            rows,
        )
        _write_json(
            Path(f"{config.out}.json"),
            {
                "cells": [
                    {"alpha": a, "lambda2": l2, "converged": t.converged, "diverged": t.diverged}
                    for (a, l2), (t, _) in sorted(cells.items())
                ]
            },
        )
        return EXIT_OK

    header = ["grid", "predicted_mse", "empirical_mse_mean", "empirical_mse_stderr",
              "n_realizations", "n_nonconverged"]
    rows = []
    for sweep in sweeps:
        for row in _sweep_rows(sweep):
            rows.append((sweep.label, *row))
    _write_csv(Path(f"{config.out}.csv"), ["label", *header], rows)
    _write_json(Path(f"{config.out}.json"), {"sweeps": [s.to_dict() for s in sweeps]})
    return EXIT_OK


def _cmd_spectrum(config: RunConfig) -> int:
    law = law_for_ensemble(_ensemble(config))
    rows = []
    for z in config.z_grid:
        if not z < law.support_min:
            continue
        s = stieltjes(law, z)
        sp = stieltjes_derivative(law, z)
        try:
            r = r_transform(law, z) if z < 0 else float("nan")
            rp = r_transform_derivative(law, z) if z < 0 else float("nan")
        except RivampError:
            r, rp = float("nan"), float("nan")
        rows.append((float(z), s, sp, r, rp))
    _write_csv(Path(f"{config.out}.csv"), ["z", "stieltjes", "stieltjes_prime", "r", "r_prime"], rows)
    payload = {"law": law_to_dict(law)}
    if law.continuous is not None:
        lo, hi = law.continuous.support
        grid = np.linspace(lo, hi, 201)
        payload["density_samples"] = [
            [float(x), float(p)] for x, p in zip(grid, law.continuous.pdf(grid))
        ]
    _write_json(Path(f"{config.out}.json"), payload)
    return EXIT_OK


_COMMANDS = {
    "predict": _cmd_predict,
    "replica": _cmd_replica,
    "vamp": _cmd_vamp,
    "experiment": _cmd_experiment,
    "spectrum": _cmd_spectrum,
}


def dispatch(config: RunConfig) -> int:
    """Run the configured subcommand; artifacts land at the out prefix."""
    try:
        return _COMMANDS[config.subcommand](config)
    except RivampError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rivamp",
        description="Asymptotic error predictions and finite-size validation "
        "for convex penalized regression under rotationally invariant designs.",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="key-value config file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    parser.add_argument("--out", help="output path prefix")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--jobs", type=int, help="parallel realization workers")
    args = parser.parse_args(argv)

    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"out = {args.out}")
    if args.seed is not None:
        overrides.append(f"seed = {args.seed}")
    if args.jobs is not None:
        overrides.append(f"jobs = {args.jobs}")

    config, errors = load_config(args.config, overrides)
    if errors:
        for err in errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    config.subcommand = args.subcommand
    return dispatch(config)


if __name__ == "__main__":
    sys.exit(main())
