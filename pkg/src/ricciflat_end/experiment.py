"""Experiment orchestration and bit-stable serialization."""

from __future__ import annotations

import io
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_items
from .estimates import (
    asymptotic_fit,
    default_delta,
    dyadic_windows,
    fit_decay,
    laplacian_pinch_consistency,
    verify_main_theorem,
    verify_ueps_scaling,
)
from .lemmas import run_suite
from .ma_solver import (
    Solution,
    SolverError,
    closed_form_eps0,
    continue_to_limit,
    eps_schedule,
    solve_eps,
)
from .model_end import ModelEnd, make_grid, normalize_mass

SCHEMA_VERSION = 1
CSV_COLUMNS = ("t", "u", "h", "lambda_base", "lambda_fiber", "laplacian_u")


@dataclass
class RunManifest:
    config: dict
    status: str = "ok"
    failed_stage: str | None = None
    error: str | None = None
    results: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    solution: Solution | None = None

    @property
    def passed(self) -> bool:
        return self.status == "ok" and bool(self.results.get("passed", False))

    def document(self) -> dict:
        """The serialized manifest; wall-clock timings are kept out of it."""
        return {
            "schema_version": SCHEMA_VERSION,
            "artifact_version": __version__,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "config": self.config,
            **self.results,
        }


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def manifest_text(doc: dict) -> str:
    # json writes floats with repr, i.e. shortest round-trip
    return json.dumps(_clean(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def csv_text(sol: Solution) -> str:
    base, fiber = sol.lambda_minus_one()
    cols = (sol.t, sol.u.values, sol.t + sol.dev, 1.0 + base, 1.0 + fiber, sol.laplacian_u())
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for row in zip(*cols):
        # + 0.0 folds -0.0 into 0.0
        buf.write(",".join("%.17g" % (float(x) + 0.0) for x in row) + "\n")
    return buf.getvalue()


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def _atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_umask())  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_csv(sol: Solution, path) -> Path:
    try:
        _atomic_write(Path(path), csv_text(sol))
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc
    return Path(path)


def emit_manifest(manifest: RunManifest | dict, path) -> Path:
    doc = manifest.document() if isinstance(manifest, RunManifest) else manifest
    try:
        _atomic_write(Path(path), manifest_text(doc))
    except OSError as exc:
        raise OSError(f"cannot write manifest to {path}: {exc}") from exc
    return Path(path)


def write_outputs(manifest: RunManifest, out_dir, formats=("csv", "json")) -> list:
    """Render everything first, then rename into place, so a failure writes nothing."""
    out_dir = Path(out_dir)
    texts = {}
    if "json" in formats:
        texts["manifest.json"] = manifest_text(manifest.document())
        texts["timings.json"] = manifest_text(manifest.timings)
    if "csv" in formats and manifest.solution is not None:
        texts["solution.csv"] = csv_text(manifest.solution)
    written = []
    for name, text in texts.items():
        _atomic_write(out_dir / name, text)
        written.append(out_dir / name)
    return written


def read_csv(path):
    """Columns of a solution CSV as float arrays keyed by header name."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def config_echo(config: ExperimentConfig) -> dict:
    """Settings that determine the results; the output location is left out
    so that the same run written to two directories gives the same bytes."""
    items = config_items(config)
    items.pop("outputs.dir", None)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in items.items()}


def fit_table(t, fields_, factor, min_nodes):
    """Per-window decay fits of each named field plus its far-field exponent."""
    windows = dyadic_windows(float(t[0]), float(t[-1]), factor)
    table = {}
    for name, values in fields_.items():
        fits = fit_decay((t, values), windows, min_nodes)
        best = asymptotic_fit(fits)
        table[name] = {
            "asymptotic_exponent": None if best is None else best.exponent,
            "windows": [f.as_dict() for f in fits],
        }
    return table


def run_experiment(config: ExperimentConfig, seed: int | None = None) -> RunManifest:
    """normalize -> continue_to_limit -> envelope checks -> lemma suites."""
    seed = config.analysis.seed if seed is None else seed
    echo = config_echo(config)
    echo["analysis.seed"] = seed
    man = RunManifest(config=echo)
    res = man.results
    stage = "normalize_mass"
    clock = time.perf_counter
    try:
        t_start = clock()
        model = normalize_mass(config.model)
        grid = make_grid(model, config.T, config.grid.M, config.grid.grading)
        res["model"] = {"c0": model.c0, "sup_abs_f": model.forcing.sup_abs(model.t0)}
        man.timings[stage] = clock() - t_start

        stage = "continue_to_limit"
        t_start = clock()
        limit, trace = continue_to_limit(model, grid, config.solver)
        man.solution = limit
        man.timings[stage] = clock() - t_start

        stage = "oracle"
        t_start = clock()
        oracle = closed_form_eps0(model, grid)
        res["limit"] = {
            "newton": limit.report.as_dict(),
            "sup_u": float(np.max(np.abs(limit.u.values))),
            "oracle_sup_error_u": float(np.max(np.abs(limit.u.values - oracle.u.values))),
            "oracle_sup_error_h": float(np.max(np.abs(limit.dev - oracle.dev))),
        }
        man.timings[stage] = clock() - t_start

        stage = "verify_main_theorem"
        t_start = clock()
        pinch = verify_main_theorem(model, limit, config.analysis.envelope_tolerance)
        res["main_theorem"] = pinch.as_dict()
        res["laplacian_pinch"] = laplacian_pinch_consistency(limit)
        base, fiber = limit.lambda_minus_one()
        res["exponents"] = fit_table(
            limit.t,
            {"u": limit.u.values, "lambda_base_minus_1": base, "lambda_fiber_minus_1": fiber,
             "laplacian_u": limit.laplacian_u()},
            config.analysis.window_factor, config.analysis.min_window_nodes,
        )
        man.timings[stage] = clock() - t_start

        stage = "verify_ueps_scaling"
        t_start = clock()
        scaling = []
        if model.forcing.is_zero:
            deltas = ()
        else:
            deltas = config.analysis.deltas or (default_delta(model),)
        for d in deltas:
            scaling.append(verify_ueps_scaling(model, trace, d, config.analysis.scaling_tolerance).as_dict())
        res["scaling"] = scaling
        d0 = deltas[0] if deltas else 0.0
        res["trace"] = [
            {
                "eps": s.eps,
                "iterations": s.report.iterations,
                "sup_u": float(np.max(np.abs(s.u.values))),
                "S": float(np.max(np.abs(s.u.values) * s.t**d0)),
            }
            for s in trace
        ]
        man.timings[stage] = clock() - t_start

        stage = "lemmas"
        t_start = clock()
        reports = [
            run_suite(name, n, config.analysis.lemma_samples, seed)
            for name in config.analysis.suites for n in config.analysis.lemma_dims
        ]
        res["lemmas"] = [r.as_dict() for r in reports]
        man.timings[stage] = clock() - t_start
    except (SolverError, ValueError, ArithmeticError) as exc:
        man.status = "failed"
        man.failed_stage = stage
        man.error = f"{type(exc).__name__}: {exc}"
        man.solution = None
        res["passed"] = False
        return man

    res["passed"] = bool(
        pinch.passed
        and all(s["pass"] for s in scaling)
        and all(r.passed for r in reports)
    )
    return man


def run_lemmas(config: ExperimentConfig, seed: int | None = None) -> RunManifest:
    """Only the property suites, with the same manifest layout."""
    seed = config.analysis.seed if seed is None else seed
    echo = config_echo(config)
    echo["analysis.seed"] = seed
    man = RunManifest(config=echo)
    t_start = time.perf_counter()
    reports = [
        run_suite(name, n, config.analysis.lemma_samples, seed)
        for name in config.analysis.suites for n in config.analysis.lemma_dims
    ]
    man.timings["lemmas"] = time.perf_counter() - t_start
    man.results["lemmas"] = [r.as_dict() for r in reports]
    man.results["passed"] = all(r.passed for r in reports)
    return man


def sweep_configs(config: ExperimentConfig, values) -> list:
    """One config per forcing exponent ``N`` in ``values``."""
    out = []
    for v in values:
        forcing = replace(config.model.forcing, exponent=float(v))
        out.append(replace(config, model=ModelEnd(config.model.n, config.model.t0, forcing)))
    return out


def run_fixed_eps(config: ExperimentConfig, eps: float) -> RunManifest:
    """Solve the ε-equation at a single ε, warm-started along the schedule above it."""
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    echo = config_echo(config)
    echo["sweep.eps"] = eps
    man = RunManifest(config=echo)
    stage = "normalize_mass"
    try:
        model = normalize_mass(config.model)
        grid = make_grid(model, config.T, config.grid.M, config.grid.grading)
        stage = "solve_eps"
        t_start = time.perf_counter()
        sol = None
        for e in [e for e in eps_schedule(config.solver) if e > eps] + [eps]:
            sol = solve_eps(model, grid, e, config.solver, sol)
        man.timings[stage] = time.perf_counter() - t_start
    except (SolverError, ValueError, ArithmeticError) as exc:
        man.status, man.failed_stage = "failed", stage
        man.error = f"{type(exc).__name__}: {exc}"
        man.results["passed"] = False
        return man
    man.solution = sol
    bound = model.forcing.sup_abs(model.t0) / eps
    sup_u = float(np.max(np.abs(sol.u.values)))
    man.results.update({
        "model": {"c0": model.c0, "sup_abs_f": model.forcing.sup_abs(model.t0)},
        "eps": eps,
        "newton": sol.report.as_dict(),
        "sup_u": sup_u,
        "trivial_bound": bound,
        "passed": sup_u <= bound + 1e-10,
    })
    return man
