"""Flat ``section.key = value`` experiment configuration.

One knob per line, ``#`` starts a comment, lists are comma separated::

    model.n = 2
    model.profile = power
    model.exponent = 3.5
    grid.M = 512
    analysis.deltas = 0.25, 0.5

Parsing collects every problem (unknown key, duplicate, bad type, broken
invariant) with its line number instead of stopping at the first.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .ma_solver import SolverConfig
from .model_end import GRADINGS, MIN_NODES, PROFILES, Forcing, ModelEnd
from .lemmas import SUITES


class ConfigError(ValueError):
    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("\n".join(str(i) for i in self.issues))


@dataclass(frozen=True)
class ConfigIssue:
    line: int | None
    message: str

    def __str__(self):
        where = f"line {self.line}: " if self.line is not None else ""
        return where + self.message


@dataclass(frozen=True)
class GridSpec:
    T: float | None = None  # None means 1000 * t0
    M: int = 512
    grading: str = "geometric"


@dataclass(frozen=True)
class AnalysisSpec:
    deltas: tuple = ()  # empty means min(0.5, (N - 1 - 1/n) / 2)
    window_factor: float = 4.0
    min_window_nodes: int = 8
    seed: int = 0
    lemma_samples: int = 10_000
    lemma_dims: tuple = (2, 3, 4, 5, 6, 7, 8)
    suites: tuple = SUITES
    envelope_tolerance: float = 0.02
    scaling_tolerance: float = 0.05


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    formats: tuple = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelEnd
    grid: GridSpec = field(default_factory=GridSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)

    @property
    def T(self) -> float:
        return self.grid.T if self.grid.T is not None else 1000.0 * self.model.t0


def _int(s):
    s = s.strip()
    if not s.lstrip("+-").isdigit():
        raise ValueError(f"expected an integer, got {s!r}")
    return int(s)


def _float(s):
    return float(s.strip())


def _str(s):
    return s.strip()


def _list(conv):
    def parse(s):
        return tuple(conv(p) for p in s.split(",") if p.strip())
    return parse


# section.key -> value converter
SCHEMA = {
    "model.n": _int,
    "model.t0": _float,
    "model.profile": _str,
    "model.amplitude": _float,
    "model.exponent": _float,
    "model.kappa": _float,
    "grid.T": _float,
    "grid.M": _int,
    "grid.grading": _str,
    "solver.eps_start": _float,
    "solver.eps_ratio": _float,
    "solver.eps_floor": _float,
    "solver.newton_tol": _float,
    "solver.newton_max_iter": _int,
    "solver.line_search_halvings": _int,
    "solver.scheme": _str,
    "analysis.deltas": _list(_float),
    "analysis.window_factor": _float,
    "analysis.min_window_nodes": _int,
    "analysis.seed": _int,
    "analysis.lemma_samples": _int,
    "analysis.lemma_dims": _list(_int),
    "analysis.suites": _list(_str),
    "analysis.envelope_tolerance": _float,
    "analysis.scaling_tolerance": _float,
    "outputs.dir": _str,
    "outputs.formats": _list(_str),
}

MODEL_DEFAULTS = {"n": 1, "t0": 2.0, "profile": "zero", "amplitude": 1.0, "exponent": 3.0, "kappa": 0.0}


def parse_config(text: str) -> ExperimentConfig:
    issues = []
    values, where = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            issues.append(ConfigIssue(lineno, f"expected 'section.key = value', got {raw.strip()!r}"))
            continue
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            issues.append(ConfigIssue(lineno, f"unknown key {key!r}"))
            continue
        if key in where:
            issues.append(ConfigIssue(lineno, f"duplicate key {key!r} (first set on line {where[key]})"))
            continue
        where[key] = lineno
        try:
            values[key] = SCHEMA[key](val)
        except ValueError as exc:
            issues.append(ConfigIssue(lineno, f"{key}: {exc}"))

    def sect(prefix):
        return {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(prefix + ".")}

    def line_of(*keys):
        for k in keys:
            if k in where:
                return where[k]
        return None

    m = {**MODEL_DEFAULTS, **sect("model")}
    model = None
    if m["profile"] not in PROFILES:
        issues.append(ConfigIssue(line_of("model.profile"), f"model.profile must be one of {PROFILES}"))
    else:
        try:
            forcing = Forcing(m["profile"], m["amplitude"], m["exponent"], m["kappa"])
            model = ModelEnd(m["n"], m["t0"], forcing)
        except ValueError as exc:
            msg = str(exc)
            key = ("model.exponent", "model.n") if "exponent" in msg else \
                  ("model.t0",) if "t0" in msg else ("model.n",)
            issues.append(ConfigIssue(line_of(*key), msg))

    grid = GridSpec(**sect("grid"))
    if grid.M < MIN_NODES:
        issues.append(ConfigIssue(line_of("grid.M"), f"grid.M must be >= {MIN_NODES}"))
    if grid.grading not in GRADINGS:
        issues.append(ConfigIssue(line_of("grid.grading"), f"grid.grading must be one of {GRADINGS}"))
    if model is not None and grid.T is not None and not grid.T > model.t0:
        issues.append(ConfigIssue(line_of("grid.T"), "grid.T must exceed model.t0"))

    solver = SolverConfig()
    try:
        solver = SolverConfig(**sect("solver"))
    except ValueError as exc:
        issues.append(ConfigIssue(line_of(*(k for k in where if k.startswith("solver."))), str(exc)))

    analysis = AnalysisSpec(**sect("analysis"))
    if analysis.window_factor <= 1.0:
        issues.append(ConfigIssue(line_of("analysis.window_factor"), "analysis.window_factor must exceed 1"))
    if analysis.min_window_nodes < 2:
        issues.append(ConfigIssue(line_of("analysis.min_window_nodes"), "analysis.min_window_nodes must be >= 2"))
    if analysis.lemma_samples < 1:
        issues.append(ConfigIssue(line_of("analysis.lemma_samples"), "analysis.lemma_samples must be >= 1"))
    if any(d < 2 for d in analysis.lemma_dims):
        issues.append(ConfigIssue(line_of("analysis.lemma_dims"), "analysis.lemma_dims entries must be >= 2"))
    bad = [s for s in analysis.suites if s not in SUITES]
    if bad:
        issues.append(ConfigIssue(line_of("analysis.suites"), f"unknown suites {bad}; expected from {SUITES}"))
    if model is not None and not model.forcing.is_zero:
        limit = model.forcing.exponent - 1.0 - 1.0 / model.n
        for d in analysis.deltas:
            if not 0.0 < d < limit:
                issues.append(ConfigIssue(line_of("analysis.deltas"),
                                          f"delta={d} outside the admissible range (0, {limit:g})"))
    if analysis.seed < 0:
        issues.append(ConfigIssue(line_of("analysis.seed"), "analysis.seed must be non-negative"))

    outputs = OutputSpec(**sect("outputs"))
    bad = [f for f in outputs.formats if f not in ("csv", "json")]
    if bad:
        issues.append(ConfigIssue(line_of("outputs.formats"), f"unknown output formats {bad}"))

    if issues:
        raise ConfigError(issues)
    return ExperimentConfig(model, grid, solver, analysis, outputs)


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_items(cfg: ExperimentConfig) -> dict:
    """Flat ``section.key -> value`` view of every setting (defaults included)."""
    fr = cfg.model.forcing
    out = {
        "model.n": cfg.model.n,
        "model.t0": cfg.model.t0,
        "model.profile": fr.kind,
        "model.amplitude": fr.amplitude,
        "model.exponent": fr.exponent,
        "model.kappa": fr.kappa,
    }
    for name, obj in (("grid", cfg.grid), ("solver", cfg.solver), ("analysis", cfg.analysis),
                      ("outputs", cfg.outputs)):
        for f in fields(obj):
            v = getattr(obj, f.name)
            if v is None or v == ():
                continue
            out[f"{name}.{f.name}"] = v
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in config_items(cfg).items())
