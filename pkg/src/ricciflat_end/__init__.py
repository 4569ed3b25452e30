"""Numerical toolkit for radial Ricci-flat metrics on a model end."""

__version__ = "0.1.0"

from .model_end import (  # noqa: E402
    DomainError,
    Forcing,
    ModelEnd,
    RadialField,
    RadialGrid,
    bounded_geometry_factor,
    c_min,
    eval_f,
    forcing_tail,
    laplacian_radial,
    make_grid,
    normalize_mass,
    quasi_grid,
    reference_coefficients,
)
from .ma_solver import (  # noqa: E402
    ConvergenceError,
    PositivityError,
    SingularJacobianError,
    Solution,
    SolverConfig,
    SolverError,
    closed_form_eps0,
    continue_to_limit,
    eigenvalue_ratios,
    solve_eps,
)
from .config import ConfigError, ExperimentConfig, dump_config, parse_config  # noqa: E402
from .experiment import RunManifest, emit_csv, emit_manifest, run_experiment  # noqa: E402

__all__ = [name for name in dir() if not name.startswith("_")]
