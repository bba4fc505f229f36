"""Periodic cell correctors, effective tensors and field-concentration bounds."""
from __future__ import annotations

__version__ = "0.1.0"

from .cell_solver import (CorrectorSolution, EffectiveTensor, effective_tensor, equilibrium_residual,
                          solve_corrector, voigt_reuss_bounds)
from .concentration import (ConcentrationReport, MomentSpec, chebyshev_tail, estimate_threshold_exponent,
                            lower_bound_Lp, moment_finf, moment_fp, phase_moment_fp)
from .errors import CoercivityError, ConfigError, ConvergenceError, HomconcError, PartitionError
from .geometry import (CellGrid, SchulgasserCell, build_laminate, build_multiphase, rasterize_schulgasser,
                       validate_coercivity)
from .kernels import BACKEND
from .macro import Box, MacroProblem, MacroSolution, solve_homogenized, two_scale_reconstruction
from .schulgasser import SchulgasserAnalytics, critical_exponent, lambda_moment, lb_factor

__all__ = [
    "BACKEND", "Box", "CellGrid", "CoercivityError", "ConcentrationReport", "ConfigError", "ConvergenceError",
    "CorrectorSolution", "EffectiveTensor", "HomconcError", "MacroProblem", "MacroSolution", "MomentSpec",
    "PartitionError", "SchulgasserAnalytics", "SchulgasserCell", "build_laminate", "build_multiphase",
    "chebyshev_tail", "critical_exponent", "effective_tensor", "equilibrium_residual",
    "estimate_threshold_exponent", "lambda_moment", "lb_factor", "lower_bound_Lp", "moment_finf", "moment_fp",
    "phase_moment_fp", "rasterize_schulgasser", "solve_corrector", "solve_homogenized",
    "two_scale_reconstruction", "validate_coercivity", "voigt_reuss_bounds",
]
