"""Numerical toolkit for anisotropic fractional p-biharmonic problems.

Spectral fractional operators on periodic grids, forward solvers for the
interior-source and exterior-value problems, the first eigenpair, the
exterior Dirichlet-to-Neumann map, the Caffarelli-Silvestre extension and
monotonicity-based conformal-coefficient experiments.
"""
__version__ = "0.1.0"

from .grid import (Field, GridSpec, bessel_potential, fractional_laplacian, hsp_norm, inner,
                   load_field, lp_norm, save_field)
from .energy import (CP_FIT, AnisotropyField, ConformalCoefficient, apply_operator,
                     fit_monotonicity_constant, matrix_sqrt_field, p_energy,
                     vector_monotonicity_gap, weak_pairing)
from .solver import (ConvergenceError, DomainMask, SolveReport, solve_exterior_value,
                     solve_interior_source, uniqueness_probe)
from .poincare import PoincareResult, poincare_eigenpair, rayleigh_lower_bound_check
from .dnmap import DnContext, TraceDatum, dn_matrix_linear, dn_pair, quotient_independence_check
from .extension import (ExtensionSlices, PoissonKernelSpec, extend, kernel_lq_norm, normal_trace,
                        poisson_kernel, pde_residual_check)
from .inverse import (DnMeasurement, MeasurementOracle, SigmaEstimate, dn_gap,
                      monotonicity_bounds, reconstruct_sigma, single_measurement_experiment)

__all__ = [
    "GridSpec", "Field", "fractional_laplacian", "bessel_potential", "lp_norm", "hsp_norm",
    "inner", "save_field", "load_field",
    "AnisotropyField", "ConformalCoefficient", "matrix_sqrt_field", "p_energy", "weak_pairing",
    "apply_operator", "vector_monotonicity_gap", "fit_monotonicity_constant", "CP_FIT",
    "DomainMask", "SolveReport", "ConvergenceError", "solve_interior_source",
    "solve_exterior_value", "uniqueness_probe",
    "PoincareResult", "poincare_eigenpair", "rayleigh_lower_bound_check",
    "TraceDatum", "DnContext", "dn_pair", "quotient_independence_check", "dn_matrix_linear",
    "PoissonKernelSpec", "ExtensionSlices", "poisson_kernel", "kernel_lq_norm", "extend",
    "pde_residual_check", "normal_trace",
    "DnMeasurement", "MeasurementOracle", "SigmaEstimate", "dn_gap", "monotonicity_bounds",
    "single_measurement_experiment", "reconstruct_sigma",
]
