"""Strong solutions of Lévy-driven SDEs with Hölder drift: simulation and numerical checks."""
from __future__ import annotations

from .additive_integral import (
    IntegralDecomposition,
    modified_integral,
    moment_estimates_check,
    stochastic_integral,
    tail_bound_check,
)
from .davie_harness import (
    CheckReport,
    cadlag_in_s_probe,
    davie_uniqueness_check,
    flow_property_check,
    holder_flow_modulus_check,
    lp_lipschitz_estimate,
)
from .kinetic import KineticForce, explicit_kinetic_solve, holder_force_field, make_kinetic_problem
from .levy_core import (
    CompoundPoisson,
    GeneratingTriplet,
    levy_exponent,
    sample_levy_path,
    theta_moment,
)
from .matrix_flow import MatrixExp, integration_by_parts_residual, matexp
from .paths import CadlagPath
from .sde_solver import (
    HolderField,
    SdeProblem,
    localize_drift,
    shift_solution,
    solve_integral_equation,
    solve_strong,
    transform_to_modified,
)

__version__ = "0.1.0"

__all__ = [
    "CadlagPath", "CheckReport", "CompoundPoisson", "GeneratingTriplet", "HolderField",
    "IntegralDecomposition", "KineticForce", "MatrixExp", "SdeProblem", "cadlag_in_s_probe",
    "davie_uniqueness_check", "explicit_kinetic_solve", "flow_property_check",
    "holder_flow_modulus_check", "holder_force_field", "integration_by_parts_residual",
    "levy_exponent", "localize_drift", "lp_lipschitz_estimate", "make_kinetic_problem", "matexp",
    "modified_integral", "moment_estimates_check", "sample_levy_path", "shift_solution",
    "solve_integral_equation", "solve_strong", "stochastic_integral", "tail_bound_check",
    "theta_moment", "transform_to_modified",
]
