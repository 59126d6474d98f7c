"""Numerical laboratory for a regularized logarithmic-sensitivity
chemotaxis system.

The package couples a finite-volume solver for

    u_t = lap u - chi div((u / v) grad v)
    v_t = lap v - v + u / (1 + eps u)

on a box with zero-flux boundaries to the exponent algebra of the weighted
entropy u^p v^q, discrete weak-form residual checks, and standalone analytic
oracles (power identities, square completion, a Riccati comparison bound,
and empirical Poincare-type constants).
"""

__version__ = "0.1.0"

from .params import (
    ExponentDomainError,
    ExponentSelectionError,
    EntropyCoefficients,
    ModelParams,
    chi_admissible,
    entropy_coefficients,
    exponent_infimum,
    exponent_infimum_bruteforce,
    export_exponent_region,
    q_bounds,
    select_exponents,
)
from .grid import (
    Field,
    Grid,
    GridError,
    face_divergence,
    face_gradient,
    gradient_cell_magnitude,
    integrate,
    laplacian_neumann,
    read_field_binary,
    write_field_binary,
    write_field_csv,
)
from .simulator import (
    SimState,
    SimulationError,
    SingularityError,
    StepReport,
    Trajectory,
    cfl_dt,
    initial_state,
    run,
    step,
)
from .diagnostics import (
    BoundReport,
    DiagnosticsRecord,
    TestFunction,
    apriori_bounds_check,
    builtin_supersolution_family,
    collect,
    dual_norm_surrogate,
    entropy_identity_residual,
    grad_vq_bound,
    log_mass_check,
    supersolution_residual,
    trace_positivity_check,
    u_lr_bound,
    v_weak_residual,
)
from .oracles import (
    EnsembleSpec,
    OdeComparison,
    check_power_identities,
    check_square_completion,
    coth_bound,
    log_poincare_ratio,
    mean_poincare_delta_trend,
    mean_poincare_ratio,
    synth_positive_field,
    verify_ode_comparison,
    verify_ode_comparison_batch,
)
from .cli import (
    ConfigError,
    eps_convergence_study,
    main,
    refine_study,
    run_experiment,
    validate_config,
)

__all__ = [
    "__version__",
    "BoundReport",
    "ConfigError",
    "DiagnosticsRecord",
    "EnsembleSpec",
    "EntropyCoefficients",
    "ExponentDomainError",
    "ExponentSelectionError",
    "Field",
    "Grid",
    "GridError",
    "ModelParams",
    "OdeComparison",
    "SimState",
    "SimulationError",
    "SingularityError",
    "StepReport",
    "TestFunction",
    "Trajectory",
    "apriori_bounds_check",
    "builtin_supersolution_family",
    "cfl_dt",
    "check_power_identities",
    "check_square_completion",
    "chi_admissible",
    "collect",
    "coth_bound",
    "dual_norm_surrogate",
    "entropy_coefficients",
    "entropy_identity_residual",
    "eps_convergence_study",
    "exponent_infimum",
    "exponent_infimum_bruteforce",
    "export_exponent_region",
    "face_divergence",
    "face_gradient",
    "grad_vq_bound",
    "gradient_cell_magnitude",
    "initial_state",
    "integrate",
    "laplacian_neumann",
    "log_mass_check",
    "log_poincare_ratio",
    "main",
    "mean_poincare_delta_trend",
    "mean_poincare_ratio",
    "q_bounds",
    "read_field_binary",
    "refine_study",
    "run",
    "run_experiment",
    "select_exponents",
    "step",
    "supersolution_residual",
    "synth_positive_field",
    "trace_positivity_check",
    "u_lr_bound",
    "v_weak_residual",
    "validate_config",
    "verify_ode_comparison",
    "verify_ode_comparison_batch",
    "write_field_binary",
    "write_field_csv",
]
