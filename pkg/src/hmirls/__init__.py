"""Low-rank matrix recovery by iteratively reweighted least squares.

The solver minimizes a smoothed Schatten-p surrogate subject to linear
measurement constraints. Four reweighting rules are provided: a two-sided
harmonic-mean rule and the arithmetic-mean, column- and row-sided classics.
"""

from .diagnostics import (
    NspReport,
    OrderFit,
    condition_number,
    contraction_constant,
    contraction_predicate,
    fit_convergence_order,
    g_eps_p,
    j_p,
    nsp_witness_check,
    stationarity_residual,
    weighted_quadratic_form,
    z_opt,
)
from .errors import (
    InsufficientDataError,
    NumericalFailure,
    ParameterError,
    SchemaError,
    SingularityError,
)
from .experiments import (
    ExperimentConfig,
    PhaseCellResult,
    adversarial_init,
    cell_seed,
    make_instance,
    measurement_count,
    run_convergence,
    run_phase,
    success_rates,
)
from .linalg import (
    SpectralPair,
    SvdFactors,
    best_rank_r_error,
    kronsum_inverse_apply,
    rank,
    schatten_norm,
    svd,
)
from .measurements import (
    MeasurementOperator,
    ProblemInstance,
    degrees_of_freedom,
    load_instance,
    null_space_basis,
    sample_completion_operator,
    sample_gaussian_operator,
    sample_ground_truth,
    save_instance,
)
from .solver import (
    SolveTrace,
    SolverConfig,
    Variant,
    WeightState,
    assemble_gram,
    assemble_gram_dense,
    build_weight_state,
    epsilon_update,
    identity_weight_state,
    solve,
    weight_inverse_apply,
    weighted_ls_step,
)

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "InsufficientDataError",
    "MeasurementOperator",
    "NspReport",
    "NumericalFailure",
    "OrderFit",
    "ParameterError",
    "PhaseCellResult",
    "ProblemInstance",
    "SchemaError",
    "SingularityError",
    "SolveTrace",
    "SolverConfig",
    "SpectralPair",
    "SvdFactors",
    "Variant",
    "WeightState",
    "adversarial_init",
    "assemble_gram",
    "assemble_gram_dense",
    "best_rank_r_error",
    "build_weight_state",
    "cell_seed",
    "condition_number",
    "contraction_constant",
    "contraction_predicate",
    "degrees_of_freedom",
    "epsilon_update",
    "fit_convergence_order",
    "g_eps_p",
    "identity_weight_state",
    "j_p",
    "kronsum_inverse_apply",
    "load_instance",
    "make_instance",
    "measurement_count",
    "null_space_basis",
    "nsp_witness_check",
    "rank",
    "run_convergence",
    "run_phase",
    "sample_completion_operator",
    "sample_gaussian_operator",
    "sample_ground_truth",
    "save_instance",
    "schatten_norm",
    "solve",
    "stationarity_residual",
    "success_rates",
    "svd",
    "weight_inverse_apply",
    "weighted_ls_step",
    "weighted_quadratic_form",
    "z_opt",
]
