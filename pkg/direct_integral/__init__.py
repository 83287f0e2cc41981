"""Direct integral two-step estimation of ODE parameters."""
__version__ = "0.1.0"

from .direct_estimator import (
    BootstrapError,
    BootstrapResult,
    DesignMatrices,
    EstimationPipeline,
    FitResult,
    IdentifiabilityReport,
    InvalidStateError,
    NonIdentifiableError,
    NuEstimate,
    PipelineConfig,
    WeightScheme,
    bootstrap_covariance,
    compute_G,
    criterion_value,
    fit,
    identifiability_report,
    inner_product,
    invert_to_nu,
)
from .experiments import (
    GridDesign,
    McConfig,
    McSummary,
    NoiseSpec,
    RateResult,
    RepeatedDesign,
    rate_check,
    run_monte_carlo,
    simulate,
)
from .ode_core import (
    BUILTIN_MODELS,
    ContractViolationError,
    EstimationError,
    InvalidArgumentError,
    OdeModel,
    SolverDivergenceError,
    Trajectory,
    eval_rhs,
    solve_ode,
)
from .smoothing import (
    KernelSpec,
    Observations,
    RepeatedObservations,
    SingularDesignError,
    SmootherConfig,
    epanechnikov,
    local_poly_fit,
    step_estimator,
)

__all__ = [
    "BUILTIN_MODELS",
    "BootstrapError",
    "BootstrapResult",
    "ContractViolationError",
    "DesignMatrices",
    "EstimationError",
    "EstimationPipeline",
    "FitResult",
    "GridDesign",
    "IdentifiabilityReport",
    "InvalidArgumentError",
    "InvalidStateError",
    "KernelSpec",
    "McConfig",
    "McSummary",
    "NoiseSpec",
    "NonIdentifiableError",
    "NuEstimate",
    "Observations",
    "OdeModel",
    "PipelineConfig",
    "RateResult",
    "RepeatedDesign",
    "RepeatedObservations",
    "SingularDesignError",
    "SmootherConfig",
    "SolverDivergenceError",
    "Trajectory",
    "WeightScheme",
    "bootstrap_covariance",
    "compute_G",
    "criterion_value",
    "epanechnikov",
    "eval_rhs",
    "fit",
    "identifiability_report",
    "inner_product",
    "invert_to_nu",
    "local_poly_fit",
    "rate_check",
    "run_monte_carlo",
    "simulate",
    "solve_ode",
    "step_estimator",
]
