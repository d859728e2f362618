"""Retraction-free optimization under orthogonality constraints.

Library + CLI implementing the landing method on the Stiefel manifold
(deterministic, stochastic and SAGA variance-reduced variants) with
retraction-based and penalty baselines, theory-derived safeguard step sizes,
merit-function diagnostics, and a reproducible benchmark harness.
"""

from .errors import (
    ConfigError,
    ContractViolationError,
    LandingError,
    NumericalError,
    SingularityError,
)
from .geometry import (
    FieldDecomposition,
    LandingParams,
    distance_sq,
    field_norm_bounds,
    in_safe_region,
    landing_direction,
    landing_field,
    merit_value,
    mu_lower_bound,
    riemannian_gradient_ext,
    safeguard_eta,
    safeguard_eta_star,
    sample_safe_region,
    smoothness_estimate,
)
from .optim import (
    RunRecord,
    RunResult,
    SagaState,
    StepSchedule,
    gd_descent_step,
    gd_theory_step,
    projection_retraction,
    qr_retraction,
    run_landing_gd,
    run_landing_saga,
    run_landing_sgd,
    run_penalty_sgd,
    run_riemannian,
    saga_theory_step,
    step_landing,
    step_saga,
)
from .problems import (
    IcaInstance,
    ObjectiveHandle,
    PcaInstance,
    amari_distance,
    gen_ica_data,
    gen_pca_data,
    ica_objective,
    linear_objective,
    load_instance,
    pca_objective,
    penalty_oracle,
    principal_angles,
    random_stiefel,
    save_instance,
)

__version__ = "0.1.0"
