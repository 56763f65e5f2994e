"""Numerical laboratory for reparameterized gradient-descent dynamics.

High-dimensional GD on the studied model families collapses, under the
canonical (p, q) reparameterization, to exact two-dimensional recursions
whose behavior is organized by the period-doubling bifurcation of a
one-parameter map.  The package provides the scalar models, the recursions
and map analysis, a from-scratch network with Hessian tooling, reduced-state
extraction, executable theorem verdicts, and a CLI for reproducible runs.
"""

from .errors import (
    ConfigError,
    DegenerateReparamError,
    DivergenceError,
    DomainError,
    EosLabError,
    NoRootError,
    ShapeError,
)
from .scalar_models import (
    Activation,
    AssumptionReport,
    RFunction,
    ScalarLoss,
    activation,
    h_linear,
    h_nonlinear,
    r_from_activation,
    r_from_loss,
    r_function,
    r_hat,
    scalar_loss,
    validate_assumptions,
)
from .reparam_dynamics import (
    BifurcationDiagram,
    LinearStepper,
    NonlinearStepper,
    OrbitReport,
    ReparamPoint,
    StopRule,
    Trajectory,
    classify_fixed_point,
    detect_period,
    map_fq,
    map_fq_derivative,
    period_doubling_threshold,
    simulate,
    step_linear,
    step_nonlinear,
    sweep_bifurcation,
    toy_gd_step,
)
from .network_core import (
    DataBatch,
    MlpParams,
    PowerIterConfig,
    SharpnessEstimate,
    exact_hessian_2layer_linear,
    forward,
    gaussian_batch,
    gd_step,
    gram_spectral_norm,
    hvp,
    init_xavier,
    loss_and_grad,
    sharpness,
    single_point_batch,
)
from .reparam_extract import (
    Aggregator,
    ReparamSpec,
    TrainingRunSpec,
    alignment_residual,
    canonical,
    extract_trajectory,
    generalized,
)
from .theory_checks import (
    RegimeConstants,
    TheoremVerdict,
    check_gradient_flow,
    check_limiting_q,
    check_progressive_sharpening,
    check_sharpness_sandwich_nonlinear,
    fit_order,
    lambda_tilde,
    measure_phase1,
    regime_constants,
)

__version__ = "0.1.0"
