"""Particle-based stochastic projected gradient flows over probability space.

The package tracks a belief over unknown parameters as an equal-weight
particle cloud and improves it one streaming observation at a time by a
projected stochastic descent in Wasserstein geometry.  It ships exact
transport diagnostics (assignment-based Wasserstein-2, Bures distance,
moment lower bounds), convergence bound reporting, and a complete
desk-scale predictive-maintenance pipeline built on those pieces.
"""

from .errors import ConfigError, DataError, EngineError, NumericalError, UnsafeStepError
from .flow import (
    FlowConfig,
    FlowTrace,
    StepBoundReport,
    convergence_bound,
    lipschitz_norm_gap,
    run,
    step,
    validate_tau,
)
from .functionals import (
    GradientField,
    StreamingLSObjective,
    evaluate_objective,
    exact_gradient,
    generic_gradient_expected_value,
    generic_gradient_variance,
    perturbed_gradient,
    stochastic_gradient,
)
from .measures import (
    ParticleMeasure,
    covariance,
    init_uniform_box,
    mean,
    percentile,
    pushforward,
    variance_of_sum,
)
from .sets import (
    Ball,
    Box,
    ConvexSet,
    FullSpace,
    Halfspace,
    NonnegativeOrthant,
    project_measure,
    project_point,
)
from .transport import (
    TransportPlan,
    bures_distance,
    gelbrich_lower_bound,
    w2_1d,
    w2_exact,
)

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "Box",
    "ConfigError",
    "ConvexSet",
    "DataError",
    "EngineError",
    "FlowConfig",
    "FlowTrace",
    "FullSpace",
    "GradientField",
    "Halfspace",
    "NonnegativeOrthant",
    "NumericalError",
    "ParticleMeasure",
    "StepBoundReport",
    "StreamingLSObjective",
    "TransportPlan",
    "UnsafeStepError",
    "bures_distance",
    "convergence_bound",
    "covariance",
    "evaluate_objective",
    "exact_gradient",
    "gelbrich_lower_bound",
    "generic_gradient_expected_value",
    "generic_gradient_variance",
    "init_uniform_box",
    "lipschitz_norm_gap",
    "mean",
    "percentile",
    "perturbed_gradient",
    "project_measure",
    "project_point",
    "pushforward",
    "run",
    "step",
    "stochastic_gradient",
    "validate_tau",
    "variance_of_sum",
    "w2_1d",
    "w2_exact",
]
