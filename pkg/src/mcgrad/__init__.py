"""Monte Carlo gradient estimation toolkit.

Estimates d/dtheta E_{p(x; theta)}[f(x)] with score-function, pathwise
(explicit and implicit) and measure-valued estimators, provides control
variates, baselines and coupling for variance reduction, ships a quadrature
and finite-difference oracle with a gradcheck harness, and includes a
variational Bayesian logistic regression case study.
"""

from .costs import CostFunction, blr_loglik_cost, make_cost, parse_cost
from .errors import (
    CapabilityError,
    ConfigError,
    DomainError,
    McgradError,
    SamplerError,
)
from .estimators import (
    ESTIMATORS,
    EstimatorConfig,
    GradientEstimate,
    MovingAverageBaseline,
    bonnet_price_grad,
    get_estimator,
    higher_order_score,
    measure_valued_grad,
    pathwise_grad,
    pathwise_implicit_grad,
    rejection_reparam_grad,
    score_function_grad,
    weak_reparam_grad,
)
from .measures import (
    Bernoulli,
    DiagGaussian,
    DoubleSidedMaxwell,
    Erlang,
    Exponential,
    Gamma,
    Gaussian,
    Measure,
    Poisson,
    UniformSupport,
    WeakDerivativeTriple,
    Weibull,
    parse_measure,
)
from .oracle import (
    OracleResult,
    empirical_variance,
    gradcheck,
    mc_crn_fd_gradient,
    oracle_gradient,
    quadrature_expectation,
)
from .rng import RngStream
from .variance_reduction import (
    ControlVariate,
    DegenerateControlWarning,
    coupled_triple_samples,
    delta_cv_pathwise,
    delta_cv_score_function,
    linear_cv_estimate,
    multiplicative_cv_estimate,
    optimal_beta,
    taylor_control_variate,
)

__version__ = "0.1.0"
