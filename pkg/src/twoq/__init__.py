"""Stationary laws and heavy-traffic limits of controlled two-sided queues."""

from .chain import (
    ArrivalFamily,
    ArrivalModel,
    ChainKind,
    ChainSpec,
    DiscreteDistribution,
    anti_concentration_bound,
    apply_arrivals,
    central_mass,
    exact_stationary_bernoulli,
    exact_stationary_single_server_bernoulli,
    exact_stationary_truncated,
    moment_bound,
    simulate_empirical,
    stationarity_residual,
    transition_kernel,
)
from .limits import (
    Exponential,
    GFactor,
    Gibbs,
    Hybrid,
    Laplace,
    LimitLaw,
    UniformOnSet,
    gibbs_law,
    gibbs_plus_law,
    hybrid_cdf,
    hybrid_mgf,
    hybrid_pdf,
    laplace_cdf,
    laplace_law,
    limit_law_for,
    one_sided_hybrid_cdf,
    phi_star,
)
from .pricing import (
    ConditionError,
    ConditionWarning,
    PricingCurvePair,
    RegimeClass,
    RegimeInconclusive,
    RegimeLabel,
    ScalingPoint,
    Smoothness,
    check_negative_drift,
    check_symmetry,
    classify_regime,
    knot_curves,
    tanh_curves,
    tanh_single_server_curves,
    two_price_curves,
    two_price_single_server_curves,
    zero_curves,
)
from .singleq import single_server_limit, single_server_spec, unused_service_rate
from .verify import (
    ConvergenceReport,
    ScaledSample,
    Scaling,
    StepCDF,
    Verdict,
    functional_residual,
    ks_distance,
    scaled_law,
    stationary_law,
    sweep,
)

__version__ = "0.1.0"
