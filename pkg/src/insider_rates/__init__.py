"""Optimal log-utility investment with insider knowledge of a Gaussian short rate."""

__version__ = "0.1.0"

from .errors import (
    BoundViolation,
    ConfigError,
    DomainError,
    InsiderRatesError,
    NonConvergence,
    NonFinite,
    SingularTime,
)
from .stochastic_core import (
    GaussianLaw,
    RngStream,
    correlated_increments,
    gauss_hermite,
    mills_ratio_inverse,
    normal_cdf,
    normal_pdf,
    normal_sf,
    quadrature,
)
from .grid import PathGrid
from .affine_diffusion import (
    AffineModel,
    BridgeCondition,
    CoefficientFn,
    bridge_law,
    conditioned_coefficients,
    g_hat,
    simulate_rate,
    transition_law,
)
from .vasicek import (
    HalfLine,
    Interval,
    NoInfo,
    OUModel,
    Terminal,
    drift_correction,
    f_bar,
    f_hat,
    f_tilde,
    indicator_probability,
    ou_bridge_law,
    sample_indicator,
)
from .portfolio import (
    Filtration,
    MarketModel,
    QuadratureConfig,
    SimBatch,
    Strategy,
    analytic_log_utility,
    concavity_check,
    informed_weight,
    merton_weight,
    simulate_strategies,
    simulate_wealth,
    strategy_grid,
)
from .value_of_info import (
    DivergenceStudy,
    FinitenessCertificate,
    VoIReport,
    appendix_I,
    appendix_I_bar,
    finiteness_certificate,
    psi_function,
    psi_integral,
    value_of_information,
    variance_divergence,
)
