"""Model-free superhedging prices and martingale optimal transport on finite grids."""
from .coupling import GridCoupling, best_gain, drift_profile, expectation, in_Pi, is_martingale, marginal_of, rho
from .marginals import DiscreteMarginal, check_convex_order, load_marginals
from .payoff import PayoffSpec, growth_constant, truncate, truncation_error_bound
from .pricing import (
    Instance,
    PriceReport,
    SemiStaticStrategy,
    SolverOptions,
    constrained_dual_price,
    dual_price,
    penalized_primal_price,
    primal_price,
    sweep_bounds,
    tildeP_estimate,
    verify_superhedge,
)

__version__ = "0.1.0"
