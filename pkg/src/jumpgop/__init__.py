"""Growth optimal portfolios and supermartingale deflators in jump-diffusion markets."""

from .deflator import analytic_deflator_expectation, closed_form_deflator, solve_unique_deflator
from .errors import (IllConditioned, InadmissibleStrategy, InadmissibleVolatility, InsufficientPaths,
                     JumpGopError, NoGop, SpecError, UnsupportedConstraint)
from .gop import (constrained_optimal_volatilities, gop_fractions, growth_rate, optimal_growth_rate,
                  optimal_volatilities, solve_gop)
from .market import MarketSpec, classify_regime, market_price_of_risk, validate_market
from .montecarlo import (estimate_terminal_expectation, growth_dominance_test, log_wealth_comparison,
                         supermartingale_sweep)
from .paths import Strategy, simulate_deflator, simulate_gop, simulate_path, simulate_portfolio

__all__ = [
    "IllConditioned", "InadmissibleStrategy", "InadmissibleVolatility", "InsufficientPaths", "JumpGopError",
    "MarketSpec", "NoGop", "SpecError", "Strategy", "UnsupportedConstraint",
    "analytic_deflator_expectation", "classify_regime", "closed_form_deflator", "constrained_optimal_volatilities",
    "estimate_terminal_expectation", "gop_fractions", "growth_dominance_test", "growth_rate",
    "log_wealth_comparison", "market_price_of_risk", "optimal_growth_rate", "optimal_volatilities",
    "simulate_deflator", "simulate_gop", "simulate_path", "simulate_portfolio", "solve_gop",
    "solve_unique_deflator", "supermartingale_sweep", "validate_market",
]

__version__ = "0.1.0"
