"""cdamarket: continuous double auction market simulator and analysis kit.

Seedable Monte Carlo simulation of a pairwise-matching double auction with
three trader strategies (constrained-random ZI, adaptive-margin ZIP,
belief-based GD), plus the statistical observables used to characterize
such markets: transaction-network degree distributions, anti-community
size distributions, trade time-interval distributions and normalized
return distributions.
"""

__version__ = "0.1.0"

from .errors import (CdaError, ConfigurationError, DegenerateSeriesError,
                     DomainError, FitError, InsufficientDataError,
                     NoEquilibriumError, SolverError, UndefinedModularityError)
from .market import (GdParams, MarketConfig, MarketInstance, ShoutEvent,
                     Trade, TradeLog, Trader, ZipParams, equilibrium,
                     generate_market, make_rng, match_step, replica_seed,
                     splitmix64)
from .engine import run, run_replicas, run_session

__all__ = [
    "CdaError", "ConfigurationError", "DegenerateSeriesError", "DomainError",
    "FitError", "InsufficientDataError", "NoEquilibriumError", "SolverError",
    "UndefinedModularityError",
    "GdParams", "MarketConfig", "MarketInstance", "ShoutEvent", "Trade",
    "TradeLog", "Trader", "ZipParams",
    "equilibrium", "generate_market", "make_rng", "match_step",
    "replica_seed", "splitmix64",
    "run", "run_replicas", "run_session",
    "__version__",
]
