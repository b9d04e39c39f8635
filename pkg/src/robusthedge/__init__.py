"""Hedging and pricing under small volatility-uncertainty aversion.

First- and second-order cash equivalents of option books under a penalised
family of volatilities, their Monte Carlo oracles, a hedging-game simulator,
uncertain-volatility comparisons and static hedging with liquid options.
"""

from .errors import (AdmissibilityError, ConfigError, DomainError, NumericError,
                     RobustHedgeError, ValidationError)
from .model import (Book, DomainBounds, PenaltySpec, UtilitySpec, make_knockout_call,
                    make_smooth_call, make_smooth_put, quadratic_penalty, scale_payoff, taper_vol,
                    validate_assumptions)
from .grid import GridField, GridSpec, auto_grid, make_grid
from .reference import GreeksField, price_any, price_reference
from .cashequiv import cash_equivalent_bundle, compute_w_tilde, indifference_prices

__version__ = "0.1.0"
