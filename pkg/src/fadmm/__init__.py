"""Market making with a mean-reverting fad component.

Library layout:

* params      - parameter/state/quote types and flat-config serialization
* model       - arrival intensities, payoff, informed-intensity calibration
* solvers     - closed-form quote coefficients (FI / PI / CJP)
* filters     - Kalman-Bucy filter, particle-filter oracle, CTMC arrival filter
* hjb_fd      - finite-difference validation of the closed-form quotes
* sim         - path simulation and common-random-number Monte Carlo
* experiments - CSV-producing pipelines behind the `fadmm` CLI
"""

__version__ = "0.1.0"

from .params import ConfigError, MarketState, ModelParams, NumericError, Quote
from .model import (calibrate_psi, calibrated_params, expected_exp_fad,
                    fundamental_price, intensity_ask, intensity_bid,
                    performance)
from .solvers import (StrategyCoefficients, cjp_kappa, quote,
                      riccati_a_closed_form, solve_cjp_coefficients,
                      solve_fi_coefficients, solve_pi_coefficients)
from .filters import (CtmcFilter, FilterState, VarianceCurve,
                      ctmc_filter_step, ctmc_posteriors, kalman_step,
                      make_ctmc_filter, particle_filter_oracle,
                      solve_variance_curve)
from .hjb_fd import GridSpec, ValueGrid, fd_quotes, solve_hjb_fd
from .sim import (McStats, PathRecord, Strategy, make_cjp_strategy,
                  make_fi_strategy, make_fixed_strategy, make_pi_strategy,
                  misspecified_quote_source, monte_carlo, simulate_path,
                  simulate_series)

__all__ = [
    "ConfigError", "NumericError", "ModelParams", "MarketState", "Quote",
    "intensity_ask", "intensity_bid", "fundamental_price", "performance",
    "expected_exp_fad", "calibrate_psi", "calibrated_params",
    "StrategyCoefficients", "riccati_a_closed_form", "solve_fi_coefficients",
    "solve_pi_coefficients", "solve_cjp_coefficients", "cjp_kappa", "quote",
    "FilterState", "VarianceCurve", "solve_variance_curve", "kalman_step",
    "particle_filter_oracle", "CtmcFilter", "make_ctmc_filter",
    "ctmc_filter_step", "ctmc_posteriors",
    "GridSpec", "ValueGrid", "solve_hjb_fd", "fd_quotes",
    "Strategy", "PathRecord", "McStats", "make_fi_strategy",
    "make_pi_strategy", "make_cjp_strategy", "make_fixed_strategy",
    "misspecified_quote_source", "simulate_path", "simulate_series",
    "monte_carlo",
]
