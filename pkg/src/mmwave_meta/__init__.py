"""SINR meta distribution of K-tier mmWave networks with Geo/G/1 traffic.

Analytic moments of the conditional success probability, Gil-Pelaez and
beta-matched meta distributions, the queue-coupled activity fixed point and
a spatio-temporal Monte Carlo simulator to check them against.
"""

from .geometry import LinkState, association_probability, association_table
from .metadist import (BetaParams, FixedPointState, MetaDistribution, beta_match, bound_meta, gil_pelaez,
                       gil_pelaez_ccdf, mean_active_probability, solve_fixed_point, user_count_pmf, user_counts,
                       variance_conditional_stp)
from .model import (AntennaPattern, ChannelParams, ConfigError, NetworkModel, TierParams, TrafficParams,
                    build_model, derive_antenna, load_config, table_one, validate)
from .moments import (MomentResult, conditional_stp_moment, generalized_binomial, laplace_interference,
                      network_moments, tier_moments, total_moment)

__version__ = "0.1.0"
