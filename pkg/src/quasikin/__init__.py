"""Simulation and rate inference for quasi-reaction systems."""

__version__ = "0.1.0"

from .network import (  # noqa: F401
    ReactionNetwork,
    LogRates,
    Trajectory,
    hazard,
    interval_rates,
    build_sir,
    parse_network,
)
from .gillespie import EventRecord, simulate, observe, subsample_by_jump, interval_counts  # noqa: F401
from .ekf import FilterConfig, FilterState, filter_pass  # noqa: F401
from .em import EmConfig, FitResult, em_fit, bic  # noqa: F401
from .lla import LlaConfig, lla_fit, lla_loglik  # noqa: F401
from .systems import builtin_systems, get_system  # noqa: F401
