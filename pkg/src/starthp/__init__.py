"""Star decentralized Tomlinson-Harashima precoding for hybrid ISAC transmitters."""

from .estimators import CZFPrecoder, StarTHPPrecoder, THPPrecoder, make_precoder
from .exceptions import (
    ConfigParseError, ConfigurationError, DegenerateGeometryError, SingularChannelError,
)
from .flops import Algorithm, flops, flops_exact, reduction_percentages
from .harness import Experiment, ExperimentConfig, ResultRow, run_experiment
from .metrics import crb, mui_power, sum_rate
from .precoders import (
    HybridPrecoder, LinearPrecoder, ThpFilters, hybrid_decompose, thp_mmse_filters,
    thp_zf_filters,
)
from .star import MessageLog, run_star_round
from .system import ChannelSet, SensingScene, SystemConfig, gen_rayleigh_channels

__version__ = "0.1.0"

__all__ = [
    "Algorithm", "ChannelSet", "ConfigParseError", "ConfigurationError", "CZFPrecoder",
    "DegenerateGeometryError", "Experiment", "ExperimentConfig", "HybridPrecoder",
    "LinearPrecoder", "MessageLog", "ResultRow", "SensingScene", "SingularChannelError",
    "StarTHPPrecoder", "SystemConfig", "THPPrecoder", "ThpFilters", "crb", "flops",
    "flops_exact", "gen_rayleigh_channels", "hybrid_decompose", "make_precoder",
    "mui_power", "reduction_percentages", "run_experiment", "run_star_round", "sum_rate",
    "thp_mmse_filters", "thp_zf_filters",
]
