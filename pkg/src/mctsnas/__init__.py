"""Monte Carlo tree search for neural architecture design, with a learned
accuracy predictor, reference baselines and a benchmark harness."""

__version__ = "0.1.0"

from .errors import SearchError
from .evaluators import SyntheticOracle, SyntheticOracleConfig, TabularBenchmark, load_tabular
from .mcts import MCTS, SearchConfig
from .space import SpaceLimits, decode, encode, enumerate_space
from .surrogate import Surrogate, TrainConfig

__all__ = [
    "MCTS",
    "SearchConfig",
    "SearchError",
    "SpaceLimits",
    "Surrogate",
    "SyntheticOracle",
    "SyntheticOracleConfig",
    "TabularBenchmark",
    "TrainConfig",
    "decode",
    "encode",
    "enumerate_space",
    "load_tabular",
]
