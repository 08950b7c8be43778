"""Sequel-aware heterogeneous graph recommender built on a small numpy autograd core."""

from .data import Dataset, SyntheticConfig, generate_synthetic, leave_one_out
from .evaluation import EvalConfig, RankingReport, evaluate
from .graph import SequelAwareGraph, Series, build_graph
from .model import ModelConfig, forward, init_params
from .sampling import SamplingConfig, sample_subgraph
from .training import TrainConfig, train

__all__ = [
    "Dataset", "EvalConfig", "ModelConfig", "RankingReport", "SamplingConfig", "SequelAwareGraph",
    "Series", "SyntheticConfig", "TrainConfig", "build_graph", "evaluate", "forward",
    "generate_synthetic", "init_params", "leave_one_out", "sample_subgraph", "train",
]
__version__ = "0.1.0"
