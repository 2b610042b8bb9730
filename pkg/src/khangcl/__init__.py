"""KAN-based graph contrastive learning with CKFI hard negatives."""

from .bspline import SplineGrid
from .ckfi import CkfiScores, ckfi_scores
from .errors import ConfigError, ConvergenceError, DataError, KhanError, ShapeError
from .graphs import Graph, GraphBatch, parse_tu_dataset
from .kan import KanLayer
from .train import TrainConfig, pretrain

__version__ = "0.1.0"
