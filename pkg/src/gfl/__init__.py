"""Graph few-shot learning: meta-trained node encoders with graph-structured
prototypes and a hierarchy-driven gate, on a small numpy autodiff engine."""

from .graph import Graph, SimilarityConfig, build_relational_structure, label_propagation
from .models import ModelParams, load_checkpoint, save_checkpoint
from .taskgen import FamilyConfig, generate_family, load_family, save_family
from .trainer import TrainConfig, evaluate, forward_episode, sample_episode, train

__version__ = "0.1.0"

__all__ = [
    "FamilyConfig", "Graph", "ModelParams", "SimilarityConfig", "TrainConfig",
    "build_relational_structure", "evaluate", "forward_episode", "generate_family",
    "label_propagation", "load_checkpoint", "load_family", "sample_episode", "save_checkpoint",
    "save_family", "train",
]
