"""Exactly solved link-set prediction instances, CAM-token conditioned predictors and edge diffusion."""

from .autodiff import Tensor, no_grad
from .conditioning import ConditionerConfig
from .dataset import Instance, generate_dataset, load_records
from .diffusion import build_schedule, sample_reverse
from .metrics import MetricsReport, evaluate
from .models import GraphVAE, LinkPredictor, ModelConfig, make_features
from .solver import brute_force_oracle, solve_exact

__version__ = "0.1.0"

__all__ = [
    "ConditionerConfig",
    "GraphVAE",
    "Instance",
    "LinkPredictor",
    "MetricsReport",
    "ModelConfig",
    "Tensor",
    "brute_force_oracle",
    "build_schedule",
    "evaluate",
    "generate_dataset",
    "load_records",
    "make_features",
    "no_grad",
    "sample_reverse",
    "solve_exact",
]
