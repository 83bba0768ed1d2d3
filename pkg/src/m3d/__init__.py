"""Manifold-aligned domain adaptation with an ensemble of pseudo-label rounds.

Pipeline: TCA reduction and geodesic flow kernel features, adaptive
marginal/conditional MMD alignment inside a graph-regularised kernel
classifier, and link-based consensus over the per-round target labels.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config, parse_config
from .data import DomainPair, FeatureDataset, load_dataset, make_loso_splits, synth_domain_shift
from .ensemble import BaseEnsemble, consensus
from .evaluation import ablation_matrix, run_protocol
from .learner import run_m3d

__all__ = [
    "PipelineConfig", "load_config", "parse_config", "DomainPair", "FeatureDataset",
    "load_dataset", "make_loso_splits", "synth_domain_shift", "BaseEnsemble", "consensus",
    "ablation_matrix", "run_protocol", "run_m3d",
]
