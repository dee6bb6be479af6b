"""Fusion of BSE images and sparse EDS spectra through graph attention networks."""

from .gat import GatNetwork, NetConfig, extract_image_logits, network_forward, predict
from .graph import EdgeList, MultimodalGraph, PointSet, assemble_graph
from .metrics import Metrics
from .synth import GeneratorConfig, PhaseSpec, SyntheticSample, generate_dataset
from .train import TrainConfig, evaluate, split_dataset, sweep_fractions, train

__version__ = "0.1.0"

__all__ = [
    "EdgeList",
    "GatNetwork",
    "GeneratorConfig",
    "Metrics",
    "MultimodalGraph",
    "NetConfig",
    "PhaseSpec",
    "PointSet",
    "SyntheticSample",
    "TrainConfig",
    "assemble_graph",
    "evaluate",
    "extract_image_logits",
    "generate_dataset",
    "network_forward",
    "predict",
    "split_dataset",
    "sweep_fractions",
    "train",
]
