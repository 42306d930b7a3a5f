"""Lightweight multi-task CNN for joint age and gender classification.

Depthwise separable blocks with width multipliers, a shared trunk with two
softmax heads, ten-crop inference, and a small training harness. Kernels
run through a compiled extension when available, numpy otherwise.
"""
from . import kernels
from .cost import network_cost, param_count, speedup_ratio
from .model_io import load_model, save_model
from .network import ModelParams, NetworkConfig, Prediction, build_lmtcnn, forward, predict
from .pipeline import kfold_split, oversample, predict_oversampled, synth_dataset
from .tensor import Rng
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ModelParams", "NetworkConfig", "Prediction", "Rng", "TrainConfig",
    "build_lmtcnn", "evaluate", "forward", "kernels", "kfold_split", "load_model",
    "network_cost", "oversample", "param_count", "predict", "predict_oversampled",
    "save_model", "speedup_ratio", "synth_dataset", "train",
]
