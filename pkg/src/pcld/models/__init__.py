from .classifier import (
    LayerFeatures,
    LayerSpec,
    LayeredClassifier,
    build_classifier,
    cross_entropy,
    forward,
    forward_from_layer,
    input_gradient,
    load_classifier,
    save_classifier,
)
from .training import TrainConfig, eval_accuracy, extract_layer_features, train_classifier

__all__ = [
    "LayerFeatures",
    "LayerSpec",
    "LayeredClassifier",
    "TrainConfig",
    "build_classifier",
    "cross_entropy",
    "eval_accuracy",
    "extract_layer_features",
    "forward",
    "forward_from_layer",
    "input_gradient",
    "load_classifier",
    "save_classifier",
    "train_classifier",
]
