from .base import (
    SingleClassError,
    TrainConfig,
    WidthMismatch,
    balanced_class_weights,
    load_model,
    predict_labels,
    predict_proba,
    save_model,
)
from .boosting import BoostedStumpsModel, train_boosted_stumps
from .isolation_forest import IsolationForestModel, score_isolation_forest, train_isolation_forest
from .neural import (
    CausalConvNet,
    DenseNet,
    DivergenceError,
    NeuralTrainConfig,
    SelfAttentionNet,
    ShapeMismatch,
    backward,
    forward,
    train,
)
from .svm import LinearSvmModel, train_linear_svm

__all__ = [
    "BoostedStumpsModel",
    "CausalConvNet",
    "DenseNet",
    "DivergenceError",
    "IsolationForestModel",
    "LinearSvmModel",
    "NeuralTrainConfig",
    "SelfAttentionNet",
    "ShapeMismatch",
    "SingleClassError",
    "TrainConfig",
    "WidthMismatch",
    "backward",
    "balanced_class_weights",
    "forward",
    "load_model",
    "predict_labels",
    "predict_proba",
    "save_model",
    "score_isolation_forest",
    "train",
    "train_boosted_stumps",
    "train_isolation_forest",
    "train_linear_svm",
]
