"""Backbone, synthetic data, training, and prediction."""
from evidentia.model.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from evidentia.model.network import Model, ModelConfig, forward, init_model
from evidentia.model.synthetic import (
    CORRUPTIONS,
    Dataset,
    Split,
    SyntheticSpec,
    corrupt,
    generate_dataset,
    inverse_grade,
    load_dataset,
    load_split,
    save_dataset,
)
from evidentia.model.training import (
    TrainConfig,
    grade_from_gamma,
    predict,
    predict_arrays,
    records_for,
    train,
)

__all__ = [
    "CORRUPTIONS", "Checkpoint", "Dataset", "Model", "ModelConfig", "Split", "SyntheticSpec",
    "TrainConfig", "corrupt", "forward", "generate_dataset", "grade_from_gamma", "init_model",
    "inverse_grade", "load_checkpoint", "load_dataset", "load_split", "predict", "predict_arrays",
    "records_for", "save_checkpoint", "save_dataset", "train",
]
