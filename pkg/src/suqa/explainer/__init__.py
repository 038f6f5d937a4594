"""Toy abstractive explainer: model, losses and training loops."""

from suqa.explainer.losses import (
    EncodedInput,
    TrainingBatch,
    encode_input,
    encode_target,
    joint_loss,
    loss_ml,
    loss_rl,
)
from suqa.explainer.model import ExplainerModel, ModelConfig, Vocab
from suqa.explainer.training import (
    evaluate_explainer,
    mean_nll,
    EarlyStopping,
    Example,
    RLRunConfig,
    TrainConfig,
    build_vocab,
    make_example,
    train_rl,
    train_step_joint,
    train_supervised,
    training_examples,
)

__all__ = [
    "EarlyStopping",
    "EncodedInput",
    "Example",
    "ExplainerModel",
    "ModelConfig",
    "RLRunConfig",
    "TrainConfig",
    "TrainingBatch",
    "Vocab",
    "build_vocab",
    "encode_input",
    "encode_target",
    "evaluate_explainer",
    "joint_loss",
    "loss_ml",
    "loss_rl",
    "make_example",
    "mean_nll",
    "train_rl",
    "train_step_joint",
    "train_supervised",
    "training_examples",
]
