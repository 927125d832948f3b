from .autodiff import NumericsError, Tensor, backward
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_checkpoint_vocabulary,
    read_checkpoint_header,
    save_checkpoint,
)
from .features import ExternalFeatures, load_external_features
from .model import (
    ModelConfig,
    ParameterStore,
    bce_loss,
    encode_document,
    encode_sentence,
    init_params,
    score_sentences,
)
from .optim import OptimizerState, apply_update

__all__ = [
    "CheckpointError",
    "ExternalFeatures",
    "ModelConfig",
    "NumericsError",
    "OptimizerState",
    "ParameterStore",
    "Tensor",
    "apply_update",
    "backward",
    "bce_loss",
    "encode_document",
    "encode_sentence",
    "init_params",
    "load_checkpoint",
    "load_checkpoint_vocabulary",
    "load_external_features",
    "read_checkpoint_header",
    "save_checkpoint",
    "score_sentences",
]
