from .config import (BASE, DESK, LARGE, ConfigError, EncoderConfig, TrainConfig,
                     parameter_count, parameter_shapes)
from .functional import AttentionMaskError, attention_weights, self_attention
from .gradcheck import GradCheckResult, grad_check
from .model import (EncoderModel, ForwardOutput, LossError, MLMOutput, SequenceLengthError,
                    VocabRangeError, forward, init_model, mlm_forward, predict_logits)
from .train import (EpochRecord, TrainingDivergedError, pretrain_mlm, read_history,
                    train_classifier)
from .weights import ConfigMismatchError, WeightFormatError, load_weights, save_weights

__all__ = [
    "BASE", "DESK", "LARGE", "ConfigError", "EncoderConfig", "TrainConfig",
    "parameter_count", "parameter_shapes", "AttentionMaskError", "attention_weights",
    "self_attention", "GradCheckResult", "grad_check", "EncoderModel", "ForwardOutput",
    "LossError", "MLMOutput", "SequenceLengthError", "VocabRangeError", "forward",
    "init_model", "mlm_forward", "predict_logits", "EpochRecord", "TrainingDivergedError",
    "pretrain_mlm", "read_history", "train_classifier", "ConfigMismatchError",
    "WeightFormatError", "load_weights", "save_weights",
]
