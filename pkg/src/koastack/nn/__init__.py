from .estimator import CNNClassifier
from .loss import LossSpec, output_grad, per_sample_loss, weighted_ce
from .model import EVAL, TRAIN, Network, backward, forward
from .optim import OptimizerState, sgd_momentum_step
from .train import HISTORY_COLUMNS, NumericError, TrainConfig, grad_check, predict_proba, train

__all__ = [
    "CNNClassifier", "LossSpec", "Network", "OptimizerState", "TrainConfig", "NumericError",
    "forward", "backward", "weighted_ce", "per_sample_loss", "output_grad", "sgd_momentum_step",
    "train", "predict_proba", "grad_check", "TRAIN", "EVAL", "HISTORY_COLUMNS",
]
