"""Centroidal network: features, MLP, training and step prediction."""

from quadplan.surrogate.features import (N_FEATURES, N_TARGETS, decode_targets, encode_features,
                                         encode_targets, trajectory_rows)
from quadplan.surrogate.mlp import (MlpParams, adam_step, group_l1, init_params, mlp_backward,
                                    mlp_forward, softsign)
from quadplan.surrogate.predict import NetworkSource, predict_step
from quadplan.surrogate.train import (Dataset, SurrogateModel, TrainHyper, TrainingDiverged, TrainResult,
                                      compute_stats, train)

__all__ = [
    "N_FEATURES", "N_TARGETS", "decode_targets", "encode_features", "encode_targets", "trajectory_rows",
    "MlpParams", "adam_step", "group_l1", "init_params", "mlp_backward", "mlp_forward", "softsign",
    "NetworkSource", "predict_step", "Dataset", "SurrogateModel", "TrainHyper", "TrainingDiverged",
    "TrainResult", "compute_stats", "train",
]
