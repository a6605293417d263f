"""Group activity prediction from partial observations.

The pipeline summarizes the observed frames of a multi-agent clip through
relation-graph convolutions, then progressively anticipates future group
features and agent positions over several unrolling stages before
classifying.  A synthetic behavior simulator and an evaluation harness
round out the package.
"""

from .autodiff import (ParamStore, Tensor, backward, finite_diff_check, matmul,
                       mse, no_grad, relu, softmax_rows)
from .decoder import (ActivityAEParams, AnticipationRollout, PositionAEParams,
                      activity_step, aggregate, position_step, stage_times, unroll)
from .encoder import EncodedObservation, EncoderParams, encode, stgcn_layer
from .errors import DataError, NumericError, ShapeError, SramError, UsageError
from .evaluation import (PositionMetrics, RatioSweepResult, ablate, evaluate,
                         position_metrics)
from .graphs import RelationGraphs, action_graph, position_graph
from .model import ModelConfig, RecognitionModel, SramModel
from .synthetic import (CLASS_NAMES, Clip, Dataset, DatasetSpec, featurize,
                        generate_dataset, load_dataset, simulate_clip)
from .training import (FitHistory, LossBundle, TrainConfig, fit, loss_cls,
                       loss_gan, loss_rec, loss_reg, recognition_targets,
                       train_recognition, train_step)

__version__ = "0.1.0"

__all__ = [
    "ActivityAEParams", "AnticipationRollout", "CLASS_NAMES", "Clip", "DataError",
    "Dataset", "DatasetSpec", "EncodedObservation", "EncoderParams", "FitHistory",
    "LossBundle", "ModelConfig", "NumericError", "ParamStore", "PositionAEParams",
    "PositionMetrics", "RatioSweepResult", "RecognitionModel", "RelationGraphs",
    "ShapeError", "SramError", "SramModel", "Tensor", "TrainConfig", "UsageError",
    "ablate", "action_graph", "activity_step", "aggregate", "backward", "encode",
    "evaluate", "featurize", "finite_diff_check", "fit", "generate_dataset",
    "load_dataset", "loss_cls", "loss_gan", "loss_rec", "loss_reg", "matmul",
    "mse", "no_grad", "position_graph", "position_metrics", "position_step",
    "recognition_targets", "relu", "simulate_clip", "softmax_rows", "stage_times",
    "stgcn_layer", "train_recognition", "train_step", "unroll",
]
