"""From-scratch 3D convolutional classifier."""

from .layers import BatchNorm3d, Conv3d, DegenerateBatch, Dense, Flatten, MaxPool3d, ShapeMismatch, conv_padding
from .network import (
    NORMAL_KERNELS,
    OCCUPANCY_KERNELS,
    FormatError,
    Network,
    NoConvLayer,
    build_network,
    first_layer_feature_maps,
    load_network,
    save_network,
    sigmoid,
)
from .training import (
    AdadeltaState,
    ConfusionMatrix,
    EmptySplit,
    EpochStats,
    TrainConfig,
    TrainResult,
    adadelta_step,
    bce_logit_grad,
    bce_loss,
    bce_loss_grad,
    evaluate,
    train,
    train_step,
)

__all__ = [name for name in dir() if not name.startswith("_")]
