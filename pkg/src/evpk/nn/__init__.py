from .tensor import (
    ShapeError,
    Tensor,
    activation,
    backward,
    batchnorm,
    build_tape,
    concat,
    conv2d,
    cosine_similarity,
    matmul,
    max_reduce,
    pointwise_conv,
    relu,
    scatter_max,
    sigmoid,
    softmax,
    tanh,
    upsample_nearest2x,
)
from .layers import BatchNorm, Conv2d, Module, Parameter, Pointwise
from .optim import AdamState, OptimizerError, adam_step, cosine_lr
from .gradcheck import GradcheckReport, gradcheck
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
