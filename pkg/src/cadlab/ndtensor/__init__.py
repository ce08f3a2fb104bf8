from .checkpoint import CheckpointError, digest, dumps, load, loads, save
from .optim import (
    LrSchedule,
    NonFiniteGradientError,
    OptimizerState,
    ema_update,
    init_optimizer,
    lr_at,
    optimizer_step,
    trust_ratio,
)
from .tensor import (
    Tensor,
    UntrackedParameterWarning,
    as_tensor,
    concat,
    cos,
    exp,
    gather_rows,
    grad,
    sigmoid,
    silu,
    sin,
    sqrt,
    tanh,
)
