from .checkpoint import load_checkpoint, save_checkpoint
from .layers import MLP, Conv1d, Linear, Module, ResBlock
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    conv1d,
    cross,
    debug_nan,
    default_dtype,
    gelu,
    get_default_dtype,
    l1_loss,
    l2sq_loss,
    matmul,
    maximum,
    mean,
    no_grad,
    norm,
    relu,
    set_default_dtype,
    softmax,
    sqrt,
    stack,
    stop_gradient,
    tabs,
    take_rows,
    tsum,
    where,
)
