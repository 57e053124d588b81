"""Dense numpy tensors with reverse-mode autodiff, a finite-difference checker,
seeded random streams and the binary checkpoint format."""
from .checkpoint import CheckpointError
from .gradcheck import GradCheckResult, check_grad, finite_diff_grad, rel_error
from .rng import Rng
from .tensor import (
    Graph,
    Tensor,
    add,
    amax,
    backward,
    bce_with_logits,
    concat,
    cross_entropy,
    div,
    exp,
    gather,
    gelu,
    getitem,
    layer_norm,
    log,
    log_softmax,
    masked_fill,
    matmul,
    maximum,
    mean,
    minimum,
    mul,
    neg,
    recording,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    tabs,
    transpose,
    tsum,
)

__all__ = [name for name in dir() if not name.startswith("_")]
