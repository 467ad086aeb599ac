"""Reverse-mode automatic differentiation over dense numpy-backed tensors.

Everything differentiable in this package (decoders, encoder, renderer,
losses, test-time optimization) is expressed through :class:`Tensor`.
"""

from objrf.tape.tensor import (
    Tensor,
    concat,
    default_dtype,
    finite_checks,
    no_grad,
    set_default_dtype,
    tensor,
    use_dtype,
)
from objrf.tape.gradcheck import grad_check
from objrf.tape.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor",
    "tensor",
    "concat",
    "default_dtype",
    "set_default_dtype",
    "use_dtype",
    "no_grad",
    "finite_checks",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]
