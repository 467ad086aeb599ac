"""Central-difference gradient verification for scalar functions of a tensor."""

from __future__ import annotations

from typing import Callable

import numpy as np

from objrf.tape.tensor import Tensor, finite_checks


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central| / max(1, |central|).

    ``x`` must be float64; the analytic gradient comes from one backward
    pass, the reference from central differences evaluated per coordinate.
    """
    if x.data.dtype != np.float64:
        raise ValueError("grad_check requires a float64 tensor")
    with finite_checks():
        x.zero_grad()
        out = f(x)
        if out.size != 1:
            raise ValueError("grad_check requires a scalar-valued function")
        out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    with finite_checks():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f(x).item()
            flat[i] = orig - eps
            f_minus = f(x).item()
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * eps)
    numeric = numeric.reshape(x.shape)
    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
