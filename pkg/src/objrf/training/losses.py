"""Photometric and occupancy losses over selected rays."""

from __future__ import annotations

import numpy as np

from objrf.tape import Tensor

ALPHA_EPS = 1e-6


def loss_rgb(preds: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over pixels of the squared L2 color error.

    ``preds`` is [N, 3] rendered colors for foreground pixels whose rays
    hit the cube; ``targets`` the matching crop colors.
    """
    if preds.shape[0] == 0:
        raise ValueError("loss_rgb over an empty pixel set")
    diff = preds - np.asarray(targets, dtype=preds.data.dtype)
    return (diff * diff).sum(axis=1).mean()


def loss_occ(bg_alphas: Tensor, labels: np.ndarray) -> Tensor:
    """-mean log[Y (1/2 - alpha) + 1/2] over foreground/background pixels.

    Evaluates to -log(1 - alpha) for Y=+1 and -log(alpha) for Y=-1; the
    alpha is clamped to [eps, 1-eps] since the loss is unbounded at {0,1}.
    """
    y = np.asarray(labels, dtype=bg_alphas.data.dtype)
    if bg_alphas.shape[0] == 0:
        raise ValueError("loss_occ over an empty pixel set")
    if not np.all(np.abs(y) == 1):
        raise ValueError("loss_occ labels must be +1 or -1")
    a = bg_alphas.clamp(ALPHA_EPS, 1.0 - ALPHA_EPS)
    inner = a * (-y) + (0.5 + 0.5 * y)
    return -(inner.log().mean())
