"""Shared ray-budget machinery: pick supervision rays on a rescaled grid
and evaluate the combined loss through decoders and the volume renderer.

Pose may be supplied either as a fixed box (training: rays are constants)
or as tape tensors for a pose delta (test-time optimization: gradients
flow into rotation/translation through the point positions).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from PIL import Image

from objrf.geometry import ObjectBox, pixel_rays
from objrf.renderer import composite, sample_windows
from objrf.tape import Tensor, concat
from objrf.training.losses import loss_occ, loss_rgb
from objrf.training.sample import TrainSample


@dataclass
class RayBudget:
    """The sample's supervision grid rescaled to the render budget."""

    dirs: np.ndarray        # [N, 3] unit camera-space directions
    labels: np.ndarray      # [N] in {+1, -1} (unknowns never selected)
    colors: np.ndarray      # [N, 3] target colors (valid for label +1)
    n_candidates: int


def budget_grid(sample: TrainSample, budget_hw: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Resize crop/mask to the training budget; returns (colors, labels, dirs)."""
    bh, bw = budget_hw
    h, w = sample.crop.shape[:2]
    if (h, w) != (bh, bw):
        img = Image.fromarray((np.clip(sample.crop, 0, 1) * 255).astype(np.uint8))
        colors = np.asarray(img.resize((bw, bh), Image.BILINEAR), dtype=np.float64) / 255.0
        # nearest-neighbor indexing keeps the trinary labels exact
        iy = np.minimum(((np.arange(bh) + 0.5) * h / bh).astype(int), h - 1)
        ix = np.minimum(((np.arange(bw) + 0.5) * w / bw).astype(int), w - 1)
        labels = sample.mask.labels[np.ix_(iy, ix)]
    else:
        colors = np.asarray(sample.crop, dtype=np.float64)
        labels = sample.mask.labels
    cam = sample.camera.scaled(bw / w, bh / h)
    ys, xs = np.mgrid[0:bh, 0:bw]
    coords = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
    dirs = pixel_rays(cam, coords)
    return colors.reshape(-1, 3), labels.reshape(-1), dirs


def select_rays(
    sample: TrainSample,
    budget_hw: Tuple[int, int],
    n_rays: int,
    rng: np.random.Generator,
    min_bg_frac: float = 0.25,
) -> Optional[RayBudget]:
    """Draw supervision rays from labeled pixels whose rays hit the cube.

    Background rays get at least ``min_bg_frac`` of the batch when that
    many exist. Returns None when no foreground pixel is usable (caller
    skips the sample).
    """
    colors, labels, dirs = budget_grid(sample, budget_hw)
    from objrf.geometry import object_rays

    _, _, _, windows = object_rays(sample.box, np.zeros_like(dirs), dirs)
    hit = np.array([w is not None for w in windows])
    fg = np.flatnonzero((labels == 1) & hit)
    bg = np.flatnonzero((labels == -1) & hit)
    if fg.size == 0:
        return None
    n_bg = min(bg.size, int(round(min_bg_frac * n_rays)))
    n_fg = n_rays - n_bg
    pick_fg = rng.choice(fg, size=n_fg, replace=fg.size < n_fg)
    picked = [pick_fg]
    if n_bg > 0:
        picked.append(rng.choice(bg, size=n_bg, replace=False))
    idx = np.concatenate(picked)
    return RayBudget(
        dirs=dirs[idx],
        labels=labels[idx].astype(np.int8),
        colors=colors[idx],
        n_candidates=int(fg.size + bg.size),
    )


@dataclass
class LossParts:
    total: Tensor
    rgb: Optional[Tensor]
    occ: Optional[Tensor]
    n_rgb: int
    n_occ: int


def _render_fixed_pose(
    shape_dec,
    color_dec,
    shape_code: Tensor,
    app_code: Tensor,
    box: ObjectBox,
    dirs: np.ndarray,
    labels: np.ndarray,
    n_samples: int,
):
    """Returns (pred rgb fg, alpha fg, alpha bg, fg_mask, bg_mask) or None."""
    from objrf.geometry import object_rays

    o_n, d_n, _, windows = object_rays(box, np.zeros_like(dirs), dirs)
    hit = np.array([w is not None for w in windows])
    fg = (labels == 1) & hit
    bg = (labels == -1) & hit
    if not fg.any():
        return None
    dtype = shape_dec.w_in.data.dtype

    def run(mask: np.ndarray, with_color: bool):
        idx = np.flatnonzero(mask)
        win = np.asarray([windows[i] for i in idx], dtype=np.float64)
        t, delta = sample_windows(win, n_samples)
        pts = o_n[idx][:, None, :] + t[:, :, None] * d_n[idx][:, None, :]
        pts_t = Tensor(pts.reshape(-1, 3).astype(dtype))
        if with_color:
            dirs_t = Tensor(np.repeat(d_n[idx], n_samples, axis=0).astype(dtype))
            density, features = shape_dec(shape_code, pts_t)
            rgb = color_dec(app_code, features, pts_t, dirs_t)
            return composite(density.reshape(len(idx), n_samples), rgb, delta, t)
        density, _ = shape_dec(shape_code, pts_t)
        return composite(density.reshape(len(idx), n_samples), None, delta, t)

    rgb_fg, alpha_fg, _ = run(fg, with_color=True)
    alpha_bg = None
    if bg.any():
        _, alpha_bg, _ = run(bg, with_color=False)
    return rgb_fg, alpha_fg, alpha_bg, fg, bg


def _render_tape_pose(
    shape_dec,
    color_dec,
    shape_code: Tensor,
    app_code: Tensor,
    box: ObjectBox,
    rot_delta: Tensor,
    trans_delta: Tensor,
    dirs: np.ndarray,
    labels: np.ndarray,
    n_samples: int,
):
    """Pose-differentiable variant: windows are recomputed from the current
    (detached) pose each call, while point positions stay differentiable
    w.r.t. the pose delta."""
    from objrf.training.tto import compose_box, rodrigues

    r_delta = rodrigues(rot_delta)
    dtype = shape_dec.w_in.data.dtype
    r0 = Tensor(box.pose.matrix.astype(dtype))
    r_total = r0 @ r_delta  # local rotation increment
    t_total = Tensor(box.pose.translation.astype(dtype)) + trans_delta
    inv_size = Tensor((1.0 / box.size).astype(dtype))

    cur_box = compose_box(box, rot_delta.data, trans_delta.data)
    from objrf.geometry import object_rays

    _, _, _, windows = object_rays(cur_box, np.zeros_like(dirs), dirs)
    hit = np.array([w is not None for w in windows])
    fg = (labels == 1) & hit
    bg = (labels == -1) & hit
    if not fg.any():
        return None

    def run(mask: np.ndarray, with_color: bool):
        idx = np.flatnonzero(mask)
        n = len(idx)
        win = np.asarray([windows[i] for i in idx], dtype=np.float64)
        d_np = dirs[idx].astype(dtype)
        o_t = ((Tensor(np.zeros_like(d_np)) - t_total) @ r_total) * inv_size
        d_raw = (Tensor(d_np) @ r_total) * inv_size
        speed = (d_raw * d_raw).sum(axis=1, keepdims=True).sqrt()
        d_t = d_raw / speed
        # windows were computed for the unit-speed NOCS ray of the current pose
        t, delta = sample_windows(win, n_samples)
        t_c = np.asarray(t, dtype=dtype)[:, :, None]
        o3 = o_t.reshape(n, 1, 3).broadcast_to((n, n_samples, 3))
        d3 = d_t.reshape(n, 1, 3).broadcast_to((n, n_samples, 3))
        pts_t = (o3 + d3 * t_c).reshape(n * n_samples, 3)
        if with_color:
            dirs_t = d3.reshape(n * n_samples, 3)
            density, features = shape_dec(shape_code, pts_t)
            rgb = color_dec(app_code, features, pts_t, dirs_t)
            return composite(density.reshape(n, n_samples), rgb, delta, t)
        density, _ = shape_dec(shape_code, pts_t)
        return composite(density.reshape(n, n_samples), None, delta, t)

    rgb_fg, alpha_fg, _ = run(fg, with_color=True)
    alpha_bg = None
    if bg.any():
        _, alpha_bg, _ = run(bg, with_color=False)
    return rgb_fg, alpha_fg, alpha_bg, fg, bg


def sample_loss(
    shape_dec,
    color_dec,
    shape_code: Tensor,
    app_code: Tensor,
    box: ObjectBox,
    rays: RayBudget,
    n_samples: int,
    occ_lambda: float,
    rot_delta: Optional[Tensor] = None,
    trans_delta: Optional[Tensor] = None,
) -> Optional[LossParts]:
    """Combined loss L_rgb + lambda * L_occ over the selected rays."""
    if rot_delta is None:
        rendered = _render_fixed_pose(
            shape_dec, color_dec, shape_code, app_code, box, rays.dirs, rays.labels, n_samples
        )
    else:
        rendered = _render_tape_pose(
            shape_dec, color_dec, shape_code, app_code, box,
            rot_delta, trans_delta, rays.dirs, rays.labels, n_samples,
        )
    if rendered is None:
        return None
    rgb_fg, alpha_fg, alpha_bg, fg, bg = rendered
    l_rgb = loss_rgb(rgb_fg, rays.colors[fg])
    if alpha_bg is not None:
        alphas = concat([alpha_fg, alpha_bg], axis=0)
        occ_labels = np.concatenate([rays.labels[fg], rays.labels[bg]])
    else:
        alphas = alpha_fg
        occ_labels = rays.labels[fg]
    l_occ = loss_occ(alphas, occ_labels)
    total = l_rgb + occ_lambda * l_occ
    return LossParts(
        total=total,
        rgb=l_rgb,
        occ=l_occ,
        n_rgb=int(fg.sum()),
        n_occ=int(fg.sum() + bg.sum()),
    )
