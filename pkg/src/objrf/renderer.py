"""Bounded volume rendering of object-centric rays.

Rays are rendered only inside their cube window [a, b]. Sampling is
deterministic by default: midpoints of ``n_samples`` equal bins (optional
stratified jitter behind a seed). Compositing uses the exponential
quadrature form with weights expressed as transmittance differences
``w_i = T_i - T_{i+1}``, which makes ``sum(w) + bg_alpha = 1`` hold
exactly by telescoping.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from objrf.geometry import CameraIntrinsics, ObjectBox, ObjectRay, object_rays
from objrf.tape import Tensor, no_grad

DEPTH_WEIGHT_EPS = 1e-10


@dataclass
class RenderOutput:
    rgb: np.ndarray      # [3], in [0, 1]
    bg_alpha: float      # terminal transmittance, in [0, 1]
    depth: float         # expected depth in normalized-space ray units


def sample_windows(
    windows: np.ndarray, n_samples: int, jitter_rng: Optional[np.random.Generator] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-ray sample times and segment lengths for [N, 2] windows.

    Midpoints of equal bins by default; with ``jitter_rng``, one uniform
    draw per bin (stratified). Segment lengths always sum to b - a.
    """
    windows = np.asarray(windows, dtype=np.float64)
    a = windows[:, 0:1]
    b = windows[:, 1:2]
    delta = (b - a) / n_samples
    offsets = np.arange(n_samples, dtype=np.float64)[None, :]
    if jitter_rng is None:
        frac = 0.5
        t = a + (offsets + frac) * delta
    else:
        frac = jitter_rng.uniform(size=(windows.shape[0], n_samples))
        t = a + (offsets + frac) * delta
    return t, np.broadcast_to(delta, t.shape).copy()


def composite(
    sigma: Tensor, rgb: Optional[Tensor], delta: np.ndarray, t: np.ndarray
) -> Tuple[Optional[Tensor], Tensor, Optional[Tensor]]:
    """Quadrature compositing for [N, S] densities.

    Returns (rgb [N,3], bg_alpha [N], depth [N]); rgb/depth are None when
    no colors were supplied (occupancy-only rendering).
    """
    dtype = sigma.data.dtype
    sd = sigma * np.asarray(delta, dtype=dtype)
    s_inc = sd.cumsum(axis=1)
    t_next = (-s_inc).exp()              # T_{i+1}
    t_cur = (-(s_inc - sd)).exp()        # T_i
    weights = t_cur - t_next
    bg_alpha = t_next[:, -1]
    if rgb is None:
        return None, bg_alpha, None
    n, s = sigma.shape
    w3 = weights.reshape(n, s, 1)
    out_rgb = (w3 * rgb.reshape(n, s, 3)).sum(axis=1)
    wsum = weights.sum(axis=1)
    depth = (weights * np.asarray(t, dtype=dtype)).sum(axis=1) / wsum.clamp(lo=DEPTH_WEIGHT_EPS)
    return out_rgb, bg_alpha, depth


def render_rays_batch(
    field,
    orays: Sequence[ObjectRay],
    n_samples: int = 64,
    jitter_rng: Optional[np.random.Generator] = None,
    with_color: bool = True,
) -> Tuple[Optional[Tensor], Tensor, Optional[Tensor]]:
    """Render a batch of object rays (all must have windows).

    ``field`` needs ``query(points, dirs)`` and ``query_density(points)``
    returning tape tensors; identical results to per-ray rendering.
    """
    if not orays:
        raise ValueError("empty ray batch")
    windows = []
    for r in orays:
        if r.window is None:
            raise ValueError("cannot render a ray with no cube window")
        windows.append(r.window)
    windows = np.asarray(windows, dtype=np.float64)
    t, delta = sample_windows(windows, n_samples, jitter_rng)
    origins = np.stack([r.ray.origin for r in orays])
    dirs = np.stack([r.ray.direction for r in orays])
    n = len(orays)
    points = origins[:, None, :] + t[:, :, None] * dirs[:, None, :]
    points_flat = points.reshape(n * n_samples, 3)
    dirs_flat = np.repeat(dirs, n_samples, axis=0)
    dtype = _field_dtype(field)
    pts_t = Tensor(points_flat.astype(dtype))
    if with_color:
        dirs_t = Tensor(dirs_flat.astype(dtype))
        sigma, rgb = field.query(pts_t, dirs_t)
        return composite(sigma.reshape(n, n_samples), rgb, delta, t)
    sigma = field.query_density(pts_t)
    _, bg_alpha, _ = composite(sigma.reshape(n, n_samples), None, delta, t)
    return None, bg_alpha, None


def render_ray(field, oray: ObjectRay, n_samples: int = 64) -> RenderOutput:
    """Render one object ray; raises if it has no window."""
    rgb, bg, depth = render_rays_batch(field, [oray], n_samples)
    return RenderOutput(
        rgb=np.asarray(rgb.data[0], dtype=np.float64),
        bg_alpha=float(bg.data[0]),
        depth=float(depth.data[0]),
    )


def _field_dtype(field):
    try:
        return field.shape_dec.w_in.data.dtype
    except AttributeError:
        return np.float64


@dataclass
class ViewRender:
    rgb: np.ndarray        # [H, W, 3] float in [0, 1]
    alpha: np.ndarray      # [H, W] foreground probability = 1 - bg_alpha
    depth: np.ndarray      # [H, W] NOCS ray depth, NaN where the ray misses
    speed: np.ndarray      # [H, W] NOCS-units-per-camera-unit (depth remap)
    hit: np.ndarray        # [H, W] bool

    def depth_camera(self) -> np.ndarray:
        """Depth remapped to camera-frame units."""
        return self.depth / self.speed


def view_ray_grid(
    cam: CameraIntrinsics, roi: Tuple[float, float, float, float], resolution: Tuple[int, int]
) -> np.ndarray:
    """Continuous pixel coords sampling ``roi`` at ``resolution`` (h, w)."""
    x0, y0, rw, rh = roi
    out_h, out_w = resolution
    if out_h < 1 or out_w < 1 or rw <= 0 or rh <= 0:
        raise ValueError("empty roi or resolution")
    xs = x0 + (np.arange(out_w) + 0.5) * (rw / out_w)
    ys = y0 + (np.arange(out_h) + 0.5) * (rh / out_h)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def render_view(
    field,
    box: ObjectBox,
    cam: CameraIntrinsics,
    roi: Optional[Tuple[float, float, float, float]] = None,
    resolution: Optional[Tuple[int, int]] = None,
    n_samples: int = 64,
    chunk: int = 4096,
) -> ViewRender:
    """Render one ray per output pixel; misses are black with alpha 0."""
    if roi is None:
        roi = (0.0, 0.0, float(cam.width), float(cam.height))
    if resolution is None:
        resolution = (int(roi[3]), int(roi[2]))
    out_h, out_w = resolution
    coords = view_ray_grid(cam, roi, resolution)
    from objrf.geometry import pixel_rays

    dirs = pixel_rays(cam, coords)
    origins = np.zeros_like(dirs)
    o_n, d_n, speeds, windows = object_rays(box, origins, dirs)
    n_px = out_h * out_w
    rgb = np.zeros((n_px, 3), dtype=np.float64)
    alpha = np.zeros(n_px, dtype=np.float64)
    depth = np.full(n_px, np.nan, dtype=np.float64)
    hit_idx = np.array([i for i, w in enumerate(windows) if w is not None], dtype=np.int64)
    with no_grad():
        for lo in range(0, len(hit_idx), chunk):
            idx = hit_idx[lo : lo + chunk]
            orays = [
                ObjectRay(
                    ray=_RayView(o_n[i], d_n[i]), window=windows[i], speed=float(speeds[i])
                )
                for i in idx
            ]
            r, bg, d = render_rays_batch(field, orays, n_samples)
            rgb[idx] = r.data
            alpha[idx] = 1.0 - bg.data
            depth[idx] = d.data
    hit = np.zeros(n_px, dtype=bool)
    hit[hit_idx] = True
    return ViewRender(
        rgb=rgb.reshape(out_h, out_w, 3),
        alpha=alpha.reshape(out_h, out_w),
        depth=depth.reshape(out_h, out_w),
        speed=speeds.reshape(out_h, out_w),
        hit=hit.reshape(out_h, out_w),
    )


class _RayView:
    """Lightweight Ray stand-in avoiding per-ray validation copies."""

    __slots__ = ("origin", "direction")

    def __init__(self, origin: np.ndarray, direction: np.ndarray):
        self.origin = origin
        self.direction = direction


# --------------------------------------------------------------------------
# on-disk outputs
# --------------------------------------------------------------------------


def write_view(render: ViewRender, out_dir: Path, stem: str) -> None:
    """Write rgb PNG, alpha PNG, raw f32 depth, and a JSON sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rgb8 = (np.clip(render.rgb, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(rgb8).save(out_dir / f"{stem}.png")
    a8 = (np.clip(render.alpha, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(a8, mode="L").save(out_dir / f"{stem}_alpha.png")
    h, w = render.depth.shape
    with open(out_dir / f"{stem}_depth.raw", "wb") as f:
        f.write(render.depth.astype("<f4").tobytes())
    sidecar = {"width": w, "height": h, "depth_units": "nocs-ray", "dtype": "<f4"}
    (out_dir / f"{stem}_depth.json").write_text(json.dumps(sidecar))


def read_depth_raw(path: Path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    return data.reshape(meta["height"], meta["width"]).astype(np.float64)
