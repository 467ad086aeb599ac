"""Analytic scene oracle: piecewise-constant density primitives admit
closed-form transmittance, so renders carry no quadrature error.

Objects are unions of axis-aligned boxes/ellipsoids defined in their own
normalized (unit-cube) space with a constant density and color each; a
color may carry a view-direction tint, which stays constant along any
single ray so the per-segment closed form remains exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from objrf.geometry import CameraIntrinsics, ObjectBox, Pose, object_rays, pixel_rays
from objrf.tape import Tensor

_T_FAR = 1e9


@dataclass
class Primitive:
    kind: str                 # "box" | "ellipsoid"
    center: np.ndarray        # normalized-space center
    half: np.ndarray          # half extents / semi-axes
    sigma: float              # constant density (normalized-space units)
    color: np.ndarray         # base RGB in [0, 1]
    tint_axis: Optional[np.ndarray] = None
    tint_k: float = 0.0       # color *= (1 - k + k * |dot(dir, axis)|)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.half = np.asarray(self.half, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        if self.tint_axis is not None:
            ax = np.asarray(self.tint_axis, dtype=np.float64)
            self.tint_axis = ax / np.linalg.norm(ax)
        if self.kind not in ("box", "ellipsoid"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")

    def ray_span(self, o: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Entry/exit times for [N,3] normalized-space rays; miss -> (inf, inf)."""
        if self.kind == "box":
            lo = self.center - self.half
            hi = self.center + self.half
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo - o) / d
                t2 = (hi - o) / d
            par = d == 0.0
            inside = (o >= lo) & (o <= hi)
            t_lo = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
            t_hi = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
            a = t_lo.max(axis=1)
            b = t_hi.min(axis=1)
        else:
            q = (o - self.center) / self.half
            r = d / self.half
            aa = (r * r).sum(axis=1)
            bb = 2.0 * (q * r).sum(axis=1)
            cc = (q * q).sum(axis=1) - 1.0
            disc = bb * bb - 4.0 * aa * cc
            ok = disc > 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            a = np.where(ok, (-bb - sq) / (2.0 * aa), np.inf)
            b = np.where(ok, (-bb + sq) / (2.0 * aa), -np.inf)
        a = np.maximum(a, 0.0)
        miss = b <= a
        a = np.where(miss, np.inf, a)
        b = np.where(miss, np.inf, b)
        return a, b

    def contains(self, p: np.ndarray) -> np.ndarray:
        if self.kind == "box":
            return np.all(np.abs(p - self.center) <= self.half, axis=1)
        q = (p - self.center) / self.half
        return (q * q).sum(axis=1) <= 1.0

    def shaded_color(self, dirs: np.ndarray) -> np.ndarray:
        """Per-ray color [N,3] under the optional direction tint."""
        base = np.broadcast_to(self.color, (dirs.shape[0], 3)).copy()
        if self.tint_axis is None or self.tint_k == 0.0:
            return base
        s = 1.0 - self.tint_k + self.tint_k * np.abs(dirs @ self.tint_axis)
        return np.clip(base * s[:, None], 0.0, 1.0)


@dataclass
class GtObject:
    box: ObjectBox                   # world-frame pose + metric size
    primitives: List[Primitive]

    def density_at(self, points: np.ndarray) -> np.ndarray:
        """Densities at normalized-space points (primitives are additive)."""
        points = np.asarray(points, dtype=np.float64)
        out = np.zeros(len(points))
        for p in self.primitives:
            out += p.sigma * p.contains(points)
        return out

    def color_at(self, points: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Density-weighted color blend at normalized-space points."""
        points = np.asarray(points, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        num = np.zeros((len(points), 3))
        den = np.zeros(len(points))
        for p in self.primitives:
            inside = p.contains(points)
            w = p.sigma * inside
            num += w[:, None] * p.shaded_color(dirs)
            den += w
        safe = np.maximum(den, 1e-12)
        return np.where(den[:, None] > 0, num / safe[:, None], 0.0)


class AnalyticPrimitiveField:
    """Duck-typed field over a GtObject for the quadrature renderer."""

    def __init__(self, obj: GtObject):
        self.obj = obj

    def query(self, points: Tensor, dirs: Tensor):
        p = points.data
        d = dirs.data
        return Tensor(self.obj.density_at(p)), Tensor(self.obj.color_at(p, d))

    def query_density(self, points: Tensor) -> Tensor:
        return Tensor(self.obj.density_at(points.data))


@dataclass
class SceneCamera:
    intrinsics: CameraIntrinsics
    pose: Pose  # camera-to-world


@dataclass
class SceneSpec:
    objects: List[GtObject]
    occluders: List[GtObject] = dc_field(default_factory=list)
    cameras: List[SceneCamera] = dc_field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if not self.objects:
            raise ValueError("scene needs at least one object")

    def entities(self) -> List[GtObject]:
        return list(self.objects) + list(self.occluders)


@dataclass
class OracleView:
    rgb: np.ndarray          # [H, W, 3]
    depth: np.ndarray        # [H, W] camera-frame expected depth, NaN empty
    alpha: np.ndarray        # [E, H, W] per-entity opacity
    first_hit: np.ndarray    # [E, H, W] camera-frame entry depth, inf on miss
    scene_alpha: np.ndarray  # [H, W] full-scene opacity


def box_in_camera(box: ObjectBox, cam_pose: Pose) -> ObjectBox:
    """Express a world-frame box in a camera's frame (cam_pose: cam->world)."""
    w2c = cam_pose.inverse()
    return ObjectBox(w2c.compose(box.pose), box.size.copy())


def oracle_render(
    scene: SceneSpec,
    camera: SceneCamera,
    resolution: Optional[Tuple[int, int]] = None,
    tracked_only_rgb: bool = False,
) -> OracleView:
    """Exact closed-form render of the scene from one camera.

    Each primitive's ray span is converted to camera-frame distances with
    a matching density rescale, every span boundary starts a new constant
    segment, and transmittance/color/expected depth follow in closed form
    per segment. ``tracked_only_rgb`` drops occluders from the color/depth
    pass (per-entity alphas always cover all entities).
    """
    cam = camera.intrinsics
    if resolution is None:
        resolution = (cam.height, cam.width)
    out_h, out_w = resolution
    sx, sy = out_w / cam.width, out_h / cam.height
    cam_res = cam.scaled(sx, sy) if (sx, sy) != (1.0, 1.0) else cam
    ys, xs = np.mgrid[0:out_h, 0:out_w]
    coords = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
    dirs = pixel_rays(cam_res, coords)
    n_px = len(dirs)

    entities = scene.entities()
    spans_a, spans_b, sig_cam, colors = [], [], [], []
    ent_index = []
    n_objects = len(scene.objects)
    for ei, ent in enumerate(entities):
        box_cam = box_in_camera(ent.box, camera.pose)
        o_n, d_n, speed, _ = object_rays(box_cam, np.zeros_like(dirs), dirs)
        for prim in ent.primitives:
            a_n, b_n = prim.ray_span(o_n, d_n)
            spans_a.append(a_n / speed)
            spans_b.append(b_n / speed)
            sig_cam.append(prim.sigma * speed)
            colors.append(prim.shaded_color(d_n))
            ent_index.append(ei)
    n_prim = len(spans_a)
    first_hit = np.full((len(entities), n_px), np.inf)
    alpha = np.zeros((len(entities), n_px))
    for pi in range(n_prim):
        ei = ent_index[pi]
        finite = np.isfinite(spans_b[pi])
        chord = np.where(finite, np.where(finite, spans_b[pi], 0.0) - np.where(finite, spans_a[pi], 0.0), 0.0)
        alpha[ei] = 1.0 - (1.0 - alpha[ei]) * np.exp(-sig_cam[pi] * chord)
        first_hit[ei] = np.minimum(first_hit[ei], spans_a[pi])

    rgb = np.zeros((n_px, 3))
    depth_num = np.zeros(n_px)
    scene_alpha = np.zeros(n_px)
    use = [
        pi for pi in range(n_prim) if (not tracked_only_rgb) or ent_index[pi] < n_objects
    ]
    if use:
        a = np.stack([np.where(np.isfinite(spans_a[pi]), spans_a[pi], _T_FAR) for pi in use])
        b = np.stack([np.where(np.isfinite(spans_b[pi]), spans_b[pi], _T_FAR) for pi in use])
        sig = np.stack([np.broadcast_to(sig_cam[pi], (n_px,)) for pi in use])
        col = np.stack([colors[pi] for pi in use])  # [P, N, 3]
        edges = np.sort(np.concatenate([a, b], axis=0), axis=0)  # [2P, N]
        e0 = edges[:-1]
        e1 = edges[1:]
        mid = 0.5 * (e0 + e1)
        active = (a[:, None, :] <= mid[None, :, :]) & (mid[None, :, :] < b[:, None, :])
        sig_active = sig[:, None, :] * active                     # [P, S, N]
        seg_sig = sig_active.sum(axis=0)                          # [S, N]
        seg_col_num = np.einsum("psn,pnc->snc", sig_active, col)
        seg_den = np.maximum(seg_sig, 1e-300)
        seg_col = seg_col_num / seg_den[:, :, None]
        dt = np.maximum(e1 - e0, 0.0)
        tau = seg_sig * dt
        t_start = np.exp(-np.cumsum(np.concatenate([np.zeros((1, n_px)), tau[:-1]], axis=0), axis=0))
        absorb = 1.0 - np.exp(-tau)
        w = t_start * absorb                                       # [S, N]
        rgb = (w[:, :, None] * seg_col).sum(axis=0)
        # exact expected depth: integral of T(t) sigma t dt per segment
        with np.errstate(divide="ignore", invalid="ignore"):
            ex = np.exp(-tau)
            term = np.where(
                seg_sig > 0,
                e0 * (1.0 - ex) + (1.0 - ex * (1.0 + tau)) / seg_den,
                0.0,
            )
        depth_num = (t_start * term).sum(axis=0)
        scene_alpha = 1.0 - np.exp(-tau.sum(axis=0))
    wsum = scene_alpha
    depth = np.where(wsum > 1e-9, depth_num / np.maximum(wsum, 1e-300), np.nan)
    return OracleView(
        rgb=np.clip(rgb, 0.0, 1.0).reshape(out_h, out_w, 3),
        depth=depth.reshape(out_h, out_w),
        alpha=alpha.reshape(len(entities), out_h, out_w),
        first_hit=first_hit.reshape(len(entities), out_h, out_w),
        scene_alpha=scene_alpha.reshape(out_h, out_w),
    )
