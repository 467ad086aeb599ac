"""Procedural scenes, per-object sample extraction, and annotation noise.

The sample extractor mirrors the detection/segmentation preprocessing
pipeline: crop the projected 3D-box extent, label pixels foreground /
background / unknown from the oracle's per-entity opacities, and drop
samples that fail the visibility filters (foreground coverage, distance
cap, minimum pixel size).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image

from objrf.data.io import DatasetRecord
from objrf.data.primitives import (
    GtObject,
    OracleView,
    Primitive,
    SceneCamera,
    SceneSpec,
    box_in_camera,
    oracle_render,
)
from objrf.encoder import MAX_CROP_SIDE
from objrf.geometry import (
    CameraIntrinsics,
    ObjectBox,
    Pose,
    look_at_pose,
    quat_from_axis_angle,
    quat_multiply,
    quat_normalize,
)

COVERAGE_MIN = 0.6
MAX_DEPTH = 40.0
MIN_CROP_PX = 40
FG_ALPHA_THRESHOLD = 0.5


# --------------------------------------------------------------------------
# procedural objects
# --------------------------------------------------------------------------


def make_car_object(rng: np.random.Generator, center_xy=(0.0, 0.0), yaw: Optional[float] = None) -> GtObject:
    """Car-like object: body box + cabin box + four wheel ellipsoids.

    Extents, colors, and densities are randomized per draw; the box sits
    on the ground plane (world z = 0) with its local z axis up.
    """
    length = rng.uniform(3.6, 5.0)
    width = rng.uniform(1.7, 2.1)
    height = rng.uniform(1.4, 1.8)
    yaw = rng.uniform(0.0, 2.0 * math.pi) if yaw is None else yaw
    pose = Pose(
        quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw),
        np.array([center_xy[0], center_xy[1], height / 2.0]),
    )
    box = ObjectBox(pose, np.array([length, width, height]))

    body_color = rng.uniform(0.15, 0.95, size=3)
    cabin_color = np.clip(body_color * rng.uniform(0.3, 0.6) + 0.05, 0.0, 1.0)
    wheel_color = np.full(3, rng.uniform(0.05, 0.2))
    sigma = rng.uniform(30.0, 70.0)

    body_h = rng.uniform(0.22, 0.3)
    prims = [
        Primitive(
            "box",
            center=[0.0, 0.0, -0.5 + body_h],
            half=[0.48, 0.46, body_h],
            sigma=sigma,
            color=body_color,
            tint_axis=[0.0, 0.0, 1.0],
            tint_k=rng.uniform(0.0, 0.25),
        ),
        Primitive(
            "box",
            center=[rng.uniform(-0.15, 0.05), 0.0, -0.5 + 2 * body_h + rng.uniform(0.1, 0.16)],
            half=[rng.uniform(0.2, 0.3), 0.4, rng.uniform(0.12, 0.2)],
            sigma=sigma,
            color=cabin_color,
        ),
    ]
    wheel_r = rng.uniform(0.08, 0.12)
    for sx in (-0.3, 0.3):
        for sy in (-0.42, 0.42):
            prims.append(
                Primitive(
                    "ellipsoid",
                    center=[sx, sy, -0.5 + wheel_r],
                    half=[wheel_r * 1.2, 0.06, wheel_r],
                    sigma=sigma * 1.5,
                    color=wheel_color,
                )
            )
    return GtObject(box, prims)


def make_occluder(rng: np.random.Generator, cam_pos: np.ndarray, target: np.ndarray) -> GtObject:
    """Thin vertical slab between the camera and the target point."""
    frac = rng.uniform(0.35, 0.7)
    pos = cam_pos + frac * (target - cam_pos)
    lateral = np.array([-(target - cam_pos)[1], (target - cam_pos)[0], 0.0])
    ln = np.linalg.norm(lateral)
    if ln > 1e-9:
        pos = pos + lateral / ln * rng.uniform(-1.0, 1.0)
    w = rng.uniform(0.3, 1.2)
    h = rng.uniform(1.5, 3.0)
    pose = Pose(
        quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), rng.uniform(0, 2 * math.pi)),
        np.array([pos[0], pos[1], h / 2.0]),
    )
    box = ObjectBox(pose, np.array([w, 0.25, h]))
    gray = np.full(3, rng.uniform(0.3, 0.6))
    return GtObject(box, [Primitive("box", [0, 0, 0], [0.5, 0.5, 0.5], sigma=80.0, color=gray)])


# --------------------------------------------------------------------------
# sample extraction
# --------------------------------------------------------------------------


def project_points(cam: CameraIntrinsics, pts: np.ndarray) -> Optional[np.ndarray]:
    """Pinhole projection of camera-frame points; None if any is behind."""
    pts = np.asarray(pts, dtype=np.float64)
    if np.any(pts[:, 2] < 1e-6):
        return None
    u = cam.fx * pts[:, 0] / pts[:, 2] + cam.cx
    v = cam.fy * pts[:, 1] / pts[:, 2] + cam.cy
    return np.stack([u, v], axis=1)


def make_sample(
    scene: SceneSpec,
    camera: SceneCamera,
    object_index: int,
    view: Optional[OracleView] = None,
    coverage_min: float = COVERAGE_MIN,
    max_depth: float = MAX_DEPTH,
    min_px: int = MIN_CROP_PX,
) -> Optional[DatasetRecord]:
    """Extract one object's crop/mask/box/camera record, or None if the
    object fails the visibility filters."""
    cam = camera.intrinsics
    box_cam = box_in_camera(scene.objects[object_index].box, camera.pose)
    if np.linalg.norm(box_cam.pose.translation) > max_depth:
        return None
    uv = project_points(cam, box_cam.corners())
    if uv is None:
        return None
    x0 = int(math.floor(uv[:, 0].min()))
    y0 = int(math.floor(uv[:, 1].min()))
    x1 = int(math.ceil(uv[:, 0].max()))
    y1 = int(math.ceil(uv[:, 1].max()))
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(cam.width, x1), min(cam.height, y1)
    if x1 - x0 < min_px or y1 - y0 < min_px:
        return None
    if view is None:
        view = oracle_render(scene, camera)
    roi = (slice(y0, y1), slice(x0, x1))
    obj_alpha = view.alpha[object_index][roi]
    obj_first = view.first_hit[object_index][roi]
    n_entities = view.alpha.shape[0]
    other = [e for e in range(n_entities) if e != object_index]
    if other:
        occ_alpha = 1.0 - np.prod(1.0 - view.alpha[other], axis=0)[roi]
        occ_first = np.min(view.first_hit[other], axis=0)[roi]
    else:
        occ_alpha = np.zeros_like(obj_alpha)
        occ_first = np.full_like(obj_alpha, np.inf)

    obj_visible = (obj_alpha > FG_ALPHA_THRESHOLD) & (obj_first <= occ_first)
    occ_in_front = (occ_alpha > FG_ALPHA_THRESHOLD) & ~obj_visible
    labels = np.where(obj_visible, 1, np.where(occ_in_front, 0, -1)).astype(np.int8)

    coverage = float((labels == 1).mean())
    if coverage < coverage_min:
        return None

    crop = np.round(np.clip(view.rgb[roi], 0.0, 1.0) * 255.0) / 255.0
    depth = view.depth[roi].copy()
    crop_cam = cam.crop(x0, y0, x1 - x0, y1 - y0)
    crop, labels, depth, crop_cam = _rescale_if_needed(crop, labels, depth, crop_cam)
    return DatasetRecord(
        record_id="",
        crop=crop.astype(np.float64),
        labels=labels,
        box=box_cam,
        camera=crop_cam,
        depth=depth,
        meta={},
    )


def _rescale_if_needed(crop, labels, depth, cam, max_side: int = MAX_CROP_SIDE):
    h, w = crop.shape[:2]
    if max(h, w) <= max_side:
        return crop, labels, depth, cam
    scale = max_side / max(h, w)
    nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    img = Image.fromarray((crop * 255).astype(np.uint8))
    crop2 = np.asarray(img.resize((nw, nh), Image.BILINEAR), dtype=np.float64) / 255.0
    iy = np.minimum(((np.arange(nh) + 0.5) * h / nh).astype(int), h - 1)
    ix = np.minimum(((np.arange(nw) + 0.5) * w / nw).astype(int), w - 1)
    labels2 = labels[np.ix_(iy, ix)]
    depth2 = depth[np.ix_(iy, ix)]
    cam2 = cam.scaled(nw / w, nh / h)
    return crop2, labels2, depth2, cam2


# --------------------------------------------------------------------------
# annotation noise
# --------------------------------------------------------------------------


def perturb_annotations(
    record: DatasetRecord, rot_err_deg: float, trans_err: float, rng: np.random.Generator
) -> DatasetRecord:
    """Perturb the box pose; image and mask stay untouched.

    Rotation: uniform random axis, half-normal angle whose mean is
    ``rot_err_deg``. Translation: uniform direction, half-normal length
    with mean ``trans_err``.
    """
    if rot_err_deg < 0 or trans_err < 0:
        raise ValueError("perturbation magnitudes must be >= 0")
    axis = _random_unit(rng)
    # E|N(0, s)| = s * sqrt(2/pi)  ->  s = mean * sqrt(pi/2)
    angle = abs(rng.normal(0.0, rot_err_deg * math.sqrt(math.pi / 2.0))) * math.pi / 180.0
    tdir = _random_unit(rng)
    tlen = abs(rng.normal(0.0, trans_err * math.sqrt(math.pi / 2.0)))
    q = quat_from_axis_angle(axis, angle)
    new_pose = Pose(
        quat_normalize(quat_multiply(record.box.pose.rotation, q)),
        record.box.pose.translation + tdir * tlen,
    )
    return DatasetRecord(
        record_id=record.record_id,
        crop=record.crop,
        labels=record.labels,
        box=ObjectBox(new_pose, record.box.size.copy()),
        camera=record.camera,
        depth=record.depth,
        meta=dict(record.meta),
    )


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        if n > 1e-9:
            return v / n


# --------------------------------------------------------------------------
# dataset generation
# --------------------------------------------------------------------------


@dataclass
class DataGenConfig:
    n_objects: int = 10
    views_per_object: int = 1
    val_objects: int = 0
    val_views_per_object: int = 2
    seed: int = 0
    image_hw: Tuple[int, int] = (160, 240)
    focal: float = 200.0
    occluder_prob: float = 0.0
    perturb_rot_deg: float = 0.0
    perturb_trans: float = 0.0
    camera_radius: Tuple[float, float] = (6.0, 11.0)
    camera_elevation_deg: Tuple[float, float] = (8.0, 28.0)
    max_camera_tries: int = 40


def _orbit_camera(cfg: DataGenConfig, rng: np.random.Generator, target: np.ndarray) -> SceneCamera:
    h, w = cfg.image_hw
    intr = CameraIntrinsics(cfg.focal, cfg.focal, w / 2.0, h / 2.0, w, h)
    azim = rng.uniform(0.0, 2.0 * math.pi)
    elev = math.radians(rng.uniform(*cfg.camera_elevation_deg))
    radius = rng.uniform(*cfg.camera_radius)
    pos = target + radius * np.array(
        [math.cos(azim) * math.cos(elev), math.sin(azim) * math.cos(elev), math.sin(elev)]
    )
    return SceneCamera(intr, look_at_pose(pos, target))


def generate_dataset(cfg: DataGenConfig) -> List[DatasetRecord]:
    """One scene per object; each record is a distinct orbit view.

    Train objects get ``views_per_object`` views each (with optional
    occluders and pose-annotation noise); the last ``val_objects`` get
    clean, occluder-free views tagged split=val.
    """
    rng = np.random.default_rng(cfg.seed)
    records: List[DatasetRecord] = []
    total = cfg.n_objects + cfg.val_objects
    for oi in range(total):
        is_val = oi >= cfg.n_objects
        obj = make_car_object(rng)
        target = obj.box.pose.translation.copy()
        n_views = cfg.val_views_per_object if is_val else cfg.views_per_object
        made = 0
        tries = 0
        while made < n_views and tries < cfg.max_camera_tries * n_views:
            tries += 1
            camera = _orbit_camera(cfg, rng, target)
            occluders: List[GtObject] = []
            if not is_val and cfg.occluder_prob > 0 and rng.uniform() < cfg.occluder_prob:
                occluders.append(make_occluder(rng, camera.pose.translation, target))
            scene = SceneSpec(objects=[obj], occluders=occluders, cameras=[camera])
            rec = make_sample(scene, camera, 0)
            if rec is None:
                continue
            if not is_val and (cfg.perturb_rot_deg > 0 or cfg.perturb_trans > 0):
                rec = perturb_annotations(rec, cfg.perturb_rot_deg, cfg.perturb_trans, rng)
            rec.record_id = f"{len(records):05d}"
            rec.meta = {
                "split": "val" if is_val else "train",
                "object_id": oi,
                "view_id": made,
            }
            records.append(rec)
            made += 1
        if made < n_views:
            raise RuntimeError(f"could not generate {n_views} visible views for object {oi}")
    return records
