"""HTTP render/edit service backing the scene editor.

Scene state lives in memory: object instances (codes + boxes) against one
loaded checkpoint. Rendering is read-only and cacheable; mutations go
through a single lock and are idempotent: a pose payload is interpreted
relative to the object's base pose, so replaying it lands on the same
state.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import threading
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Request, Response
from PIL import Image

from objrf.data.primitives import box_in_camera
from objrf.geometry import (
    CameraIntrinsics,
    ObjectBox,
    Pose,
    quat_normalize,
)
from objrf.renderer import ViewRender, render_view
from objrf.tape import no_grad
from objrf.training import TTOFlags, TrainConfig, test_time_optimize
from objrf.training.loop import ModelBundle
from objrf.training.sample import OccupancyMask, TrainSample

DEFAULT_MAX_SIDE = 512


def code_interpolate(code_a: np.ndarray, code_b: np.ndarray, t: float) -> np.ndarray:
    """(1 - t) * a + t * b; endpoints reproduce the inputs exactly."""
    a = np.asarray(code_a, dtype=np.float64)
    b = np.asarray(code_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"code dims differ: {a.shape} vs {b.shape}")
    return (1.0 - t) * a + t * b


@dataclass
class SceneObject:
    object_id: str
    shape_code: np.ndarray
    appearance_code: np.ndarray
    base_box: ObjectBox
    box: ObjectBox

    def to_json(self, with_codes: bool = True) -> dict:
        d = {"id": self.object_id, "box": self.box.to_json(), "base_box": self.base_box.to_json()}
        if with_codes:
            d["shape_code"] = [float(v) for v in self.shape_code]
            d["appearance_code"] = [float(v) for v in self.appearance_code]
        return d


@dataclass
class SceneState:
    checkpoint_id: str
    objects: Dict[str, SceneObject] = dc_field(default_factory=dict)
    camera: Optional[dict] = None
    next_id: int = 0

    def to_json(self, with_codes: bool = True) -> dict:
        return {
            "checkpoint_id": self.checkpoint_id,
            "objects": [o.to_json(with_codes) for o in self.objects.values()],
            "camera": self.camera,
        }


def _png_bytes(arr: np.ndarray, mode: str = "RGB") -> bytes:
    buf = io.BytesIO()
    if mode == "RGB":
        img = Image.fromarray((np.clip(arr, 0, 1) * 255).round().astype(np.uint8))
    else:
        img = Image.fromarray((np.clip(arr, 0, 1) * 255).round().astype(np.uint8), mode="L")
    img.save(buf, format="PNG")
    return buf.getvalue()


def composite_objects(renders: List[ViewRender]) -> ViewRender:
    """Per-pixel depth test: the nearest sufficiently opaque object wins."""
    if not renders:
        raise ValueError("nothing to composite")
    h, w = renders[0].alpha.shape
    depth_cam = np.stack(
        [np.where(r.alpha > 0.5, np.where(np.isfinite(r.depth), r.depth_camera(), np.inf), np.inf) for r in renders]
    )
    winner = np.argmin(depth_cam, axis=0)
    any_opaque = np.isfinite(depth_cam.min(axis=0))
    alphas = np.stack([r.alpha for r in renders])
    soft_winner = np.argmax(alphas, axis=0)
    pick = np.where(any_opaque, winner, soft_winner)
    rgb = np.zeros((h, w, 3))
    alpha = np.zeros((h, w))
    depth = np.full((h, w), np.nan)
    speed = np.ones((h, w))
    for i, r in enumerate(renders):
        m = pick == i
        rgb[m] = r.rgb[m]
        alpha[m] = r.alpha[m]
        depth[m] = r.depth[m]
        speed[m] = r.speed[m]
    hit = np.any([r.hit for r in renders], axis=0)
    return ViewRender(rgb=rgb, alpha=alpha, depth=depth, speed=speed, hit=hit)


def create_app(
    checkpoint: Optional[str] = None,
    bundle: Optional[ModelBundle] = None,
    max_side: int = DEFAULT_MAX_SIDE,
    n_samples: int = 16,
    static_dir: Optional[str] = None,
) -> FastAPI:
    if bundle is None:
        if checkpoint is None:
            raise ValueError("need a checkpoint path or a model bundle")
        bundle = ModelBundle.load(checkpoint)
        ckpt_id = hashlib.sha256(Path(checkpoint).read_bytes()).hexdigest()[:16]
    else:
        ckpt_id = "in-memory"

    app = FastAPI(title="objrf scene service", version="1")
    state = SceneState(checkpoint_id=ckpt_id)
    lock = threading.Lock()
    render_cache: Dict[str, dict] = {}

    def parse_camera(d: dict) -> tuple:
        try:
            intr = CameraIntrinsics.from_json(d["intrinsics"])
            pose = Pose.from_json(d["pose"]) if "pose" in d else Pose.identity()
        except (KeyError, ValueError, TypeError) as e:
            raise HTTPException(status_code=400, detail=f"bad camera: {e}")
        return intr, pose

    def get_object(object_id: str) -> SceneObject:
        obj = state.objects.get(object_id)
        if obj is None:
            raise HTTPException(status_code=404, detail=f"unknown object {object_id!r}")
        return obj

    @app.get("/api/health")
    def health():
        return {"status": "ok", "checkpoint": state.checkpoint_id, "objects": len(state.objects)}

    @app.get("/api/schema")
    def schema():
        return app.openapi()

    @app.get("/api/scene")
    def scene():
        return state.to_json()

    @app.get("/api/scene/snapshot")
    def snapshot():
        return state.to_json(with_codes=True)

    @app.post("/api/scene/restore")
    def restore(payload: dict = Body(...)):
        with lock:
            state.objects.clear()
            for od in payload.get("objects", []):
                try:
                    obj = SceneObject(
                        object_id=str(od["id"]),
                        shape_code=np.asarray(od["shape_code"], dtype=np.float32),
                        appearance_code=np.asarray(od["appearance_code"], dtype=np.float32),
                        base_box=ObjectBox.from_json(od.get("base_box", od["box"])),
                        box=ObjectBox.from_json(od["box"]),
                    )
                except (KeyError, ValueError, TypeError) as e:
                    raise HTTPException(status_code=400, detail=f"bad object: {e}")
                state.objects[obj.object_id] = obj
            state.camera = payload.get("camera")
            render_cache.clear()
        return state.to_json(with_codes=False)

    @app.post("/api/object/{object_id}/pose")
    def set_pose(object_id: str, payload: dict = Body(...)):
        with lock:
            obj = get_object(object_id)
            try:
                if "set" in payload:
                    new_box = ObjectBox.from_json(payload["set"])
                else:
                    rot = quat_normalize(payload.get("rotation", [1.0, 0.0, 0.0, 0.0]))
                    trans = np.asarray(payload.get("translation", [0.0, 0.0, 0.0]), dtype=np.float64)
                    if _is_identity(rot, trans):
                        new_box = obj.base_box
                    else:
                        delta = Pose(rot, trans)
                        new_box = ObjectBox(obj.base_box.pose.compose(delta), obj.base_box.size.copy())
            except (ValueError, TypeError) as e:
                raise HTTPException(status_code=400, detail=f"bad pose payload: {e}")
            obj.box = new_box
            render_cache.clear()
            return obj.to_json(with_codes=False)

    @app.post("/api/object/{object_id}/codes")
    def set_codes(object_id: str, payload: dict = Body(...)):
        with lock:
            obj = get_object(object_id)
            try:
                if "interpolate" in payload:
                    spec = payload["interpolate"]
                    other = get_object(str(spec["other_id"]))
                    t = float(spec["t"])
                    channel = spec.get("channel", "both")
                    if channel not in ("shape", "appearance", "both"):
                        raise ValueError(f"bad channel {channel!r}")
                    if channel in ("shape", "both"):
                        obj.shape_code = code_interpolate(obj.shape_code, other.shape_code, t).astype(
                            obj.shape_code.dtype
                        )
                    if channel in ("appearance", "both"):
                        obj.appearance_code = code_interpolate(
                            obj.appearance_code, other.appearance_code, t
                        ).astype(obj.appearance_code.dtype)
                if "shape" in payload:
                    arr = np.asarray(payload["shape"], dtype=obj.shape_code.dtype)
                    if arr.shape != obj.shape_code.shape:
                        raise ValueError("shape code dim mismatch")
                    obj.shape_code = arr
                if "appearance" in payload:
                    arr = np.asarray(payload["appearance"], dtype=obj.appearance_code.dtype)
                    if arr.shape != obj.appearance_code.shape:
                        raise ValueError("appearance code dim mismatch")
                    obj.appearance_code = arr
            except (KeyError, ValueError, TypeError) as e:
                raise HTTPException(status_code=400, detail=f"bad codes payload: {e}")
            render_cache.clear()
            return obj.to_json(with_codes=False)

    @app.post("/api/render")
    def render(payload: dict = Body(...), format: str = "png", channel: str = "rgb"):
        width = int(payload.get("width", 128))
        height = int(payload.get("height", 128))
        if width > max_side or height > max_side or width < 1 or height < 1:
            raise HTTPException(status_code=409, detail=f"render budget exceeded (max side {max_side})")
        if "camera" not in payload:
            raise HTTPException(status_code=400, detail="missing camera")
        intr, cam_pose = parse_camera(payload["camera"])
        if not state.objects:
            raise HTTPException(status_code=400, detail="scene is empty")
        key = hashlib.sha256(
            json.dumps({"p": payload, "w": width, "h": height}, sort_keys=True).encode()
        ).hexdigest()
        cached = render_cache.get(key)
        if cached is None:
            t0 = time.monotonic()
            renders = []
            for obj in state.objects.values():
                box_cam = box_in_camera(obj.box, cam_pose)
                field = bundle.field_for_codes(obj.shape_code, obj.appearance_code)
                renders.append(
                    render_view(
                        field,
                        box_cam,
                        intr,
                        roi=(0.0, 0.0, float(intr.width), float(intr.height)),
                        resolution=(height, width),
                        n_samples=n_samples,
                        chunk=2048,
                    )
                )
            out = composite_objects(renders)
            cached = {
                "rgb": _png_bytes(out.rgb, "RGB"),
                "alpha": _png_bytes(out.alpha, "L"),
                "elapsed_s": time.monotonic() - t0,
            }
            if len(render_cache) > 32:
                render_cache.clear()
            render_cache[key] = cached
        if format == "json":
            return {
                "rgb_png": base64.b64encode(cached["rgb"]).decode(),
                "alpha_png": base64.b64encode(cached["alpha"]).decode(),
                "elapsed_s": cached["elapsed_s"],
            }
        data = cached["alpha"] if channel == "alpha" else cached["rgb"]
        return Response(content=data, media_type="image/png")

    def _add_object_from_arrays(
        crop: np.ndarray,
        labels: Optional[np.ndarray],
        box: ObjectBox,
        tto: dict,
        camera: Optional[CameraIntrinsics] = None,
    ) -> SceneObject:
        with no_grad():
            sc, ac = bundle.encode(crop)
        shape_code, app_code = sc.data.copy(), ac.data.copy()
        final_box = box
        if tto and any(tto.get(k) for k in ("shape", "appearance", "pose")) and labels is not None:
            cam = camera or _full_view_camera(crop)
            sample = TrainSample(crop=crop, box=box, camera=cam, mask=OccupancyMask(labels))
            res = test_time_optimize(
                bundle,
                sample,
                TTOFlags(
                    shape=bool(tto.get("shape", False)),
                    appearance=bool(tto.get("appearance", False)),
                    pose=bool(tto.get("pose", False)),
                ),
                iterations=int(tto.get("iterations", 32)),
                config=TrainConfig(n_samples=n_samples, rays_per_image=512),
            )
            shape_code, app_code, final_box = res.shape_code, res.appearance_code, res.box
        oid = str(state.next_id)
        state.next_id += 1
        obj = SceneObject(
            object_id=oid,
            shape_code=shape_code,
            appearance_code=app_code,
            base_box=final_box,
            box=final_box,
        )
        state.objects[oid] = obj
        return obj

    @app.post("/api/encode")
    async def encode(request: Request):
        ctype = request.headers.get("content-type", "")
        try:
            if ctype.startswith("multipart/form-data"):
                form = await request.form()
                if "crop" not in form or "box" not in form:
                    raise ValueError("multipart needs 'crop' file and 'box' field")
                crop = _decode_png(await form["crop"].read())
                labels = None
                if "mask" in form:
                    labels = _decode_mask(await form["mask"].read())
                box = ObjectBox.from_json(json.loads(form["box"]))
                tto = json.loads(form["tto"]) if "tto" in form else {}
                camera = (
                    CameraIntrinsics.from_json(json.loads(form["camera"]))
                    if "camera" in form
                    else None
                )
            else:
                payload = await request.json()
                crop = _decode_png(base64.b64decode(payload["crop_png"]))
                labels = (
                    _decode_mask(base64.b64decode(payload["mask_png"]))
                    if "mask_png" in payload
                    else None
                )
                box = ObjectBox.from_json(payload["box"])
                tto = payload.get("tto", {})
                camera = (
                    CameraIntrinsics.from_json(payload["camera"]) if "camera" in payload else None
                )
        except HTTPException:
            raise
        except Exception as e:  # malformed uploads -> client error
            raise HTTPException(status_code=400, detail=f"bad encode payload: {e}")
        with lock:
            obj = _add_object_from_arrays(crop, labels, box, tto, camera)
            render_cache.clear()
            return obj.to_json(with_codes=False)

    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="editor")

    app.state.scene = state
    app.state.bundle = bundle
    return app


def _is_identity(rot: np.ndarray, trans: np.ndarray) -> bool:
    return bool(abs(rot[0]) == 1.0 and np.all(rot[1:] == 0.0) and np.all(trans == 0.0))


def _full_view_camera(crop: np.ndarray) -> CameraIntrinsics:
    h, w = crop.shape[:2]
    f = float(max(h, w))
    return CameraIntrinsics(f, f, w / 2.0, h / 2.0, w, h)


def _decode_png(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def _decode_mask(data: bytes) -> np.ndarray:
    from objrf.data.io import BYTE_MASK

    arr = np.asarray(Image.open(io.BytesIO(data)), dtype=np.uint8)
    bad = sorted(set(np.unique(arr)) - set(BYTE_MASK))
    if bad:
        raise ValueError(f"illegal mask byte values {bad}")
    return np.vectorize(BYTE_MASK.get)(arr).astype(np.int8)
