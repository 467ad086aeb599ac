"""Dataset directory IO.

Layout:
    dataset/
      index.json                  {"records": [{"id", "split", ...}, ...]}
      records/NNNNN/crop.png      8-bit RGB
      records/NNNNN/mask.png      8-bit gray: 255 -> +1, 128 -> 0, 0 -> -1
      records/NNNNN/box.json      {"rotation", "translation", "size"}
      records/NNNNN/camera.json   {"fx", "fy", "cx", "cy", "width", "height"}
      records/NNNNN/depth.raw     optional float32 LE + depth.json sidecar

The same layout accepts externally produced crops (real-image pipelines);
loading validates mask values and dimension consistency.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from PIL import Image

from objrf.geometry import CameraIntrinsics, ObjectBox
from objrf.training.sample import OccupancyMask, TrainSample

MASK_BYTE = {1: 255, 0: 128, -1: 0}
BYTE_MASK = {255: 1, 128: 0, 0: -1}


@dataclass
class DatasetRecord:
    record_id: str
    crop: np.ndarray             # [H, W, 3] float in [0, 1]
    labels: np.ndarray           # [H, W] int8 in {+1, 0, -1}
    box: ObjectBox
    camera: CameraIntrinsics
    depth: Optional[np.ndarray] = None   # [H, W] float, NaN where empty
    meta: Dict = dc_field(default_factory=dict)


def record_to_sample(rec: DatasetRecord) -> TrainSample:
    return TrainSample(
        crop=rec.crop,
        box=rec.box,
        camera=rec.camera,
        mask=OccupancyMask(rec.labels),
    )


def save_dataset(records: List[DatasetRecord], root) -> None:
    root = Path(root)
    (root / "records").mkdir(parents=True, exist_ok=True)
    index = []
    for rec in records:
        rid = rec.record_id
        d = root / "records" / rid
        d.mkdir(parents=True, exist_ok=True)
        Image.fromarray((np.clip(rec.crop, 0, 1) * 255).round().astype(np.uint8)).save(d / "crop.png")
        mask_bytes = np.vectorize(MASK_BYTE.get)(rec.labels.astype(int)).astype(np.uint8)
        Image.fromarray(mask_bytes, mode="L").save(d / "mask.png")
        (d / "box.json").write_text(json.dumps(rec.box.to_json()))
        (d / "camera.json").write_text(json.dumps(rec.camera.to_json()))
        if rec.depth is not None:
            (d / "depth.raw").write_bytes(rec.depth.astype("<f4").tobytes())
            (d / "depth.json").write_text(
                json.dumps({"width": rec.depth.shape[1], "height": rec.depth.shape[0], "dtype": "<f4"})
            )
        index.append({"id": rid, **rec.meta})
    (root / "index.json").write_text(json.dumps({"records": index}, indent=1))


def load_dataset(root, split: Optional[str] = None) -> List[DatasetRecord]:
    """Load records in index order (deterministic, sorted by id)."""
    root = Path(root)
    index_path = root / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(f"{index_path} missing")
    index = json.loads(index_path.read_text())["records"]
    index = sorted(index, key=lambda e: e["id"])
    out = []
    for entry in index:
        if split is not None and entry.get("split") != split:
            continue
        rid = entry["id"]
        d = root / "records" / rid
        crop = np.asarray(Image.open(d / "crop.png").convert("RGB"), dtype=np.float64) / 255.0
        mask_bytes = np.asarray(Image.open(d / "mask.png"), dtype=np.uint8)
        bad = sorted(set(np.unique(mask_bytes)) - set(BYTE_MASK))
        if bad:
            raise ValueError(f"{d / 'mask.png'}: illegal mask byte values {bad}")
        labels = np.vectorize(BYTE_MASK.get)(mask_bytes).astype(np.int8)
        if labels.shape != crop.shape[:2]:
            raise ValueError(f"{d}: mask dims {labels.shape} != crop dims {crop.shape[:2]}")
        box = ObjectBox.from_json(json.loads((d / "box.json").read_text()))
        camera = CameraIntrinsics.from_json(json.loads((d / "camera.json").read_text()))
        if camera.height != crop.shape[0] or camera.width != crop.shape[1]:
            raise ValueError(f"{d}: camera dims disagree with crop dims")
        depth = None
        if (d / "depth.raw").exists():
            dmeta = json.loads((d / "depth.json").read_text())
            depth = np.frombuffer((d / "depth.raw").read_bytes(), dtype="<f4").reshape(
                dmeta["height"], dmeta["width"]
            ).astype(np.float64)
        meta = {k: v for k, v in entry.items() if k != "id"}
        out.append(
            DatasetRecord(
                record_id=rid, crop=crop, labels=labels, box=box, camera=camera, depth=depth, meta=meta
            )
        )
    return out
