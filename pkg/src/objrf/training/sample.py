"""Training sample container: masked crop, box, camera, trinary mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from objrf.geometry import CameraIntrinsics, ObjectBox

FOREGROUND = 1
UNKNOWN = 0
BACKGROUND = -1
_VALID_LABELS = (-1, 0, 1)


class OccupancyMask:
    """Per-pixel labels: +1 object, -1 clear background, 0 unknown/occluder."""

    def __init__(self, labels: np.ndarray):
        arr = np.asarray(labels)
        if not np.isin(arr, _VALID_LABELS).all():
            bad = sorted(set(np.unique(arr)) - set(_VALID_LABELS))
            raise ValueError(f"illegal mask labels {bad}; expected subset of {{+1, 0, -1}}")
        self.labels = arr.astype(np.int8)

    @property
    def shape(self):
        return self.labels.shape

    def __eq__(self, other):
        return isinstance(other, OccupancyMask) and np.array_equal(self.labels, other.labels)


@dataclass
class TrainSample:
    """One observation of one object: (image, object-centric camera, mask)."""

    crop: np.ndarray             # [H, W, 3] float in [0, 1]
    box: ObjectBox               # camera-frame oriented box
    camera: CameraIntrinsics     # intrinsics of the crop
    mask: OccupancyMask

    def __post_init__(self):
        if self.crop.shape[:2] != self.mask.shape:
            raise ValueError(
                f"mask dims {self.mask.shape} differ from crop dims {self.crop.shape[:2]}"
            )
