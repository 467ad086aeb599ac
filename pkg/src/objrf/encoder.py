"""Image encoder: masked object crop -> (shape code, appearance code).

A small from-scratch CNN: four stride-2 conv stages (instance norm + ReLU)
shared trunk, then two parallel 1x1-conv heads whose feature maps are
globally max-pooled into the two 128-dim codes. Instance normalization
keeps batch-size-1 training well behaved.
"""

from __future__ import annotations

import math
from typing import Dict, Optional, Tuple

import numpy as np
from PIL import Image

from objrf.field import _Params
from objrf.tape import Tensor

MAX_CROP_SIDE = 320
MIN_CROP_SIDE = 8
_IN_EPS = 1e-5


def prepare_crop(image: np.ndarray, max_side: int = MAX_CROP_SIDE) -> np.ndarray:
    """Rescale an [H, W, 3] float crop so its longer side is <= max_side."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("crop must be [H, W, 3]")
    h, w = img.shape[:2]
    if max(h, w) <= max_side:
        return img
    scale = max_side / max(h, w)
    nh, nw = max(MIN_CROP_SIDE, int(round(h * scale))), max(MIN_CROP_SIDE, int(round(w * scale)))
    pil = Image.fromarray((np.clip(img, 0, 1) * 255).astype(np.uint8))
    return np.asarray(pil.resize((nw, nh), Image.BILINEAR), dtype=np.float32) / 255.0


class _ConvStage:
    def __init__(self, owner: _Params, name: str, rng: np.random.Generator, cin: int, cout: int, ksize: int, dtype):
        fan_in = cin * ksize * ksize
        w = rng.standard_normal((cout, fan_in)) * math.sqrt(2.0 / fan_in)
        self.ksize = ksize
        self.w = owner._add(f"{name}.w", w.astype(dtype))
        self.b = owner._add(f"{name}.b", np.zeros((cout, 1), dtype=dtype))
        self.gamma = owner._add(f"{name}.gamma", np.ones((cout, 1), dtype=dtype))
        self.beta = owner._add(f"{name}.beta", np.zeros((cout, 1), dtype=dtype))

    def __call__(self, x: Tensor, h: int, w: int, stride: int) -> Tuple[Tensor, int, int]:
        k = self.ksize
        pad = k // 2
        cols = x.unfold2d(k, k, stride=stride, pad=pad)
        oh = (h + 2 * pad - k) // stride + 1
        ow = (w + 2 * pad - k) // stride + 1
        y = self.w @ cols + self.b
        mu = y.mean(axis=1, keepdims=True)
        cen = y - mu
        var = (cen * cen).mean(axis=1, keepdims=True)
        y = cen / (var + _IN_EPS).sqrt() * self.gamma + self.beta
        return y.relu(), oh, ow


class ImageEncoder(_Params):
    """Two-head convolutional encoder producing fixed-size codes."""

    prefix = "encoder"

    def __init__(
        self,
        code_dim: int = 128,
        channels: Tuple[int, ...] = (16, 32, 64, 128),
        seed: int = 0,
        dtype=np.float32,
    ):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.code_dim = code_dim
        self.channels = tuple(channels)
        cins = (3,) + self.channels[:-1]
        self.stages = [
            _ConvStage(self, f"stage{i}", rng, cin, cout, 3, dtype)
            for i, (cin, cout) in enumerate(zip(cins, self.channels))
        ]
        ctop = self.channels[-1]
        self.shape_head = _ConvStage(self, "shape_head", rng, ctop, code_dim, 1, dtype)
        self.app_head = _ConvStage(self, "app_head", rng, ctop, code_dim, 1, dtype)

    def __call__(self, crop: np.ndarray) -> Tuple[Tensor, Tensor]:
        img = np.asarray(crop)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("crop must be [H, W, 3]")
        h, w = img.shape[:2]
        if h < MIN_CROP_SIDE or w < MIN_CROP_SIDE:
            raise ValueError(f"crop {h}x{w} below the trunk's minimum footprint")
        dtype = self.stages[0].w.data.dtype
        x = Tensor(np.ascontiguousarray(img.transpose(2, 0, 1), dtype=dtype))
        c = 3
        for stage in self.stages:
            x3 = x.reshape(c, h, w)
            x, h, w = stage(x3, h, w, stride=2)
            c = x.shape[0]
        feat3 = x.reshape(c, h, w)
        shape_map, _, _ = self.shape_head(feat3, h, w, stride=1)
        app_map, _, _ = self.app_head(feat3, h, w, stride=1)
        return shape_map.max(axis=1), app_map.max(axis=1)
