"""Image fidelity (PSNR, SSIM) and depth accuracy (L1, RMSE) metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.signal import fftconvolve

from objrf.geometry import CameraIntrinsics, ObjectBox, pixel_rays

PSNR_CAP = 99.0
_MSE_FLOOR = 1e-10
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
_LUMA = np.array([0.299, 0.587, 0.114])

DEPTH_MIN_PIXELS = 20
DEPTH_BOTTOM_FRACTION = 0.1


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for [0,1] images; capped at 99 dB for zero MSE."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < _MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ _LUMA
    return img


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window sigma=1.5, L=1, on luma."""
    a = _to_luma(a)
    b = _to_luma(b)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WIN:
        raise ValueError(f"image smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window")
    w = _gaussian_window(SSIM_WIN, SSIM_SIGMA)

    def filt(x):
        return fftconvolve(x, w, mode="valid")

    mu_a = filt(a)
    mu_b = filt(b)
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = filt(a * a) - mu_aa
    var_b = filt(b * b) - mu_bb
    cov = filt(a * b) - mu_ab
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2 * mu_ab + c1) * (2 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def depth_valid_mask(
    gt_depth: np.ndarray,
    fg_mask: np.ndarray,
    box: ObjectBox,
    camera: CameraIntrinsics,
    bottom_fraction: float = DEPTH_BOTTOM_FRACTION,
) -> np.ndarray:
    """Foreground pixels whose GT surface point sits above the lowest
    ``bottom_fraction`` of the box's vertical (local z) extent."""
    h, w = gt_depth.shape
    ys, xs = np.mgrid[0:h, 0:w]
    coords = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
    dirs = pixel_rays(camera, coords)
    pts = dirs * gt_depth.reshape(-1, 1)
    local = (pts - box.pose.translation) @ box.pose.matrix
    z_floor = -box.size[2] / 2.0 + bottom_fraction * box.size[2]
    ok = local[:, 2].reshape(h, w) > z_floor
    return fg_mask & np.isfinite(gt_depth) & ok


def depth_error(
    pred_depth: np.ndarray,
    gt_depth: np.ndarray,
    valid: np.ndarray,
    min_pixels: int = DEPTH_MIN_PIXELS,
) -> Optional[Tuple[float, float]]:
    """(L1, RMSE) over valid pixels; None when fewer than ``min_pixels``."""
    if pred_depth.shape != gt_depth.shape or valid.shape != gt_depth.shape:
        raise ValueError("depth map dims differ")
    valid = valid & np.isfinite(pred_depth) & np.isfinite(gt_depth)
    n = int(valid.sum())
    if n < min_pixels:
        return None
    diff = pred_depth[valid] - gt_depth[valid]
    l1 = float(np.mean(np.abs(diff)))
    rmse = float(math.sqrt(np.mean(diff ** 2)))
    return l1, rmse


@dataclass
class EvalRow:
    record_id: str
    psnr: float
    ssim: float
    depth_l1: Optional[float] = None
    depth_rmse: Optional[float] = None
    extra: Dict = dc_field(default_factory=dict)


@dataclass
class EvalReport:
    rows: List[EvalRow] = dc_field(default_factory=list)
    skipped_depth: int = 0
    skipped_samples: int = 0
    notes: Dict = dc_field(default_factory=dict)

    def aggregate(self) -> Dict[str, float]:
        out: Dict[str, float] = {}
        if self.rows:
            out["psnr"] = float(np.mean([r.psnr for r in self.rows]))
            out["ssim"] = float(np.mean([r.ssim for r in self.rows]))
            l1 = [r.depth_l1 for r in self.rows if r.depth_l1 is not None]
            rmse = [r.depth_rmse for r in self.rows if r.depth_rmse is not None]
            if l1:
                out["depth_l1"] = float(np.mean(l1))
                out["depth_rmse"] = float(np.mean(rmse))
        out["n"] = len(self.rows)
        out["skipped_depth"] = self.skipped_depth
        out["skipped_samples"] = self.skipped_samples
        return out

    def to_json(self) -> dict:
        return {
            "aggregate": self.aggregate(),
            "notes": self.notes,
            "rows": [
                {
                    "id": r.record_id,
                    "psnr": r.psnr,
                    "ssim": r.ssim,
                    "depth_l1": r.depth_l1,
                    "depth_rmse": r.depth_rmse,
                    **r.extra,
                }
                for r in self.rows
            ],
        }

    def save(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_json(), indent=1))
        if csv_path:
            with open(csv_path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["id", "psnr", "ssim", "depth_l1", "depth_rmse"])
                for r in self.rows:
                    w.writerow([r.record_id, r.psnr, r.ssim, r.depth_l1, r.depth_rmse])

    def table(self) -> str:
        """Summary table; perceptual metrics need pretrained nets: n/a."""
        agg = self.aggregate()
        lines = ["method          PSNR    SSIM    LPIPS   FID"]
        lines.append(
            "this run        {:<7.2f} {:<7.4f} n/a     n/a".format(
                agg.get("psnr", float("nan")), agg.get("ssim", float("nan"))
            )
        )
        return "\n".join(lines)
