"""Single-view training: batch size 1, end-to-end through encoder,
decoders, renderer, and both losses."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from objrf.encoder import ImageEncoder, prepare_crop
from objrf.field import ColorDecoder, RadianceField, ShapeDecoder
from objrf.tape import Tensor, no_grad, save_checkpoint, load_checkpoint
from objrf.training.optim import Adam
from objrf.training.pipeline import sample_loss, select_rays
from objrf.training.sample import TrainSample


@dataclass
class TrainConfig:
    code_dim: int = 128
    n_freq: int = 6
    n_samples: int = 64
    rays_per_image: int = 1024
    occ_lambda: float = 1.0
    lr: float = 1e-5
    steps: int = 1000
    seed: int = 0
    render_budget: Tuple[int, int] = (80, 120)
    encoder_channels: Tuple[int, ...] = (16, 32, 64, 128)
    min_bg_frac: float = 0.25
    checkpoint_every: int = 0
    log_csv: Optional[str] = None

    def to_json(self) -> dict:
        d = {
            "code_dim": self.code_dim,
            "n_freq": self.n_freq,
            "n_samples": self.n_samples,
            "rays_per_image": self.rays_per_image,
            "lambda": self.occ_lambda,
            "lr": self.lr,
            "steps": self.steps,
            "seed": self.seed,
            "render_budget": list(self.render_budget),
        }
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @staticmethod
    def from_json(d: dict) -> "TrainConfig":
        cfg = TrainConfig()
        cfg.code_dim = int(d.get("code_dim", cfg.code_dim))
        cfg.n_freq = int(d.get("n_freq", cfg.n_freq))
        cfg.n_samples = int(d.get("n_samples", cfg.n_samples))
        cfg.rays_per_image = int(d.get("rays_per_image", cfg.rays_per_image))
        cfg.occ_lambda = float(d.get("lambda", cfg.occ_lambda))
        cfg.lr = float(d.get("lr", cfg.lr))
        cfg.steps = int(d.get("steps", cfg.steps))
        cfg.seed = int(d.get("seed", cfg.seed))
        cfg.render_budget = tuple(d.get("render_budget", cfg.render_budget))
        cfg.encoder_channels = tuple(d.get("encoder_channels", cfg.encoder_channels))
        cfg.min_bg_frac = float(d.get("min_bg_frac", cfg.min_bg_frac))
        return cfg


@dataclass
class TrainStats:
    used: int = 0
    skipped: int = 0
    losses: List[Tuple[int, float, float, float]] = dc_field(default_factory=list)


class ModelBundle:
    """Encoder + decoders + training-set mean codes, checkpointable."""

    def __init__(self, encoder: ImageEncoder, shape_dec: ShapeDecoder, color_dec: ColorDecoder):
        self.encoder = encoder
        self.shape_dec = shape_dec
        self.color_dec = color_dec
        self.mean_shape_code: Optional[np.ndarray] = None
        self.mean_app_code: Optional[np.ndarray] = None

    @staticmethod
    def create(cfg: TrainConfig, dtype=np.float32) -> "ModelBundle":
        rng = np.random.default_rng(cfg.seed)
        enc = ImageEncoder(cfg.code_dim, cfg.encoder_channels, seed=cfg.seed, dtype=dtype)
        shape_dec = ShapeDecoder(cfg.code_dim, cfg.n_freq, rng, dtype=dtype)
        color_dec = ColorDecoder(cfg.code_dim, cfg.n_freq, rng, dtype=dtype)
        return ModelBundle(enc, shape_dec, color_dec)

    def named_parameters(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        out.update(self.encoder.named_parameters())
        out.update(self.shape_dec.named_parameters())
        out.update(self.color_dec.named_parameters())
        return out

    def encode(self, crop: np.ndarray) -> Tuple[Tensor, Tensor]:
        return self.encoder(prepare_crop(crop))

    def field_for_codes(self, shape_code, app_code) -> RadianceField:
        sc = shape_code if isinstance(shape_code, Tensor) else Tensor(np.asarray(shape_code))
        ac = app_code if isinstance(app_code, Tensor) else Tensor(np.asarray(app_code))
        return RadianceField(self.shape_dec, self.color_dec, sc, ac)

    def save(self, path, extra_meta: Optional[Dict[str, np.ndarray]] = None) -> None:
        tensors: Dict[str, np.ndarray] = {k: t.data for k, t in self.named_parameters().items()}
        arch = [self.shape_dec.code_dim, self.shape_dec.n_freq, *self.encoder.channels]
        tensors["meta.arch"] = np.asarray(arch, dtype=np.float64)
        if self.mean_shape_code is not None:
            tensors["meta.mean_shape_code"] = self.mean_shape_code
            tensors["meta.mean_app_code"] = self.mean_app_code
        if extra_meta:
            tensors.update(extra_meta)
        save_checkpoint(path, tensors)

    @staticmethod
    def load(path, dtype=np.float32) -> "ModelBundle":
        state = load_checkpoint(path)
        arch = state["meta.arch"].astype(int)
        code_dim, n_freq, channels = int(arch[0]), int(arch[1]), tuple(int(c) for c in arch[2:])
        cfg = TrainConfig(code_dim=code_dim, n_freq=n_freq, encoder_channels=channels)
        bundle = ModelBundle.create(cfg, dtype=dtype)
        cast = {k: v.astype(dtype) for k, v in state.items() if not k.startswith("meta.")}
        bundle.encoder.load_state(cast)
        bundle.shape_dec.load_state(cast)
        bundle.color_dec.load_state(cast)
        if "meta.mean_shape_code" in state:
            bundle.mean_shape_code = state["meta.mean_shape_code"].astype(dtype)
            bundle.mean_app_code = state["meta.mean_app_code"].astype(dtype)
        return bundle


class NanLossError(RuntimeError):
    pass


def train(
    dataset: Sequence[TrainSample],
    config: TrainConfig,
    bundle: Optional[ModelBundle] = None,
    checkpoint_path: Optional[str] = None,
) -> Tuple[ModelBundle, TrainStats]:
    """Iterate single-view samples, Adam-updating all parameters.

    Deterministic given ``config.seed``. A non-finite loss aborts with a
    diagnostic dump; non-finite gradients skip the step and are counted.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    bundle = bundle or ModelBundle.create(config)
    params = bundle.named_parameters()
    opt = Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    stats = TrainStats()
    order = np.arange(len(dataset))
    writer = None
    csv_file = None
    if config.log_csv:
        csv_file = open(config.log_csv, "w", newline="")
        writer = csv.writer(csv_file)
        writer.writerow(["step", "loss_rgb", "loss_occ", "loss"])
    try:
        step = 0
        while step < config.steps:
            rng.shuffle(order)
            for i in order:
                if step >= config.steps:
                    break
                sample = dataset[i]
                rays = select_rays(
                    sample, config.render_budget, config.rays_per_image, rng, config.min_bg_frac
                )
                if rays is None:
                    stats.skipped += 1
                    step += 1
                    continue
                shape_code, app_code = bundle.encode(sample.crop)
                parts = sample_loss(
                    bundle.shape_dec,
                    bundle.color_dec,
                    shape_code,
                    app_code,
                    sample.box,
                    rays,
                    config.n_samples,
                    config.occ_lambda,
                )
                if parts is None:
                    stats.skipped += 1
                    step += 1
                    continue
                lv = parts.total.item()
                if not math.isfinite(lv):
                    dump = {
                        "step": step,
                        "sample_index": int(i),
                        "loss": lv,
                        "loss_rgb": parts.rgb.item(),
                        "loss_occ": parts.occ.item(),
                    }
                    if checkpoint_path:
                        bundle.save(str(checkpoint_path) + ".nan-dump")
                    raise NanLossError(f"non-finite loss at step {step}: {json.dumps(dump)}")
                opt.zero_grad()
                parts.total.backward()
                opt.step()
                stats.used += 1
                stats.losses.append((step, parts.rgb.item(), parts.occ.item(), lv))
                if writer:
                    writer.writerow([step, parts.rgb.item(), parts.occ.item(), lv])
                step += 1
                if (
                    checkpoint_path
                    and config.checkpoint_every
                    and step % config.checkpoint_every == 0
                ):
                    bundle.save(checkpoint_path)
    finally:
        if csv_file:
            csv_file.close()
    _store_mean_codes(bundle, dataset)
    if checkpoint_path:
        bundle.save(checkpoint_path)
    return bundle, stats


def _store_mean_codes(bundle: ModelBundle, dataset: Sequence[TrainSample]) -> None:
    shape_codes, app_codes = [], []
    with no_grad():
        for sample in dataset:
            sc, ac = bundle.encode(sample.crop)
            shape_codes.append(sc.data)
            app_codes.append(ac.data)
    bundle.mean_shape_code = np.mean(shape_codes, axis=0)
    bundle.mean_app_code = np.mean(app_codes, axis=0)
