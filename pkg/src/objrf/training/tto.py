"""Test-time refinement of codes and box pose for one observation.

Runs Adam on the training loss with network weights frozen. Pose is
parametrized as a local axis-angle rotation increment plus a camera-frame
translation increment composed onto the initial box pose; the box size
stays fixed. A best-so-far snapshot guards against overshoot: if the loss
rises five-fold above its initial value the optimization reverts and
stops.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Tuple

import numpy as np

from objrf.geometry import ObjectBox, Pose, quat_from_axis_angle
from objrf.tape import Tensor, concat, no_grad
from objrf.training.loop import ModelBundle, TrainConfig
from objrf.training.optim import Adam
from objrf.training.pipeline import sample_loss, select_rays
from objrf.training.sample import TrainSample

DIVERGENCE_FACTOR = 5.0


@dataclass
class TTOFlags:
    shape: bool = True
    appearance: bool = True
    pose: bool = True

    def any(self) -> bool:
        return self.shape or self.appearance or self.pose


@dataclass
class TTOResult:
    shape_code: np.ndarray
    appearance_code: np.ndarray
    box: ObjectBox
    losses: List[float] = dc_field(default_factory=list)
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None
    reverted: bool = False


def rodrigues(w: Tensor) -> Tensor:
    """Axis-angle [3] -> rotation matrix [3,3] on the tape.

    Uses R = I + sin(t)/t K + (1-cos(t))/t^2 K^2 with K = skew(w); the
    tiny bias inside the sqrt keeps the t -> 0 limit finite.
    """
    dtype = w.data.dtype
    th2 = (w * w).sum() + np.asarray(1e-16, dtype=dtype)
    th = th2.sqrt()
    k1 = th.sin() / th
    k2 = (1.0 - th.cos()) / th2
    zero = Tensor(np.zeros(1, dtype=dtype))
    wx, wy, wz = w[0:1], w[1:2], w[2:3]
    k_rows = concat([zero, -wz, wy, wz, zero, -wx, -wy, wx, zero], axis=0)
    k = k_rows.reshape(3, 3)
    eye = Tensor(np.eye(3, dtype=dtype))
    return eye + k1.reshape(1, 1) * k + k2.reshape(1, 1) * (k @ k)


def compose_box(box: ObjectBox, rot_delta: np.ndarray, trans_delta: np.ndarray) -> ObjectBox:
    """Numpy counterpart of the tape pose composition (local rotation,
    camera-frame translation)."""
    angle = float(np.linalg.norm(rot_delta))
    q = quat_from_axis_angle(rot_delta if angle > 0 else np.array([1.0, 0.0, 0.0]), angle)
    pose = Pose(
        rotation=_quat_mul_np(box.pose.rotation, q),
        translation=box.pose.translation + np.asarray(trans_delta, dtype=np.float64),
    )
    return ObjectBox(pose, box.size.copy())


def _quat_mul_np(a, b):
    from objrf.geometry import quat_multiply, quat_normalize

    return quat_normalize(quat_multiply(a, b))


def test_time_optimize(
    bundle: ModelBundle,
    sample: TrainSample,
    flags: TTOFlags = TTOFlags(),
    iterations: int = 32,
    lr_shape: float = 0.05,
    lr_appearance: float = 0.02,
    lr_pose: float = 0.02,
    config: Optional[TrainConfig] = None,
    seed: int = 0,
    init_shape_code: Optional[np.ndarray] = None,
    init_app_code: Optional[np.ndarray] = None,
) -> TTOResult:
    """Optimize enabled variables for ``iterations`` Adam steps.

    Codes start from the encoder (or explicit inits), the pose from the
    sample's box. With all flags off the inputs are returned unchanged.
    """
    cfg = config or TrainConfig()
    dtype = bundle.shape_dec.w_in.data.dtype
    if init_shape_code is None or init_app_code is None:
        with no_grad():
            sc0, ac0 = bundle.encode(sample.crop)
        init_shape_code = sc0.data if init_shape_code is None else init_shape_code
        init_app_code = ac0.data if init_app_code is None else init_app_code
    if not flags.any() or iterations == 0:
        return TTOResult(
            shape_code=np.asarray(init_shape_code, dtype=dtype).copy(),
            appearance_code=np.asarray(init_app_code, dtype=dtype).copy(),
            box=sample.box,
        )

    params = bundle.named_parameters()
    saved_rg = {k: t.requires_grad for k, t in params.items()}
    for t in params.values():
        t.requires_grad = False
    try:
        shape_code = Tensor(np.asarray(init_shape_code, dtype=dtype).copy(), requires_grad=flags.shape)
        app_code = Tensor(np.asarray(init_app_code, dtype=dtype).copy(), requires_grad=flags.appearance)
        rot_delta = Tensor(np.zeros(3, dtype=dtype), requires_grad=flags.pose)
        trans_delta = Tensor(np.zeros(3, dtype=dtype), requires_grad=flags.pose)

        opts = []
        if flags.shape:
            opts.append(Adam({"shape": shape_code}, lr=lr_shape))
        if flags.appearance:
            opts.append(Adam({"app": app_code}, lr=lr_appearance))
        if flags.pose:
            opts.append(Adam({"rot": rot_delta, "trans": trans_delta}, lr=lr_pose))

        rng = np.random.default_rng(seed)
        rays = select_rays(sample, cfg.render_budget, cfg.rays_per_image, rng, cfg.min_bg_frac)
        if rays is None:
            return TTOResult(
                shape_code=shape_code.data.copy(),
                appearance_code=app_code.data.copy(),
                box=sample.box,
            )

        def current_loss():
            return sample_loss(
                bundle.shape_dec,
                bundle.color_dec,
                shape_code,
                app_code,
                sample.box,
                rays,
                cfg.n_samples,
                cfg.occ_lambda,
                rot_delta=rot_delta if flags.pose else None,
                trans_delta=trans_delta if flags.pose else None,
            )

        result = TTOResult(
            shape_code=shape_code.data.copy(),
            appearance_code=app_code.data.copy(),
            box=sample.box,
        )
        best = None
        for it in range(iterations):
            parts = current_loss()
            if parts is None:
                result.reverted = True
                break
            lv = parts.total.item()
            result.losses.append(lv)
            if it == 0:
                result.initial_loss = lv
            if best is None or lv < best[0]:
                best = (
                    lv,
                    shape_code.data.copy(),
                    app_code.data.copy(),
                    rot_delta.data.copy(),
                    trans_delta.data.copy(),
                )
            if not np.isfinite(lv) or lv > DIVERGENCE_FACTOR * result.initial_loss:
                result.reverted = True
                break
            for o in opts:
                o.zero_grad()
            shape_code.grad = None
            app_code.grad = None
            rot_delta.grad = None
            trans_delta.grad = None
            parts.total.backward()
            for o in opts:
                o.step()
        # evaluate the post-update state so the last step can still win
        if best is not None:
            parts = None if result.reverted else current_loss()
            if parts is not None:
                lv = parts.total.item()
                result.losses.append(lv)
                if np.isfinite(lv) and lv < best[0]:
                    best = (
                        lv,
                        shape_code.data.copy(),
                        app_code.data.copy(),
                        rot_delta.data.copy(),
                        trans_delta.data.copy(),
                    )
            result.final_loss = best[0]
            result.shape_code = best[1]
            result.appearance_code = best[2]
            if flags.pose:
                result.box = compose_box(sample.box, best[3], best[4])
        return result
    finally:
        for k, t in params.items():
            t.requires_grad = saved_rg[k]


def auto_decode(
    bundle: ModelBundle,
    sample: TrainSample,
    rounds: int = 128,
    config: Optional[TrainConfig] = None,
    seed: int = 0,
    lr_shape: float = 0.05,
    lr_appearance: float = 0.02,
) -> TTOResult:
    """Encoder-free refinement from the training-set mean codes."""
    if bundle.mean_shape_code is None or bundle.mean_app_code is None:
        raise ValueError("checkpoint stores no training-set mean codes")
    return test_time_optimize(
        bundle,
        sample,
        flags=TTOFlags(shape=True, appearance=True, pose=False),
        iterations=rounds,
        lr_shape=lr_shape,
        lr_appearance=lr_appearance,
        config=config,
        seed=seed,
        init_shape_code=bundle.mean_shape_code,
        init_app_code=bundle.mean_app_code,
    )
