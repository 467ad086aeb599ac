"""Command-line entry points: synth-data, train, evaluate, tto, render, serve."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from objrf.data import (
    DataGenConfig,
    generate_dataset,
    load_dataset,
    record_to_sample,
    save_dataset,
)
from objrf.data.primitives import box_in_camera
from objrf.geometry import CameraIntrinsics, ObjectBox, Pose, look_at_pose
from objrf.metrics import EvalReport, EvalRow, psnr, ssim
from objrf.renderer import render_view, write_view
from objrf.training import TTOFlags, TrainConfig, test_time_optimize, train
from objrf.training.loop import ModelBundle


def _cmd_synth_data(args) -> int:
    cfg = DataGenConfig(
        n_objects=args.objects,
        views_per_object=args.views,
        val_objects=args.val_objects,
        val_views_per_object=args.val_views,
        seed=args.seed,
        occluder_prob=args.occluder_prob,
        perturb_rot_deg=args.perturb_rot,
        perturb_trans=args.perturb_trans,
        image_hw=(args.image_height, args.image_width),
        focal=args.focal,
    )
    records = generate_dataset(cfg)
    save_dataset(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _load_train_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.config:
        cfg = TrainConfig.from_json(json.loads(Path(args.config).read_text()))
    for name, attr in [
        ("steps", "steps"),
        ("lr", "lr"),
        ("seed", "seed"),
        ("rays", "rays_per_image"),
        ("samples", "n_samples"),
        ("occ_lambda", "occ_lambda"),
    ]:
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, attr, v)
    if getattr(args, "budget", None):
        h, w = (int(x) for x in args.budget.split("x"))
        cfg.render_budget = (h, w)
    return cfg


def _cmd_train(args) -> int:
    cfg = _load_train_config(args)
    records = load_dataset(args.dataset, split="train")
    if not records:
        print("dataset has no train records", file=sys.stderr)
        return 1
    samples = [record_to_sample(r) for r in records]
    cfg.log_csv = args.log_csv
    bundle, stats = train(samples, cfg, checkpoint_path=args.out)
    print(f"trained {stats.used} steps ({stats.skipped} skipped); checkpoint: {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    records = load_dataset(args.dataset, split=args.split)
    if not records:
        print("no records to evaluate", file=sys.stderr)
        return 1
    if args.predictions:
        report = EvalReport()
        from PIL import Image

        for rec in records:
            p = Path(args.predictions) / f"{rec.record_id}.png"
            if not p.exists():
                report.skipped_samples += 1
                continue
            pred = np.asarray(Image.open(p).convert("RGB"), dtype=np.float64) / 255.0
            report.rows.append(
                EvalRow(record_id=rec.record_id, psnr=psnr(pred, rec.crop), ssim=ssim(pred, rec.crop))
            )
        reports = {"predictions": report}
    else:
        from objrf.evaluation import NovelViewOptions, evaluate_novel_views

        bundle = ModelBundle.load(args.checkpoint)
        options = NovelViewOptions(
            n_samples=args.samples or 16,
            run_tto=args.tto,
            run_auto_decode=args.auto_decode,
            seed=args.seed or 0,
        )
        reports = evaluate_novel_views(bundle, records, options)
    out = Path(args.out) if args.out else None
    for method, report in reports.items():
        print(f"== {method}")
        print(report.table())
        if out:
            out.mkdir(parents=True, exist_ok=True)
            report.save(out / f"{method}.json", out / f"{method}.csv")
    return 0


def _cmd_tto(args) -> int:
    records = load_dataset(args.dataset)
    rec = next((r for r in records if r.record_id == args.record), None)
    if rec is None:
        print(f"record {args.record!r} not found", file=sys.stderr)
        return 1
    bundle = ModelBundle.load(args.checkpoint)
    flags = TTOFlags(shape=not args.no_shape, appearance=not args.no_appearance, pose=not args.no_pose)
    cfg = TrainConfig(n_samples=args.samples, rays_per_image=args.rays)
    result = test_time_optimize(
        bundle,
        record_to_sample(rec),
        flags,
        iterations=args.iterations,
        config=cfg,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "codes.json").write_text(
        json.dumps(
            {
                "shape_code": [float(v) for v in result.shape_code],
                "appearance_code": [float(v) for v in result.appearance_code],
                "box": result.box.to_json(),
                "initial_loss": result.initial_loss,
                "final_loss": result.final_loss,
                "reverted": result.reverted,
            }
        )
    )
    field = bundle.field_for_codes(result.shape_code, result.appearance_code)
    h, w = rec.crop.shape[:2]
    render = render_view(
        field, result.box, rec.camera, (0.0, 0.0, float(w), float(h)), (h, w), n_samples=args.samples
    )
    write_view(render, out, "refined")
    print(f"tto done: initial={result.initial_loss} final={result.final_loss} -> {out}")
    return 0


def spiral_cameras(box: ObjectBox, n: int, turns: float = 2.0, radius_scale: float = 3.0):
    """Camera poses on an Archimedean spiral around the box center.

    Positions are expressed in the same frame as the box (the input
    camera's frame); radius grows linearly with angle.
    """
    center = box.pose.translation
    up = box.pose.matrix[:, 2]
    r_max = radius_scale * float(np.max(box.size))
    r_min = 0.45 * r_max
    out = []
    for k in range(n):
        s = k / max(1, n - 1)
        theta = turns * 2.0 * math.pi * s
        radius = r_min + (r_max - r_min) * s
        elev = math.radians(10.0 + 25.0 * s)
        offset = (
            radius * math.cos(elev) * (math.cos(theta) * _ortho1(up) + math.sin(theta) * _ortho2(up))
            + radius * math.sin(elev) * up
        )
        out.append(look_at_pose(center + offset, center, up=up))
    return out


def _ortho1(up: np.ndarray) -> np.ndarray:
    v = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(v, up)) > 0.9:
        v = np.array([0.0, 1.0, 0.0])
    v = v - np.dot(v, up) * up
    return v / np.linalg.norm(v)


def _ortho2(up: np.ndarray) -> np.ndarray:
    return np.cross(up, _ortho1(up))


def _cmd_render(args) -> int:
    bundle = ModelBundle.load(args.checkpoint)
    records = load_dataset(args.dataset)
    rec = next((r for r in records if r.record_id == args.record), None)
    if rec is None:
        print(f"record {args.record!r} not found", file=sys.stderr)
        return 1
    from objrf.tape import no_grad

    with no_grad():
        sc, ac = bundle.encode(rec.crop)
    field = bundle.field_for_codes(sc.data, ac.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.views.startswith("spiral:"):
        n = int(args.views.split(":", 1)[1])
        size = args.size
        f = float(size)
        cam = CameraIntrinsics(f, f, size / 2.0, size / 2.0, size, size)
        for k, cam_pose in enumerate(spiral_cameras(rec.box, n)):
            box_cam = box_in_camera(rec.box, cam_pose)
            render = render_view(
                field, box_cam, cam, (0.0, 0.0, float(size), float(size)), (size, size),
                n_samples=args.samples,
            )
            write_view(render, out, f"view_{k:03d}")
        print(f"wrote {n} spiral views to {out}")
    else:
        h, w = rec.crop.shape[:2]
        render = render_view(
            field, rec.box, rec.camera, (0.0, 0.0, float(w), float(h)), (h, w), n_samples=args.samples
        )
        write_view(render, out, "input_view")
        print(f"wrote input view render to {out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from objrf.service import create_app

    app = create_app(
        checkpoint=args.checkpoint,
        max_side=args.max_side,
        n_samples=args.samples,
        static_dir=args.static,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="objrf", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("synth-data", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--objects", type=int, default=10)
    g.add_argument("--views", type=int, default=1)
    g.add_argument("--val-objects", type=int, default=0)
    g.add_argument("--val-views", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--occluder-prob", type=float, default=0.0)
    g.add_argument("--perturb-rot", type=float, default=0.0, help="mean rotation error, degrees")
    g.add_argument("--perturb-trans", type=float, default=0.0, help="mean translation error, units")
    g.add_argument("--image-height", type=int, default=160)
    g.add_argument("--image-width", type=int, default=240)
    g.add_argument("--focal", type=float, default=200.0)
    g.set_defaults(func=_cmd_synth_data)

    t = sub.add_parser("train", help="train on the train split of a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON training config")
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--rays", type=int)
    t.add_argument("--samples", type=int)
    t.add_argument("--occ-lambda", dest="occ_lambda", type=float)
    t.add_argument("--budget", help="render budget HxW, e.g. 80x120")
    t.add_argument("--log-csv")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("evaluate", help="novel-view metrics on the val split")
    e.add_argument("--dataset", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--predictions", help="directory of <record_id>.png to score instead")
    e.add_argument("--split", default="val")
    e.add_argument("--tto", action="store_true")
    e.add_argument("--auto-decode", action="store_true")
    e.add_argument("--samples", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="directory for report JSON/CSV")
    e.set_defaults(func=_cmd_evaluate)

    o = sub.add_parser("tto", help="test-time optimization for one record")
    o.add_argument("--dataset", required=True)
    o.add_argument("--checkpoint", required=True)
    o.add_argument("--record", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--iterations", type=int, default=32)
    o.add_argument("--no-shape", action="store_true")
    o.add_argument("--no-appearance", action="store_true")
    o.add_argument("--no-pose", action="store_true")
    o.add_argument("--samples", type=int, default=16)
    o.add_argument("--rays", type=int, default=512)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=_cmd_tto)

    r = sub.add_parser("render", help="render novel views for a record")
    r.add_argument("--dataset", required=True)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--record", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--views", default="input", help="'input' or 'spiral:N'")
    r.add_argument("--size", type=int, default=64)
    r.add_argument("--samples", type=int, default=16)
    r.set_defaults(func=_cmd_render)

    s = sub.add_parser("serve", help="run the HTTP render/edit service")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--max-side", type=int, default=512)
    s.add_argument("--samples", type=int, default=16)
    s.add_argument("--static", help="static frontend bundle directory")
    s.set_defaults(func=_cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
