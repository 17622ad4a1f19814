"""Command-line surface.

Subcommands: fixture, fit-radiance, match-masks, train-instance, render,
refine, evaluate, pipeline. Every subcommand is a pure function of its
input files and flags. Exit codes: 0 success, 2 config error, 3 stage
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .boxes import load_detections
from .cameras import load_cameras
from .fixtures import (CorruptionSpec, FixtureSpec, default_objects,
                       make_fixture, save_fixture)
from .grids import SceneBounds, VoxelGrid
from .images import read_label_pgm, read_ppm, write_label_pgm, write_ppm
from .matching import (LabelImage, PanopticInput, build_registry,
                       refine_masks_builtin)
from .pipeline import (PipelineConfig, StageError, evaluate_views,
                       label_gallery, load_pipeline_config, run_pipeline)
from .render import SceneModel, render_image
from .train import RadianceFitConfig, TrainConfig, fit_radiance, \
    train_instance_field


def _add_common(p):
    p.add_argument("--config", type=Path, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", type=Path, default=None)
    p.add_argument("--threads", type=int, default=0,
                   help="worker threads (0 = auto)")


def _resolve_config(args) -> PipelineConfig:
    cfg = load_pipeline_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = str(args.out_dir)
    if getattr(args, "fixture_dir", None):
        cfg.fixture_dir = str(args.fixture_dir)
    return cfg


def cmd_fixture(args) -> int:
    corruption = CorruptionSpec(permute_ids=not args.no_permute,
                                label_noise_rate=args.label_noise,
                                erosion_radius=args.erosion_radius,
                                drop_probability=args.drop_probability)
    spec = FixtureSpec(objects=default_objects(args.objects),
                       grid_dims=(args.grid_size,) * 3,
                       image_size=(args.image_size, args.image_size),
                       n_train_views=args.train_views,
                       n_test_views=args.test_views,
                       seed=args.seed if args.seed is not None else 0,
                       corruption=corruption)
    fixture = make_fixture(spec)
    save_fixture(fixture, args.out_dir or "fixture")
    print(f"fixture with {args.objects} objects written to "
          f"{args.out_dir or 'fixture'}")
    return 0


def cmd_fit_radiance(args) -> int:
    cams = load_cameras(args.cameras)
    views = []
    for vi, cam in enumerate(cams):
        views.append((cam, read_ppm(Path(args.images_dir)
                                    / f"train_{vi:03d}_rgb.ppm")))
    bounds = SceneBounds(np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))
    fit_cfg = RadianceFitConfig(dims=(args.grid_size,) * 3, steps=args.steps,
                                seed=args.seed if args.seed is not None else 0)
    model, log = fit_radiance(views, bounds, fit_cfg)
    out = Path(args.out_dir or "fit")
    out.mkdir(parents=True, exist_ok=True)
    model.density.astype(np.float32).save(out / "density.json")
    model.color.astype(np.float32).save(out / "color.json")
    print(f"final appearance loss {log[-1]['L_p']:.6f}; grids in {out}")
    return 0


def cmd_match_masks(args) -> int:
    cfg = _resolve_config(args)
    root = Path(cfg.fixture_dir)
    density = VoxelGrid.load(root / "density.json")
    cams = load_cameras(root / "cameras_train.json")
    detections = load_detections(root / "detections.json")
    panoptic = []
    for vi in range(len(cams)):
        ids, classes = read_label_pgm(
            root / "views" / f"train_{vi:03d}_panoptic.pgm", with_classes=True)
        panoptic.append(PanopticInput(LabelImage.from_ids(ids), classes))
    registry, labels = build_registry(
        detections, panoptic, cams, density, count=cfg.projection_samples,
        occupancy_threshold=cfg.occupancy_threshold, iou_min=cfg.iou_min,
        background_classes=cfg.background_classes, rng_seed=cfg.seed)
    out = Path(cfg.out_dir)
    (out / "matched").mkdir(parents=True, exist_ok=True)
    for vi, lab in enumerate(labels):
        write_label_pgm(out / "matched" / f"train_{vi:03d}.pgm", lab.ids,
                        registry.semantic_map)
    print(f"matched {len(labels)} views; semantic map "
          f"{registry.semantic_map}")
    return 0


def cmd_train_instance(args) -> int:
    cfg = _resolve_config(args)
    root = Path(cfg.fixture_dir)
    density = VoxelGrid.load(root / "density.json")
    color = VoxelGrid.load(root / "color.json")
    cams = load_cameras(root / "cameras_train.json")
    labels = [LabelImage.from_ids(read_label_pgm(Path(args.labels_dir)
                                                 / f"train_{vi:03d}.pgm"))
              for vi in range(len(cams))]
    scene = SceneModel(density, color)
    logits, log = train_instance_field(
        scene, list(zip(cams, labels)), cfg.train, steps=args.steps,
        log_path=Path(cfg.out_dir) / "train.jsonl" if cfg.out_dir else None)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logits.astype(np.float32).save(out / "instance.json")
    print(f"trained {len(log)} steps, final loss {log[-1]['total']:.6f}")
    return 0


def cmd_render(args) -> int:
    cfg = _resolve_config(args)
    root = Path(cfg.fixture_dir)
    density = VoxelGrid.load(root / "density.json")
    color = VoxelGrid.load(root / "color.json")
    logits = VoxelGrid.load(args.instance_grid) if args.instance_grid else None
    model = SceneModel(density, color, logits)
    cams = load_cameras(args.cameras or (root / "cameras_test.json"))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for vi, cam in enumerate(cams):
        img = render_image(model, cam, cfg.render_samples, cfg.seed)
        write_ppm(out / f"view_{vi:03d}_color.ppm", img["color"])
        depth = VoxelGrid(
            (cam.width, cam.height, 1), 1,
            SceneBounds([0, 0, 0], [cam.width, cam.height, 1]),
            img["depth"].astype(np.float32).reshape(1, cam.height, cam.width, 1))
        depth.save(out / f"view_{vi:03d}_depth.json")
        if logits is not None:
            write_label_pgm(out / f"view_{vi:03d}_labels.pgm",
                            img["instance_argmax"])
            write_ppm(out / f"view_{vi:03d}_labels.ppm",
                      label_gallery(img["instance_argmax"]))
    print(f"rendered {len(cams)} views into {out}")
    return 0


def cmd_refine(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src = Path(args.labels_dir)
    count = 0
    for path in sorted(src.glob("*.pgm")):
        if args.mode == "builtin":
            lab = refine_masks_builtin(LabelImage.from_ids(read_label_pgm(path)),
                                       radius=cfg.refine_radius)
        else:
            lab = LabelImage.from_ids(
                read_label_pgm(Path(args.masks_dir) / path.name))
        write_label_pgm(out / path.name, lab.ids)
        count += 1
    print(f"refined {count} label images into {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    pred_dir = Path(args.pred_dir)
    gt_dir = Path(args.gt_dir)
    pred_sem = {int(k): int(v) for k, v in
                json.loads(Path(args.pred_semantic).read_text()).items()}
    gt_sem = {int(k): int(v) for k, v in
              json.loads(Path(args.gt_semantic).read_text()).items()}
    preds, gts = [], []
    for p in sorted(pred_dir.glob("*.pgm")):
        preds.append(LabelImage.from_ids(read_label_pgm(p)))
        gts.append(LabelImage.from_ids(read_label_pgm(gt_dir / p.name)))
    num_classes = 1 + max(list(pred_sem.values()) + list(gt_sem.values()))
    report = evaluate_views(preds, pred_sem, gts, gt_sem, num_classes,
                            background_classes=cfg.background_classes)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2,
                                                sort_keys=True))
    print(f"miou {report['miou']:.4f}  pq {report['pq']:.4f}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _resolve_config(args)
    report = run_pipeline(cfg)
    print(f"pipeline done: miou {report['miou']:.4f}  pq {report['pq']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="instafield",
        description="voxel radiance + instance field pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="generate a synthetic scene")
    _add_common(p)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--grid-size", type=int, default=64)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--train-views", type=int, default=20)
    p.add_argument("--test-views", type=int, default=5)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--erosion-radius", type=int, default=0)
    p.add_argument("--drop-probability", type=float, default=0.0)
    p.add_argument("--no-permute", action="store_true")
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("fit-radiance", help="fit density+color from images")
    _add_common(p)
    p.add_argument("--cameras", type=Path, required=True)
    p.add_argument("--images-dir", type=Path, required=True)
    p.add_argument("--grid-size", type=int, default=64)
    p.add_argument("--steps", type=int, default=800)
    p.set_defaults(func=cmd_fit_radiance)

    p = sub.add_parser("match-masks", help="multi-view id matching")
    _add_common(p)
    p.add_argument("--fixture-dir", type=Path)
    p.set_defaults(func=cmd_match_masks)

    p = sub.add_parser("train-instance", help="train the instance field")
    _add_common(p)
    p.add_argument("--fixture-dir", type=Path)
    p.add_argument("--labels-dir", type=Path, required=True)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_train_instance)

    p = sub.add_parser("render", help="render color/depth/label views")
    _add_common(p)
    p.add_argument("--fixture-dir", type=Path)
    p.add_argument("--cameras", type=Path)
    p.add_argument("--instance-grid", type=Path)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("refine", help="refine label images")
    _add_common(p)
    p.add_argument("--labels-dir", type=Path, required=True)
    p.add_argument("--mode", choices=("builtin", "external"),
                   default="builtin")
    p.add_argument("--masks-dir", type=Path,
                   help="externally refined masks (mode=external)")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("evaluate", help="mIoU + PQ over label images")
    _add_common(p)
    p.add_argument("--pred-dir", type=Path, required=True)
    p.add_argument("--gt-dir", type=Path, required=True)
    p.add_argument("--pred-semantic", type=Path, required=True)
    p.add_argument("--gt-semantic", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _add_common(p)
    p.add_argument("--fixture-dir", type=Path)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        kernels.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"{exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
