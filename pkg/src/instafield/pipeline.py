"""End-to-end orchestration: match -> stage-1 train -> render intermediate
labels -> refine -> stage-2 train -> evaluate, with every intermediate
artifact written under stable names and a hashed manifest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .boxes import load_detections
from .cameras import load_cameras
from .grids import VoxelGrid
from .images import read_label_pgm, write_label_pgm, write_ppm
from .matching import (LabelImage, PanopticInput, build_registry,
                       refine_masks_builtin)
from .metrics import miou, panoptic_quality
from .render import SceneModel, render_image
from .train import TrainConfig, train_instance_field


class StageError(RuntimeError):
    def __init__(self, stage: str, detail: str):
        super().__init__(f"stage {stage!r} failed: {detail}")
        self.stage = stage


@dataclass
class PipelineConfig:
    fixture_dir: str = "."
    out_dir: str = "out"
    train: TrainConfig = field(default_factory=TrainConfig)
    iou_min: float = 0.05
    occupancy_threshold: float = 0.5
    score_threshold: float = 0.5
    nms_threshold: float = 0.15
    projection_samples: int = 64
    render_samples: int = 128
    refiner: str = "builtin"  # builtin | external-files
    refine_radius: int = 2
    external_masks_dir: str | None = None
    background_classes: tuple = (0,)
    seed: int = 0

    def __post_init__(self):
        for name in ("iou_min", "occupancy_threshold", "score_threshold",
                     "nms_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)


def load_pipeline_config(source) -> PipelineConfig:
    if isinstance(source, PipelineConfig):
        return source
    if isinstance(source, dict):
        return PipelineConfig(**source)
    data = json.loads(Path(source).read_text())
    return PipelineConfig(**data)


def _load_fixture_inputs(cfg: PipelineConfig):
    root = Path(cfg.fixture_dir)
    density = VoxelGrid.load(root / "density.json")
    color = VoxelGrid.load(root / "color.json")
    train_cams = load_cameras(root / "cameras_train.json")
    test_cams = load_cameras(root / "cameras_test.json")
    detections = load_detections(root / "detections.json")
    panoptic = []
    for vi in range(len(train_cams)):
        ids, classes = read_label_pgm(root / "views" / f"train_{vi:03d}_panoptic.pgm",
                                      with_classes=True)
        panoptic.append(PanopticInput(labels=LabelImage.from_ids(ids),
                                      id_to_class=classes))
    gt_test = []
    for vi in range(len(test_cams)):
        p = root / "views" / f"test_{vi:03d}_gt.pgm"
        if p.exists():
            gt_test.append(LabelImage.from_ids(read_label_pgm(p)))
    gt_semantic = {}
    sem_path = root / "semantic_map.json"
    if sem_path.exists():
        gt_semantic = {int(k): int(v)
                       for k, v in json.loads(sem_path.read_text()).items()}
    return {"density": density, "color": color, "train_cams": train_cams,
            "test_cams": test_cams, "detections": detections,
            "panoptic": panoptic, "gt_test": gt_test,
            "gt_semantic": gt_semantic}


_PALETTE = np.array([
    [0, 0, 0], [230, 60, 50], [60, 180, 75], [55, 90, 220], [240, 200, 40],
    [150, 60, 200], [70, 200, 200], [245, 130, 48], [145, 220, 80],
], dtype=np.float64) / 255.0


def label_gallery(ids: np.ndarray) -> np.ndarray:
    """Colorize an id map for the rendered galleries."""
    safe = np.where(ids == 65535, 0, ids)
    return _PALETTE[safe % len(_PALETTE)]


def evaluate_views(pred_labels, pred_semantic, gt_labels, gt_semantic,
                   num_classes: int, background_classes=(0,)) -> dict:
    """Metric report over paired label images: mIoU over mapped semantics
    plus conventional PQ with background filtering."""
    sem_pred, sem_gt = [], []
    for p, g in zip(pred_labels, gt_labels):
        sp = np.zeros_like(p.ids)
        for gid, cls in pred_semantic.items():
            sp[p.ids == gid] = cls
        sp[p.ids == 65535] = 65535
        sg = np.zeros_like(g.ids)
        for gid, cls in gt_semantic.items():
            sg[g.ids == gid] = cls
        sem_pred.append(sp)
        sem_gt.append(sg)
    per_class, mean_iou = miou(sem_pred, sem_gt, num_classes)
    pq = panoptic_quality([(p, pred_semantic) for p in pred_labels],
                          [(g, gt_semantic) for g in gt_labels],
                          background_classes=background_classes)
    return {
        "miou": mean_iou,
        "per_class_iou": {str(i): (None if np.isnan(v) else float(v))
                          for i, v in enumerate(per_class)},
        "pq": pq["pq"], "sq": pq["sq"], "rq": pq["rq"],
        "pq_pooled": pq["pooled"]["pq"],
        "per_class": {str(c): {k: float(v) for k, v in s.items()}
                      for c, s in pq["per_class"].items()},
        "per_view": [{"pq": v["pq"], "sq": v["sq"], "rq": v["rq"]}
                     for v in pq["per_view"]],
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(config) -> dict:
    """Execute the full two-stage loop; returns the metric report."""
    cfg = load_pipeline_config(config)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    try:
        inputs = _load_fixture_inputs(cfg)
    except Exception as exc:
        raise StageError("load-inputs", str(exc)) from exc
    density, color = inputs["density"], inputs["color"]
    scene = SceneModel(density=density, color=color)
    train_cams = inputs["train_cams"]

    # ---- stage: mask matching
    try:
        registry, matched = build_registry(
            inputs["detections"], inputs["panoptic"], train_cams, density,
            count=cfg.projection_samples,
            occupancy_threshold=cfg.occupancy_threshold, iou_min=cfg.iou_min,
            background_classes=cfg.background_classes, rng_seed=cfg.seed)
        (out / "matched").mkdir(exist_ok=True)
        for vi, lab in enumerate(matched):
            write_label_pgm(out / "matched" / f"train_{vi:03d}.pgm", lab.ids,
                            registry.semantic_map)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("match", str(exc)) from exc

    # ---- stage: first instance-field training
    try:
        views = list(zip(train_cams, matched))
        logits1, log1 = train_instance_field(
            scene, views, cfg.train, steps=cfg.train.steps_stage1,
            log_path=out / "train_stage1.jsonl")
        logits1_f32 = logits1.astype(np.float32)
        logits1_f32.save(out / "instance_stage1.json")
    except StageError:
        raise
    except Exception as exc:
        raise StageError("train-stage1", str(exc)) from exc

    # ---- stage: render intermediate labels, refine, retrain
    try:
        model1 = SceneModel(density, color, logits1)
        (out / "intermediate").mkdir(exist_ok=True)
        intermediate = []
        for vi, cam in enumerate(train_cams):
            img = render_image(model1, cam, cfg.render_samples, cfg.seed,
                               outputs=("instance_argmax",))
            lab = LabelImage.from_ids(img["instance_argmax"])
            intermediate.append(lab)
            write_label_pgm(out / "intermediate" / f"train_{vi:03d}.pgm",
                            lab.ids, registry.semantic_map)
    except Exception as exc:
        raise StageError("render-intermediate", str(exc)) from exc

    try:
        refined = refine_stage(cfg, intermediate, out)
        (out / "refined").mkdir(exist_ok=True)
        for vi, lab in enumerate(refined):
            write_label_pgm(out / "refined" / f"train_{vi:03d}.pgm", lab.ids,
                            registry.semantic_map)
    except Exception as exc:
        raise StageError("refine", str(exc)) from exc

    try:
        model_for_stage2 = SceneModel(density, color, logits1)
        views2 = list(zip(train_cams, refined))
        logits2, log2 = train_instance_field(
            model_for_stage2, views2, cfg.train, steps=cfg.train.steps_stage2,
            log_path=out / "train_stage2.jsonl")
        logits2.astype(np.float32).save(out / "instance_stage2.json")
    except StageError:
        raise
    except Exception as exc:
        raise StageError("train-stage2", str(exc)) from exc

    # ---- stage: evaluate + galleries on held-out views
    try:
        model2 = SceneModel(density, color, logits2)
        (out / "renders").mkdir(exist_ok=True)
        pred_labels = []
        for vi, cam in enumerate(inputs["test_cams"]):
            img = render_image(model2, cam, cfg.render_samples, cfg.seed)
            lab = LabelImage.from_ids(img["instance_argmax"])
            pred_labels.append(lab)
            write_ppm(out / "renders" / f"test_{vi:03d}_color.ppm", img["color"])
            write_ppm(out / "renders" / f"test_{vi:03d}_labels.ppm",
                      label_gallery(lab.ids))
            write_label_pgm(out / "renders" / f"test_{vi:03d}_labels.pgm",
                            lab.ids, registry.semantic_map)
        num_classes = 1 + max(
            [0] + list(registry.semantic_map.values())
            + list(inputs["gt_semantic"].values()))
        report = evaluate_views(pred_labels, registry.semantic_map,
                                inputs["gt_test"], inputs["gt_semantic"],
                                num_classes,
                                background_classes=cfg.background_classes)
        report["config"] = {"seed": cfg.seed,
                            "steps_stage1": cfg.train.steps_stage1,
                            "steps_stage2": cfg.train.steps_stage2}
        (out / "report.json").write_text(json.dumps(report, indent=2,
                                                    sort_keys=True))
    except StageError:
        raise
    except Exception as exc:
        raise StageError("evaluate", str(exc)) from exc

    artifacts = sorted(p for p in out.rglob("*") if p.is_file()
                       and p.name != "manifest.json")
    manifest = {str(p.relative_to(out)): _sha256(p) for p in artifacts}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                  sort_keys=True))
    return report


def refine_stage(cfg: PipelineConfig, intermediate, out_dir: Path):
    """Built-in morphological refinement, or externally supplied masks."""
    if cfg.refiner == "builtin":
        return [refine_masks_builtin(lab, radius=cfg.refine_radius)
                for lab in intermediate]
    if cfg.refiner == "external-files":
        if not cfg.external_masks_dir:
            raise ValueError("external-files refiner needs external_masks_dir")
        refined = []
        for vi in range(len(intermediate)):
            p = Path(cfg.external_masks_dir) / f"train_{vi:03d}.pgm"
            refined.append(LabelImage.from_ids(read_label_pgm(p)))
        return refined
    raise ValueError(f"unknown refiner {cfg.refiner!r}")
