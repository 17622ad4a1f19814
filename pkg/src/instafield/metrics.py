"""Evaluation metrics: semantic mIoU, conventional Panoptic Quality with
background filtering, and binary pixel accuracy."""

from __future__ import annotations

import numpy as np

IGNORE = 65535
UNLABELED = 65535
BACKGROUND = 0


def _as_image_list(x):
    if isinstance(x, np.ndarray) and x.ndim == 2:
        return [x]
    return list(x)


def miou(pred, gt, num_classes: int):
    """Per-class IoU = TP/(TP+FP+FN) pooled over images, and its mean.

    IGNORE pixels in gt are excluded; classes absent from both prediction
    and ground truth are excluded from the mean. Returns (per_class, mean)
    with absent classes as nan in per_class.
    """
    preds = _as_image_list(pred)
    gts = _as_image_list(gt)
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(preds, gts):
        p = np.asarray(p)
        g = np.asarray(g)
        if p.shape != g.shape:
            raise ValueError("pred/gt dimensions differ")
        valid = (g != IGNORE) & (p != IGNORE)
        conf += np.bincount(
            (g[valid].astype(np.int64) * num_classes + p[valid].astype(np.int64)),
            minlength=num_classes * num_classes).reshape(num_classes, num_classes)
    if conf.sum() == 0:
        raise ValueError("no valid pixels")
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    denom = tp + fp + fn
    per_class = np.where(denom > 0, tp / np.maximum(denom, 1), np.nan)
    present = denom > 0
    return per_class, float(np.mean(per_class[present]))


def _frame_pq_stats(pred_ids, pred_classes, gt_ids, gt_classes,
                    background_classes):
    """Per-class (iou_sum, tp, fp, fn) for one frame."""
    background_classes = set(background_classes)
    void = gt_ids == UNLABELED

    def segments(ids, classes):
        segs = {}
        for sid in np.unique(ids):
            sid = int(sid)
            if sid in (BACKGROUND, UNLABELED):
                continue
            cls = classes.get(sid, BACKGROUND)
            if cls in background_classes:
                continue
            pix = (ids == sid) & ~void
            if np.count_nonzero(pix) < 1:
                continue
            segs[sid] = (cls, pix)
        return segs

    pred_segs = segments(pred_ids, pred_classes)
    gt_segs = segments(gt_ids, gt_classes)
    stats = {}

    def bucket(cls):
        return stats.setdefault(cls, [0.0, 0, 0, 0])  # iou_sum, tp, fp, fn

    matched_pred = set()
    for gid, (cls, gpix) in gt_segs.items():
        best = None
        for pid, (pcls, ppix) in pred_segs.items():
            if pcls != cls or pid in matched_pred:
                continue
            inter = np.count_nonzero(gpix & ppix)
            if inter == 0:
                continue
            union = np.count_nonzero(gpix | ppix)
            iou = inter / union
            if iou > 0.5:  # provably unique per gt segment
                best = (pid, iou)
                break
        if best is not None:
            b = bucket(cls)
            b[0] += best[1]
            b[1] += 1
            matched_pred.add(best[0])
        else:
            bucket(cls)[3] += 1
    for pid, (cls, _) in pred_segs.items():
        if pid not in matched_pred:
            bucket(cls)[2] += 1
    return stats


def _pq_from_stats(stats):
    per_class = {}
    for cls, (iou_sum, tp, fp, fn) in stats.items():
        denom = tp + fp / 2 + fn / 2
        pq = iou_sum / denom if denom > 0 else 0.0
        sq = iou_sum / tp if tp > 0 else 0.0
        rq = tp / denom if denom > 0 else 0.0
        per_class[cls] = {"pq": pq, "sq": sq, "rq": rq,
                          "tp": tp, "fp": fp, "fn": fn}
    if not per_class:
        return {"pq": 0.0, "sq": 0.0, "rq": 0.0, "per_class": per_class}
    return {
        "pq": float(np.mean([v["pq"] for v in per_class.values()])),
        "sq": float(np.mean([v["sq"] for v in per_class.values()])),
        "rq": float(np.mean([v["rq"] for v in per_class.values()])),
        "per_class": per_class,
    }


def panoptic_quality(pred, gt, background_classes=(0,)):
    """Conventional PQ: segments match iff IoU > 0.5,
    PQ = sum_TP IoU / (|TP| + |FP|/2 + |FN|/2), averaged over classes.

    pred and gt are (ids, id_to_class) pairs or lists of such pairs (one
    per frame). Background classes are removed before matching; gt pixels
    with the UNLABELED sentinel are void. Multi-frame input averages
    per-frame PQ (no cross-frame identity); the pooled variant is reported
    alongside.
    """
    if isinstance(pred, tuple):
        pred = [pred]
        gt = [gt]
    if len(pred) != len(gt):
        raise ValueError("pred/gt frame counts differ")
    per_view = []
    pooled = {}
    for (p_ids, p_cls), (g_ids, g_cls) in zip(pred, gt):
        p_ids = np.asarray(p_ids.ids if hasattr(p_ids, "ids") else p_ids)
        g_ids = np.asarray(g_ids.ids if hasattr(g_ids, "ids") else g_ids)
        if p_ids.shape != g_ids.shape:
            raise ValueError("pred/gt dimensions differ")
        stats = _frame_pq_stats(p_ids, p_cls, g_ids, g_cls,
                                background_classes)
        per_view.append(_pq_from_stats(stats))
        for cls, s in stats.items():
            acc = pooled.setdefault(cls, [0.0, 0, 0, 0])
            for i in range(4):
                acc[i] += s[i]
    result = {
        "pq": float(np.mean([v["pq"] for v in per_view])),
        "sq": float(np.mean([v["sq"] for v in per_view])),
        "rq": float(np.mean([v["rq"] for v in per_view])),
        "per_view": per_view,
        "pooled": _pq_from_stats(pooled),
    }
    result["per_class"] = result["pooled"]["per_class"]
    return result


def pixel_accuracy(pred: np.ndarray, gt: np.ndarray) -> float:
    """Fraction of agreeing pixels between two same-shape images."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("pred/gt dimensions differ")
    return float(np.count_nonzero(pred == gt) / pred.size)
