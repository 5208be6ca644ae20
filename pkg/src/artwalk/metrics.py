"""Detection evaluation: IoU matching, PR curves, AP@0.5, max-F1, FDR.

Matching uses strict inequalities throughout: a detection participates only
when objectness > conf_min, and matches a ground truth only when IoU > iou_min.
The FDR operating point is fixed at conf 0.3 / IoU 0.5.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compose import GroundTruthBox
from .detect import Detection
from .errors import InputError

FDR_CONF = 0.3
FDR_IOU = 0.5


def _box(b) -> tuple[float, float, float, float]:
    if isinstance(b, (tuple, list)):
        return (float(b[0]), float(b[1]), float(b[2]), float(b[3]))
    return (float(b.x), float(b.y), float(b.w), float(b.h))


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes; 0 when disjoint."""
    ax, ay, aw, ah = _box(a)
    bx, by, bw, bh = _box(b)
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome; each detection and ground truth matches at most once."""

    tp: int
    fp: int
    fn: int
    matches: tuple[tuple[int, int, float], ...]  # (detection idx, gt idx, IoU)

    def to_json(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "matches": [list(m) for m in self.matches],
        }


@dataclass(frozen=True)
class PRCurve:
    """(recall, precision, threshold) points ordered by descending threshold."""

    points: tuple[tuple[float, float, float], ...]


@dataclass(frozen=True)
class MetricsReport:
    max_f1: float
    precision_at_max_f1: float
    recall_at_max_f1: float
    ap50: float
    fdr: float
    counts: MatchResult
    warning: str | None = None

    def to_json(self) -> dict:
        doc = {
            "max_f1": self.max_f1,
            "precision_at_max_f1": self.precision_at_max_f1,
            "recall_at_max_f1": self.recall_at_max_f1,
            "ap50": self.ap50,
            "fdr": self.fdr,
            "counts": self.counts.to_json(),
        }
        if self.warning:
            doc["warning"] = self.warning
        return doc


def match(
    dets: list[Detection],
    gts: list[GroundTruthBox],
    iou_min: float,
    conf_min: float,
) -> MatchResult:
    """Greedy matcher, highest objectness first.

    Detections with objectness > conf_min are processed in descending
    objectness (ties: smaller index first); each takes the unmatched ground
    truth with the highest IoU, provided IoU > iou_min (ties: smaller ground
    truth index). Matched detections are TPs, the rest FPs; unmatched ground
    truths are FNs.
    """
    groups = _match_groups([(dets, gts)], iou_min, conf_min)
    return groups


def _match_groups(
    groups: list[tuple[list[Detection], list[GroundTruthBox]]],
    iou_min: float,
    conf_min: float,
) -> MatchResult:
    """Match each (dets, gts) group independently; pool counts with global indices."""
    tp = fp = fn = 0
    matches: list[tuple[int, int, float]] = []
    det_base = gt_base = 0
    for dets, gts in groups:
        kept = [(i, d) for i, d in enumerate(dets) if d.objectness > conf_min]
        kept.sort(key=lambda pair: (-pair[1].objectness, pair[0]))
        taken = [False] * len(gts)
        for det_idx, det in kept:
            best_iou = iou_min
            best_gt = -1
            for gt_idx, gt in enumerate(gts):
                if taken[gt_idx]:
                    continue
                v = iou(det, gt)
                if v > best_iou:
                    best_iou = v
                    best_gt = gt_idx
            if best_gt >= 0:
                taken[best_gt] = True
                tp += 1
                matches.append((det_base + det_idx, gt_base + best_gt, best_iou))
            else:
                fp += 1
        fn += len(gts) - sum(taken)
        det_base += len(dets)
        gt_base += len(gts)
    return MatchResult(tp=tp, fp=fp, fn=fn, matches=tuple(matches))


def _thresholds(groups) -> list[float]:
    values = sorted({d.objectness for dets, _ in groups for d in dets}, reverse=True)
    return values


def _pr_points(groups, iou_min: float) -> list[tuple[float, float, float]]:
    n_gt = sum(len(gts) for _, gts in groups)
    points = []
    for t in _thresholds(groups):
        # conf_min just below t: the strict matcher then includes objectness >= t
        conf_min = np.nextafter(t, -np.inf)
        res = _match_groups(groups, iou_min, conf_min)
        precision = res.tp / (res.tp + res.fp) if (res.tp + res.fp) else 0.0
        recall = res.tp / n_gt if n_gt else 0.0
        points.append((recall, precision, t))
    return points


def pr_curve(dets: list[Detection], gts: list[GroundTruthBox], iou_min: float) -> PRCurve:
    """Precision/recall at every distinct objectness value, descending."""
    return PRCurve(points=tuple(_pr_points([(dets, gts)], iou_min)))


def ap50(curve: PRCurve, scheme: str = "all_points") -> float:
    """Interpolated average precision over the monotone precision envelope.

    scheme "all_points" integrates the envelope exactly over recall steps;
    "101pt" averages the envelope at the 101 recall levels 0.00..1.00.
    """
    if scheme not in ("all_points", "101pt"):
        raise InputError(f"unknown AP scheme {scheme!r}")
    if not curve.points:
        return 0.0
    recalls = [p[0] for p in curve.points]
    precisions = [p[1] for p in curve.points]
    envelope = []
    best = 0.0
    for p in reversed(precisions):
        best = max(best, p)
        envelope.append(best)
    envelope.reverse()
    if scheme == "101pt":
        total = 0.0
        for k in range(101):
            r = k / 100.0
            total += max(
                (e for rec, e in zip(recalls, envelope) if rec >= r - 1e-12),
                default=0.0,
            )
        return total / 101.0
    area = 0.0
    prev_r = 0.0
    for r, p_env in zip(recalls, envelope):
        area += (r - prev_r) * p_env
        prev_r = r
    return area


def max_f1(
    dets: list[Detection], gts: list[GroundTruthBox], iou_min: float
) -> tuple[float, float, float, float]:
    """(F1, precision, recall, threshold) maximizing F1 over all thresholds.

    Ties go to the highest threshold; with no detections returns (0, 0, 0, 1.0).
    """
    return _max_f1_groups([(dets, gts)], iou_min)


def _max_f1_groups(groups, iou_min: float) -> tuple[float, float, float, float]:
    n_gt = sum(len(gts) for _, gts in groups)
    best = (0.0, 0.0, 0.0, 1.0)
    for t in _thresholds(groups):  # descending: ties keep the highest threshold
        res = _match_groups(groups, iou_min, np.nextafter(t, -np.inf))
        precision = res.tp / (res.tp + res.fp) if (res.tp + res.fp) else 0.0
        recall = res.tp / n_gt if n_gt else 0.0
        f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
        if f1 > best[0]:
            best = (f1, precision, recall, t)
    return best


def fdr(dets: list[Detection], gts: list[GroundTruthBox]) -> float:
    """FP / (FP + TP) at the fixed operating point (conf > 0.3, IoU > 0.5); 0 when empty."""
    res = match(dets, gts, FDR_IOU, FDR_CONF)
    denom = res.fp + res.tp
    return res.fp / denom if denom else 0.0


def evaluate_dataset(
    detections_per_image: list[list[Detection]],
    ground_truth_per_image: list[list[GroundTruthBox]],
) -> MetricsReport:
    """Pool detections and ground truths across images (matching stays per image)."""
    if len(detections_per_image) != len(ground_truth_per_image):
        raise InputError(
            f"{len(detections_per_image)} detection lists vs "
            f"{len(ground_truth_per_image)} ground-truth lists"
        )
    groups = list(zip(detections_per_image, ground_truth_per_image))
    warning = None
    if not groups:
        warning = "empty dataset"
        warnings.warn(warning, stacklevel=2)
        return MetricsReport(0.0, 0.0, 0.0, 0.0, 0.0, MatchResult(0, 0, 0, ()), warning)

    f1, precision, recall, _threshold = _max_f1_groups(groups, FDR_IOU)
    curve = PRCurve(points=tuple(_pr_points(groups, FDR_IOU)))
    counts = _match_groups(groups, FDR_IOU, FDR_CONF)
    denom = counts.fp + counts.tp
    return MetricsReport(
        max_f1=f1,
        precision_at_max_f1=precision,
        recall_at_max_f1=recall,
        ap50=ap50(curve),
        fdr=counts.fp / denom if denom else 0.0,
        counts=counts,
        warning=warning,
    )


# -- detections interchange file ---------------------------------------------


def write_detections_file(path: str | Path, records: list[dict]) -> None:
    """records: [{"image": str, "detections": [Detection...], "ground_truth": [...]}]"""
    doc = [
        {
            "image": rec["image"],
            "detections": [d.to_json() for d in rec["detections"]],
            "ground_truth": [
                {"x": g.x, "y": g.y, "w": g.w, "h": g.h} for g in rec["ground_truth"]
            ],
        }
        for rec in records
    ]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_detections_file(path: str | Path) -> list[dict]:
    doc = json.loads(Path(path).read_text())
    return [
        {
            "image": rec["image"],
            "detections": [Detection.from_json(d) for d in rec["detections"]],
            "ground_truth": [
                GroundTruthBox(g["x"], g["y"], g["w"], g["h"])
                for g in rec["ground_truth"]
            ],
        }
        for rec in doc
    ]
