"""IoU, greedy matching, PASCAL VOC AP/mAP, the equality check and failure typing.

The detector's output on the untouched background acts as ground truth; the
output on the synthetic image (with the inserted object's prediction removed)
is scored against it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import BBox, Detection, DetectionSet, boxes_array
from .errors import ContractViolation

EQUALITY_TOL = 1e-12


@dataclass(frozen=True)
class MetricsConfig:
    iou_threshold: float = 0.5
    interpolation: str = "all-point"

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold}")
        if self.interpolation not in ("all-point", "eleven-point"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


@dataclass(frozen=True)
class MatchResult:
    pairs: Tuple[Tuple[int, int, float], ...]
    unmatched_predictions: Tuple[int, ...]
    unmatched_ground_truth: Tuple[int, ...]


class FailureKind(str, Enum):
    RECOGNITION_MISS = "recognition-miss"
    RECOGNITION_SPURIOUS = "recognition-spurious"
    CLASSIFICATION = "classification"
    LOCALIZATION = "localization"


@dataclass(frozen=True)
class FailureType:
    """One classified discrepancy; indices point into the two detection sets."""

    kind: FailureKind
    prediction: Optional[int] = None
    baseline: Optional[int] = None

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "prediction": self.prediction, "baseline": self.baseline}

    @classmethod
    def from_json(cls, obj: dict) -> "FailureType":
        return cls(FailureKind(obj["kind"]), obj.get("prediction"), obj.get("baseline"))


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between ``(n, 4)`` and ``(m, 4)`` arrays of ``x, y, w, h``."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0, None)
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + b[:, 2] * b[:, 3] - inter
    return inter / union


def rank_key(d: Detection) -> tuple:
    """Descending confidence, ties broken by label then box coordinates."""
    return (-d.confidence, d.label, d.box.x, d.box.y, d.box.w, d.box.h)


def ranked_indices(detections: Sequence[Detection]) -> List[int]:
    return sorted(range(len(detections)), key=lambda i: rank_key(detections[i]))


def _greedy(order, ious: np.ndarray, allowed: np.ndarray, eps: float):
    """Walk predictions in ``order`` and claim the best free ground truth.

    ``allowed[p, g]`` says whether prediction ``p`` may match ground truth ``g``
    at all (same label).  Returns ``{pred: (gt, iou)}``.
    """
    taken = np.zeros(ious.shape[1], dtype=bool)
    matches = {}
    for p in order:
        cand = np.where(allowed[p] & ~taken, ious[p], -1.0)
        if cand.size == 0:
            continue
        g = int(np.argmax(cand))
        if cand[g] >= eps:
            taken[g] = True
            matches[p] = (g, float(cand[g]))
    return matches


def match_greedy(predictions: DetectionSet, ground_truth: DetectionSet, cfg: MetricsConfig = MetricsConfig()) -> MatchResult:
    preds, gts = list(predictions), list(ground_truth)
    ious = pairwise_iou(boxes_array([d.box for d in preds]), boxes_array([d.box for d in gts]))
    allowed = np.array([[p.label == g.label for g in gts] for p in preds], dtype=bool).reshape(len(preds), len(gts))
    matches = _greedy(ranked_indices(preds), ious, allowed, cfg.iou_threshold)
    matched_gt = {g for g, _ in matches.values()}
    return MatchResult(
        pairs=tuple((p, g, v) for p, (g, v) in sorted(matches.items())),
        unmatched_predictions=tuple(i for i in range(len(preds)) if i not in matches),
        unmatched_ground_truth=tuple(i for i in range(len(gts)) if i not in matched_gt),
    )


def voc_ap(predictions: Sequence[Detection], ground_truth: Sequence[BBox], cfg: MetricsConfig = MetricsConfig()) -> float:
    """Average precision of single-class predictions against ground-truth boxes.

    Labels on ``predictions`` are ignored; the caller has already split by
    class.  With no ground truth the result is 0.0.
    """
    n_gt = len(ground_truth)
    if n_gt == 0 or not predictions:
        return 0.0
    preds = list(predictions)
    order = ranked_indices(preds)
    ious = pairwise_iou(boxes_array([d.box for d in preds]), boxes_array(list(ground_truth)))
    allowed = np.ones(ious.shape, dtype=bool)
    matches = _greedy(order, ious, allowed, cfg.iou_threshold)

    tp = np.array([1.0 if p in matches else 0.0 for p in order])
    tp_cum = np.cumsum(tp)
    recall = tp_cum / n_gt
    precision = tp_cum / np.arange(1, len(order) + 1)

    if cfg.interpolation == "eleven-point":
        ap = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            above = precision[recall >= t]
            ap += (above.max() if above.size else 0.0) / 11.0
        return float(ap)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def per_class_ap(predictions: DetectionSet, ground_truth: DetectionSet, cfg: MetricsConfig = MetricsConfig()) -> dict:
    """AP for every label seen on either side; prediction-only labels score 0."""
    labels = sorted({d.label for d in ground_truth} | {d.label for d in predictions})
    out = {}
    for label in labels:
        gt = [d.box for d in ground_truth if d.label == label]
        pr = [d for d in predictions if d.label == label]
        out[label] = voc_ap(pr, gt, cfg) if gt else 0.0
    return out


def map_score(predictions: DetectionSet, ground_truth: DetectionSet, cfg: MetricsConfig = MetricsConfig()) -> float:
    if len(ground_truth) == 0:
        raise ContractViolation("map_score needs at least one ground-truth detection")
    aps = per_class_ap(predictions, ground_truth, cfg)
    return float(sum(aps.values()) / len(aps))


def equality_criterion(baseline: DetectionSet, synthetic_pruned: DetectionSet, cfg: MetricsConfig = MetricsConfig()) -> Tuple[bool, float]:
    m = map_score(synthetic_pruned, baseline, cfg)
    return abs(m - 1.0) <= EQUALITY_TOL, m


def classify_failures(baseline: DetectionSet, synthetic_pruned: DetectionSet, cfg: MetricsConfig = MetricsConfig()) -> List[FailureType]:
    """Explain why the synthetic output disagrees with the baseline.

    Every ground truth and prediction left unmatched by ``match_greedy`` is
    typed.  An unmatched baseline box is a classification failure when some
    differently-labelled prediction covers it at IoU >= threshold, a
    localization failure when a same-label prediction overlaps it below the
    threshold, and a recognition miss otherwise.  An unmatched prediction is
    typed the same way from its side; one that sits on nothing (or duplicates
    an already matched box) is spurious.  Several types may be reported for
    one pair of sets.
    """
    holds, _ = equality_criterion(baseline, synthetic_pruned, cfg)
    if holds:
        raise ContractViolation("classify_failures called on a pair that satisfies the equality criterion")
    eps = cfg.iou_threshold
    gts, preds = list(baseline), list(synthetic_pruned)
    match = match_greedy(synthetic_pruned, baseline, cfg)
    ious = pairwise_iou(boxes_array([d.box for d in preds]), boxes_array([d.box for d in gts]))
    ious = ious.reshape(len(preds), len(gts))

    found: List[FailureType] = []

    def add(ft: FailureType) -> None:
        if ft not in found:
            found.append(ft)

    for g in match.unmatched_ground_truth:
        label = gts[g].label
        relabel = [p for p in range(len(preds)) if preds[p].label != label and ious[p, g] >= eps]
        drift = [p for p in range(len(preds)) if preds[p].label == label and 0.0 < ious[p, g] < eps]
        if relabel:
            for p in relabel:
                add(FailureType(FailureKind.CLASSIFICATION, p, g))
        elif drift:
            for p in drift:
                add(FailureType(FailureKind.LOCALIZATION, p, g))
        else:
            add(FailureType(FailureKind.RECOGNITION_MISS, None, g))

    for p in match.unmatched_predictions:
        label = preds[p].label
        relabel = [g for g in range(len(gts)) if gts[g].label != label and ious[p, g] >= eps]
        same = [ious[p, g] for g in range(len(gts)) if gts[g].label == label]
        best_same = max(same, default=0.0)
        if relabel:
            for g in relabel:
                add(FailureType(FailureKind.CLASSIFICATION, p, g))
        elif 0.0 < best_same < eps:
            g = max((g for g in range(len(gts)) if gts[g].label == label), key=lambda g: ious[p, g])
            add(FailureType(FailureKind.LOCALIZATION, p, g))
        else:
            add(FailureType(FailureKind.RECOGNITION_SPURIOUS, p, None))

    if not found:
        raise ContractViolation("failing pair produced no failure type")
    return found
