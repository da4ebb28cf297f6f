"""One metamorphic trial: synthesize, query, drop the inserted object, compare."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

from .core import BBox, Detection, DetectionSet, ImageBuffer
from .errors import DetectorError
from .extraction import ObjectInstance
from .gateway.client import DetectorClient
from .gateway.protocol import QueryContext
from .insertion import Placement, composite, placed_box
from .metrics import FailureType, MetricsConfig, classify_failures, equality_criterion, iou

log = logging.getLogger(__name__)

PASS = "pass"
FAIL = "fail"
SKIPPED = "skipped"


@dataclass
class Trial:
    id: str
    background: str
    baseline: DetectionSet
    placement: Optional[Placement]
    inserted_bbox: Optional[BBox]
    category: str
    verdict: str = SKIPPED
    map: Optional[float] = None
    failures: List[FailureType] = field(default_factory=list)
    excluded: List[Detection] = field(default_factory=list)
    latency_ms: float = 0.0
    note: str = ""
    synthetic: Optional[ImageBuffer] = field(default=None, repr=False)
    # used only when no placement could be made
    planned_mode: Optional[str] = None
    planned_anchor: Optional[int] = None

    def to_record(self) -> dict:
        p = self.placement
        if p is None:
            return {
                "id": self.id,
                "background": self.background,
                "object_id": None,
                "category": self.category,
                "mode": self.planned_mode,
                "center": None,
                "scale": None,
                "anchor_index": self.planned_anchor,
                "verdict": self.verdict,
                "map": None,
                "failures": [],
                "excluded": [],
                "latency_ms": 0.0,
            }
        return {
            "id": self.id,
            "background": self.background,
            "object_id": p.object_id,
            "category": self.category,
            "mode": p.mode,
            "center": [p.center[0], p.center[1]],
            "scale": p.scale,
            "anchor_index": p.anchor_index,
            "verdict": self.verdict,
            "map": self.map,
            "failures": [f.to_json() for f in self.failures],
            "excluded": [d.to_json() for d in self.excluded],
            "latency_ms": self.latency_ms,
        }


def exclude_inserted(synthetic_result: DetectionSet, inserted_bbox: BBox, eps_excl: float = 0.5) -> Tuple[DetectionSet, List[Detection]]:
    """Split off every detection sitting on the inserted object, whatever its label."""
    kept, excluded = [], []
    for d in synthetic_result:
        (excluded if iou(d.box, inserted_bbox) >= eps_excl else kept).append(d)
    return synthetic_result.replace(kept), excluded


def run_trial(
    background: ImageBuffer,
    baseline: DetectionSet,
    obj: ObjectInstance,
    placement: Placement,
    detector: DetectorClient,
    cfg: MetricsConfig = MetricsConfig(),
    eps_excl: Optional[float] = None,
    trial_id: str = "",
    clock: Callable[[], float] = time.monotonic,
) -> Trial:
    eps_excl = cfg.iou_threshold if eps_excl is None else eps_excl
    inserted = placed_box(placement.center, (obj.width, obj.height))
    trial = Trial(
        id=trial_id,
        background=baseline.image_id,
        baseline=baseline,
        placement=placement,
        inserted_bbox=inserted,
        category=obj.label,
    )
    synthetic = composite(background, obj, placement)
    trial.synthetic = synthetic
    context = QueryContext(baseline.image_id, placement.center, inserted, obj.label)
    t0 = clock()
    try:
        result = detector.detect(synthetic, context)
    except DetectorError as exc:
        trial.latency_ms = (clock() - t0) * 1000.0
        trial.note = f"{type(exc).__name__}: {exc}"
        log.warning("trial %s skipped: %s", trial_id, trial.note)
        return trial
    trial.latency_ms = (clock() - t0) * 1000.0

    pruned, trial.excluded = exclude_inserted(result, inserted, eps_excl)
    holds, trial.map = equality_criterion(baseline, pruned, cfg)
    if holds:
        trial.verdict = PASS
    else:
        trial.verdict = FAIL
        trial.failures = classify_failures(baseline, pruned, cfg)
    return trial


def check_record(record: dict) -> List[str]:
    """Consistency problems in one trials.jsonl record (empty when clean)."""
    problems = []
    verdict, m = record.get("verdict"), record.get("map")
    if verdict == PASS and m != 1.0 and (m is None or abs(m - 1.0) > 1e-12):
        problems.append("pass verdict with mAP below 1")
    if verdict == FAIL and (m is None or m >= 1.0 - 1e-12):
        problems.append("fail verdict without mAP below 1")
    if verdict == FAIL and not record.get("failures"):
        problems.append("fail verdict without failure types")
    if verdict != FAIL and record.get("failures"):
        problems.append("failure types on a non-failing trial")
    if verdict == SKIPPED and m is not None:
        problems.append("skipped trial carries an mAP")
    if verdict not in (PASS, FAIL, SKIPPED):
        problems.append(f"unknown verdict {verdict!r}")
    return problems
