"""End-to-end campaign: plan, insert, query, relocate, report."""

from __future__ import annotations

import glob
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import DetectionSet, ImageBuffer
from .errors import CampaignAbort, DetectorError, MissingCategoryError, PlacementExhaustedError
from .extraction import ObjectInstance
from .gateway.client import DetectorClient, DetectorEndpoint, Gateway
from .insertion import (
    FAIL,
    GUIDED,
    INVALID,
    RANDOM,
    RELOCATED,
    Placement,
    RelocationOutcome,
    centroid,
    default_delta,
    is_valid,
    position_key,
    relocate,
    sample_guided,
    sample_random,
)
from .metrics import MetricsConfig
from .naturalness import CELL, hog, hog_intersection
from .oracle import SKIPPED, Trial, check_record, run_trial
from .pool import ObjectPool, load_pool, prune, reference_hash, resize_to_category, select_similar

log = logging.getLogger(__name__)

Clock = Callable[[], float]

TRIALS_FILE = "trials.jsonl"
SUMMARY_FILE = "summary.json"
RELOCATIONS_FILE = "relocations.jsonl"
HIST_EDGES = tuple(range(0, 101, 10))


@dataclass
class CampaignConfig:
    endpoint: DetectorEndpoint
    backgrounds: str
    pool_dir: str
    out_dir: str
    budget_multiplier: int = 10
    insertion_mode: str = GUIDED
    enable_relocation: bool = True
    k: float = 2.0
    max_attempts: int = 100
    delta: Optional[float] = None
    eps: float = 0.5
    eps_excl: float = 0.5
    keep_fraction: float = 0.10
    seed: int = 0
    save_images: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.endpoint, dict):
            self.endpoint = DetectorEndpoint.from_json(self.endpoint)
        if self.budget_multiplier < 1:
            raise ValueError("budget_multiplier must be at least 1")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("keep_fraction must be in (0, 1]")
        if self.insertion_mode not in (GUIDED, RANDOM):
            raise ValueError(f"insertion_mode must be 'guided' or 'random', got {self.insertion_mode!r}")
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_json(cls, obj: dict) -> "CampaignConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CampaignConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> dict:
        d = asdict(self)
        d["endpoint"] = self.endpoint.to_json()
        return d


@dataclass
class CampaignSummary:
    endpoint: str
    backgrounds: int = 0
    backgrounds_skipped: int = 0
    synthetic_images: int = 0
    evaluated_images: int = 0
    skipped_trials: int = 0
    detected_objects: Optional[int] = None
    failed_trials: int = 0
    images_causing_failures: int = 0
    failure_percentage: float = 0.0
    processing_time_s: Optional[float] = None
    queries_sent: Optional[int] = None
    cache_hits: Optional[int] = None
    estimated_cost: Optional[float] = None
    relocation: dict = field(default_factory=dict)
    naturalness: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def plan_trials(baseline: DetectionSet, rng: np.random.Generator, budget_multiplier: int = 10) -> List[Tuple[str, int]]:
    """``budget_multiplier * M`` independent draws of (category, anchor index)."""
    if len(baseline) == 0:
        raise ValueError("cannot plan trials for an empty baseline")
    labels = baseline.labels
    plan = []
    for _ in range(budget_multiplier * len(baseline)):
        label = labels[int(rng.integers(len(labels)))]
        anchor = int(rng.integers(len(baseline)))
        plan.append((label, anchor))
    return plan


@dataclass
class _BackgroundResult:
    trials: List[Trial] = field(default_factory=list)
    outcomes: List[Tuple[str, RelocationOutcome]] = field(default_factory=list)
    detected: int = 0
    skipped: bool = False
    hog_inserted: List[float] = field(default_factory=list)
    hog_relocated: List[float] = field(default_factory=list)


class ReportWriter:
    """Serialises trial records to ``trials.jsonl`` in arrival order."""

    def __init__(self, out_dir: Union[str, Path], save_images: bool = False):
        self.out_dir = Path(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self._trials = open(self.out_dir / TRIALS_FILE, "w")
            self._relocations = open(self.out_dir / RELOCATIONS_FILE, "w")
        except OSError as exc:
            raise CampaignAbort(f"cannot write report to {self.out_dir}: {exc}") from exc
        self.save_images = save_images
        if save_images:
            (self.out_dir / "synthetic").mkdir(exist_ok=True)
        self.records: List[dict] = []

    def write_trial(self, trial: Trial) -> None:
        record = trial.to_record()
        self._trials.write(json.dumps(record) + "\n")
        self.records.append(record)
        if self.save_images and trial.verdict == "fail" and trial.synthetic is not None:
            trial.synthetic.save_png(self.out_dir / "synthetic" / f"{trial.id}.png")

    def write_relocation(self, trial_id: str, o: RelocationOutcome) -> None:
        self._relocations.write(json.dumps({
            "trial": trial_id,
            "background": o.background,
            "object_id": o.object_id,
            "start": list(o.start),
            "target": list(o.target),
            "frontier_t": o.frontier_t,
            "queries_used": o.queries_used,
            "failing_positions": [list(p) for p in o.failing_positions],
        }) + "\n")

    def close(self) -> None:
        self._trials.close()
        self._relocations.close()


def _skipped(trial_id: str, baseline: DetectionSet, category: str, mode: str, anchor: Optional[int], note: str) -> Trial:
    log.info("trial %s skipped: %s", trial_id, note)
    return Trial(
        id=trial_id,
        background=baseline.image_id,
        baseline=baseline,
        placement=None,
        inserted_bbox=None,
        category=category,
        verdict=SKIPPED,
        note=note,
        planned_mode=mode,
        planned_anchor=anchor,
    )


def _naturalness(trial: Trial, bg_hog) -> Optional[float]:
    if bg_hog is None or trial.synthetic is None or trial.verdict == SKIPPED:
        return None
    return hog_intersection(hog(trial.synthetic), bg_hog)


class Campaign:
    """Runs one configured campaign; use :func:`run_campaign` for the common case."""

    def __init__(self, cfg: CampaignConfig, detector: Optional[DetectorClient] = None,
                 clock: Clock = time.monotonic, cache_dir: Union[str, Path, None] = None,
                 workers: int = 1, pool: Optional[ObjectPool] = None):
        self.cfg = cfg
        self.clock = clock
        self.workers = workers
        if cache_dir is None:
            cache_dir = Path(cfg.out_dir) / "cache"
        try:
            Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
            self.detector = detector or Gateway(cfg.endpoint, cache_dir=cache_dir, clock=clock)
        except OSError as exc:
            raise CampaignAbort(f"cannot prepare output directory {cfg.out_dir}: {exc}") from exc
        self.metrics = MetricsConfig(cfg.eps)
        self.pool = prune(pool if pool is not None else load_pool(cfg.pool_dir), cfg.keep_fraction)

    def _objects_for(self, image: ImageBuffer, baseline: DetectionSet) -> Dict[str, Optional[Tuple[ObjectInstance, float]]]:
        chosen: Dict[str, Optional[Tuple[ObjectInstance, float]]] = {}
        for label in baseline.labels:
            boxes = [d.box for d in baseline if d.label == label]
            try:
                ref = reference_hash([image.crop(b) for b in boxes])
                inst = select_similar(self.pool, label, ref)
            except (MissingCategoryError, ValueError) as exc:
                log.warning("background %s: no insertable %r object (%s)", baseline.image_id[:12], label, exc)
                chosen[label] = None
                continue
            chosen[label] = resize_to_category(inst, boxes, image.dims)
        return chosen

    def _place(self, baseline, obj, dims, rng, anchor, scale) -> Placement:
        if self.cfg.insertion_mode == GUIDED:
            return sample_guided(baseline, obj, dims, rng, k=self.cfg.k, max_attempts=self.cfg.max_attempts,
                                 anchor_index=anchor, scale=scale)
        return sample_random(baseline, obj, dims, rng, max_attempts=self.cfg.max_attempts, scale=scale)

    def run_background(self, index: int, path: str, seed: np.random.SeedSequence, first: bool = False) -> _BackgroundResult:
        cfg = self.cfg
        res = _BackgroundResult()
        image = ImageBuffer.open(path)
        try:
            baseline = self.detector.detect(image)
        except DetectorError as exc:
            if first:
                raise CampaignAbort(f"endpoint {cfg.endpoint.id!r} failed on the first background {path}: {exc}") from exc
            log.error("background %s skipped: baseline query failed: %s", path, exc)
            res.skipped = True
            return res
        if len(baseline) == 0:
            log.info("background %s skipped: detector found no objects", path)
            res.skipped = True
            return res

        res.detected = len(baseline)
        rng = np.random.default_rng(seed)
        plan = plan_trials(baseline, rng, cfg.budget_multiplier)
        objects = self._objects_for(image, baseline)
        bg_hog = hog(image) if min(image.dims) >= 2 * CELL else None
        boxes = baseline.boxes()
        target = centroid(baseline)

        def execute(trial_id: str, obj: ObjectInstance, placement: Placement) -> Trial:
            trial = run_trial(image, baseline, obj, placement, self.detector, self.metrics,
                              eps_excl=cfg.eps_excl, trial_id=trial_id, clock=self.clock)
            score = _naturalness(trial, bg_hog)
            if score is not None:
                (res.hog_relocated if placement.mode == RELOCATED else res.hog_inserted).append(score)
            res.trials.append(trial)
            return trial

        for n, (label, anchor) in enumerate(plan):
            trial_id = f"{index:04d}-{n:04d}"
            mode_anchor = anchor if cfg.insertion_mode == GUIDED else None
            entry = objects.get(label)
            if entry is None:
                res.trials.append(_skipped(trial_id, baseline, label, cfg.insertion_mode, mode_anchor,
                                           "missing-category"))
                continue
            obj, scale = entry
            try:
                placement = self._place(baseline, obj, image.dims, rng, anchor, scale)
            except PlacementExhaustedError as exc:
                res.trials.append(_skipped(trial_id, baseline, label, cfg.insertion_mode, mode_anchor, str(exc)))
                continue
            trial = execute(trial_id, obj, placement)
            if trial.verdict != FAIL or not cfg.enable_relocation:
                continue
            if math.dist(placement.center, target) == 0:
                continue
            probes = [0]

            def oracle(p: Placement, obj=obj, trial_id=trial_id, probes=probes) -> str:
                if not is_valid(p.box, boxes, image.dims):
                    return INVALID
                probes[0] += 1
                t = execute(f"{trial_id}-r{probes[0]:02d}", obj, p)
                return INVALID if t.verdict == SKIPPED else t.verdict

            delta = cfg.delta if cfg.delta is not None else default_delta(placement.center, target)
            outcome = relocate(placement, target, oracle, delta, start_verdict=FAIL)
            outcome.background = baseline.image_id
            res.outcomes.append((trial_id, outcome))
        return res

    def run(self) -> CampaignSummary:
        cfg = self.cfg
        paths = sorted(glob.glob(cfg.backgrounds))
        seeds = np.random.SeedSequence(cfg.seed).spawn(len(paths))
        writer = ReportWriter(cfg.out_dir, cfg.save_images)
        started = self.clock()
        outcomes: List[RelocationOutcome] = []
        hog_ins: List[float] = []
        hog_rel: List[float] = []
        detected = 0
        skipped_bg = 0
        try:
            results: Iterable[_BackgroundResult]
            if paths:
                # the first background runs alone so an unreachable endpoint aborts early
                first = self.run_background(0, paths[0], seeds[0], first=True)
                rest = range(1, len(paths))
                if self.workers > 1:
                    pool = ThreadPoolExecutor(self.workers)
                    results = [first, *pool.map(lambda i: self.run_background(i, paths[i], seeds[i]), rest)]
                else:
                    results = (first, *(self.run_background(i, paths[i], seeds[i]) for i in rest))
            else:
                results = []
            for res in results:
                skipped_bg += res.skipped
                detected += res.detected
                hog_ins += res.hog_inserted
                hog_rel += res.hog_relocated
                for trial in res.trials:
                    writer.write_trial(trial)
                    trial.synthetic = None
                for trial_id, o in res.outcomes:
                    writer.write_relocation(trial_id, o)
                    outcomes.append(o)
        finally:
            writer.close()
        elapsed = self.clock() - started

        stats = self.detector.stats()
        summary = summarize(writer.records, cfg.endpoint.id, [o.frontier_t for o in outcomes])
        summary.backgrounds = len(paths)
        summary.backgrounds_skipped = skipped_bg
        summary.detected_objects = detected
        summary.processing_time_s = elapsed
        summary.queries_sent = stats.queries_sent
        summary.cache_hits = stats.cache_hits
        summary.estimated_cost = float(stats.estimated_cost) if stats.estimated_cost is not None else None
        summary.naturalness = {
            "inserted_mean": float(np.mean(hog_ins)) if hog_ins else None,
            "inserted_count": len(hog_ins),
            "relocated_mean": float(np.mean(hog_rel)) if hog_rel else None,
            "relocated_count": len(hog_rel),
        }
        write_summary(summary, cfg.out_dir)
        return summary


def run_campaign(cfg: CampaignConfig, **kwargs) -> CampaignSummary:
    return Campaign(cfg, **kwargs).run()


def distance_histogram(frontiers: Sequence[float]) -> dict:
    """Relocation distance in percent of the way to the centroid.

    Searches that never left the start and those that reached the centroid
    are counted apart; the rest fall into ``(lo, hi]`` decile bins.
    """
    pct = [100.0 * t for t in frontiers]
    bins = []
    for lo, hi in zip(HIST_EDGES[:-1], HIST_EDGES[1:]):
        bins.append({"lo": lo, "hi": hi, "count": sum(1 for p in pct if lo < p <= hi and p < 100.0)})
    return {
        "at_start": sum(1 for p in pct if p == 0.0),
        "bins": bins,
        "at_centroid": sum(1 for p in pct if p >= 100.0),
    }


def summarize(records: Sequence[dict], endpoint: str, frontiers: Sequence[float] = ()) -> CampaignSummary:
    """Counters that can be derived from the trial records alone."""
    evaluated = [r for r in records if r["verdict"] != SKIPPED]
    failing_inserted = sum(1 for r in evaluated if r["verdict"] == FAIL and r["mode"] != RELOCATED)
    failing_relocated = [r for r in evaluated if r["verdict"] == FAIL and r["mode"] == RELOCATED]
    unique = {position_key(r["background"], r["object_id"], r["center"]) for r in failing_relocated}
    causing = failing_inserted + len(unique)
    return CampaignSummary(
        endpoint=endpoint,
        synthetic_images=len(records),
        evaluated_images=len(evaluated),
        skipped_trials=len(records) - len(evaluated),
        failed_trials=sum(1 for r in evaluated if r["verdict"] == FAIL),
        images_causing_failures=causing,
        failure_percentage=100.0 * causing / len(evaluated) if evaluated else 0.0,
        relocation={
            "searches": len(frontiers),
            "failing_inserted": failing_inserted,
            "failing_relocated": len(failing_relocated),
            "unique_relocated": len(unique),
            "distance_histogram": distance_histogram(frontiers),
        },
    )


def write_summary(summary: CampaignSummary, out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir) / SUMMARY_FILE
    path.write_text(json.dumps(summary.to_json(), indent=2) + "\n")
    return path


def read_records(path: Union[str, Path]) -> List[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def lint_records(records: Sequence[dict]) -> List[str]:
    out = []
    for r in records:
        out += [f"{r.get('id')}: {p}" for p in check_record(r)]
    return out


def regenerate_summary(trials_path: Union[str, Path]) -> CampaignSummary:
    """Rebuild the summary from ``trials.jsonl`` (and sibling files when present).

    Fields that the trial log cannot supply (query counts, cost, timing,
    naturalness) are carried over from an existing ``summary.json``.
    """
    trials_path = Path(trials_path)
    records = read_records(trials_path)
    reloc_path = trials_path.with_name(RELOCATIONS_FILE)
    frontiers = [r["frontier_t"] for r in read_records(reloc_path)] if reloc_path.exists() else []
    old_path = trials_path.with_name(SUMMARY_FILE)
    old = json.loads(old_path.read_text()) if old_path.exists() else {}
    summary = summarize(records, old.get("endpoint", ""), frontiers)
    for key in ("backgrounds", "backgrounds_skipped", "detected_objects", "processing_time_s",
                "queries_sent", "cache_hits", "estimated_cost", "naturalness"):
        if key in old:
            setattr(summary, key, old[key])
    return summary
