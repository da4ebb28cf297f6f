"""Where to put the inserted object, how to paste it, and how to move it.

A placement is expressed by the object's centre.  The pasted pixels start at
the centre minus half the object size, rounded half-up to the pixel grid; all
overlap checks use that snapped rectangle so what is checked is what is drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import BBox, DetectionSet, ImageBuffer, Point, center, overlaps
from .errors import ContractViolation, PlacementExhaustedError
from .extraction import ObjectInstance

GUIDED = "guided"
RANDOM = "random"
RELOCATED = "relocated"

PASS = "pass"
FAIL = "fail"
INVALID = "invalid"


@dataclass(frozen=True)
class Placement:
    center: Point
    object_id: str
    size: Tuple[int, int]
    scale: float = 1.0
    anchor_index: Optional[int] = None
    mode: str = GUIDED

    @property
    def box(self) -> BBox:
        return placed_box(self.center, self.size)


@dataclass(frozen=True)
class GuidedRegion:
    outer: BBox
    inner_exclusion: BBox


@dataclass
class RelocationOutcome:
    start: Point
    target: Point
    frontier_t: float = 0.0
    failing_positions: List[Point] = field(default_factory=list)
    queries_used: int = 0
    background: str = ""
    object_id: str = ""
    probes: List[Tuple[float, str]] = field(default_factory=list)


def placed_box(c: Point, size: Tuple[int, int]) -> BBox:
    w, h = size
    left = math.floor(c[0] - w / 2 + 0.5)
    top = math.floor(c[1] - h / 2 + 0.5)
    return BBox(left, top, w, h)


def is_valid(box: BBox, baseline_boxes: Sequence[BBox], image_dims: Tuple[int, int]) -> bool:
    W, H = image_dims
    if box.x < 0 or box.y < 0 or box.x2 > W or box.y2 > H:
        return False
    return not any(overlaps(box, b) for b in baseline_boxes)


def centroid(baseline: DetectionSet) -> Point:
    if len(baseline) == 0:
        raise ContractViolation("centroid of an empty detection set")
    cs = [center(d.box) for d in baseline]
    return (sum(c[0] for c in cs) / len(cs), sum(c[1] for c in cs) / len(cs))


def guided_region(anchor: BBox, size: Tuple[int, int], k: float = 2.0) -> GuidedRegion:
    ow, oh = size
    inner = BBox(anchor.x - ow / 2, anchor.y - oh / 2, anchor.w + ow, anchor.h + oh)
    outer = BBox(anchor.x - k * ow, anchor.y - k * oh, anchor.w + 2 * k * ow, anchor.h + 2 * k * oh)
    return GuidedRegion(outer, inner)


def _band(size: Tuple[int, int], image_dims: Tuple[int, int]) -> Tuple[float, float, float, float]:
    ow, oh = size
    W, H = image_dims
    if ow > W or oh > H:
        raise ContractViolation(f"object {ow}x{oh} does not fit a {W}x{H} image")
    return ow / 2, oh / 2, W - ow / 2, H - oh / 2


def _strictly_inside(p: Point, b: BBox) -> bool:
    return b.x < p[0] < b.x2 and b.y < p[1] < b.y2


def sample_guided(
    baseline: DetectionSet,
    obj: ObjectInstance,
    image_dims: Tuple[int, int],
    rng: np.random.Generator,
    k: float = 2.0,
    max_attempts: int = 100,
    anchor_index: Optional[int] = None,
    scale: float = 1.0,
) -> Placement:
    """Sample a centre in the frame around a random existing detection.

    The frame is concentric with the anchor and extends ``k`` object sizes
    past it; the anchor grown by half the object size is excluded, so the
    object cannot touch the anchor.  Every attempt draws a fresh anchor
    (the first one uses ``anchor_index`` when given).
    """
    if len(baseline) == 0:
        raise ContractViolation("guided insertion needs at least one baseline detection")
    size = (obj.width, obj.height)
    x_lo, y_lo, x_hi, y_hi = _band(size, image_dims)
    boxes = baseline.boxes()
    for attempt in range(max_attempts):
        if attempt == 0 and anchor_index is not None:
            a = anchor_index
        else:
            a = int(rng.integers(len(boxes)))
        region = guided_region(boxes[a], size, k)
        lo_x, hi_x = max(region.outer.x, x_lo), min(region.outer.x2, x_hi)
        lo_y, hi_y = max(region.outer.y, y_lo), min(region.outer.y2, y_hi)
        if lo_x > hi_x or lo_y > hi_y:
            continue
        c = (float(rng.uniform(lo_x, hi_x)), float(rng.uniform(lo_y, hi_y)))
        if _strictly_inside(c, region.inner_exclusion):
            continue
        if is_valid(placed_box(c, size), boxes, image_dims):
            return Placement(c, obj.id, size, scale, a, GUIDED)
    raise PlacementExhaustedError(f"no guided placement after {max_attempts} attempts")


def sample_random(
    baseline: DetectionSet,
    obj: ObjectInstance,
    image_dims: Tuple[int, int],
    rng: np.random.Generator,
    max_attempts: int = 100,
    scale: float = 1.0,
) -> Placement:
    size = (obj.width, obj.height)
    x_lo, y_lo, x_hi, y_hi = _band(size, image_dims)
    boxes = baseline.boxes()
    for _ in range(max_attempts):
        c = (float(rng.uniform(x_lo, x_hi)), float(rng.uniform(y_lo, y_hi)))
        if is_valid(placed_box(c, size), boxes, image_dims):
            return Placement(c, obj.id, size, scale, None, RANDOM)
    raise PlacementExhaustedError(f"no random placement after {max_attempts} attempts")


def composite(background: ImageBuffer, obj: ObjectInstance, placement: Placement) -> ImageBuffer:
    """Paste the opaque pixels of ``obj``; nothing is blended or filtered."""
    box = placed_box(placement.center, (obj.width, obj.height))
    if box.x < 0 or box.y < 0 or box.x2 > background.width or box.y2 > background.height:
        raise ContractViolation(f"placement {box} leaves the {background.width}x{background.height} image")
    x, y = int(box.x), int(box.y)
    out = np.array(background.pixels, copy=True)
    region = out[y:y + obj.height, x:x + obj.width]
    opaque = obj.image.alpha == 255
    region[opaque] = obj.image.pixels[opaque]
    return ImageBuffer(out)


def point_at(start: Point, target: Point, t: float) -> Point:
    return (start[0] + t * (target[0] - start[0]), start[1] + t * (target[1] - start[1]))


def default_delta(start: Point, target: Point) -> float:
    length = math.dist(start, target)
    if length == 0:
        return 1.0
    return max(0.01, 2.0 / length)


def relocate(
    start: Placement,
    target: Point,
    oracle: Callable[[Placement], str],
    delta: float,
    start_verdict: Optional[str] = None,
) -> RelocationOutcome:
    """Move a failing insertion toward ``target`` while it keeps failing.

    Probes the target first; on a pass (or an invalid spot) it bisects back
    between the furthest known failure and the nearest known non-failure
    until the gap is at most ``delta`` (a fraction of the segment).  The
    oracle answers ``"fail"``, ``"pass"`` or ``"invalid"``.

    ``start_verdict`` lets a caller that already knows the start fails skip
    re-querying it.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    outcome = RelocationOutcome(start=start.center, target=target, object_id=start.object_id)
    if start_verdict is None:
        start_verdict = oracle(start)
        outcome.queries_used += 1
    if start_verdict != FAIL:
        raise ContractViolation(f"relocation must start from a failing placement, got {start_verdict!r}")

    f, hi = 0.0, None
    t = 1.0
    while True:
        probe = replace(start, center=point_at(start.center, target, t), mode=RELOCATED, anchor_index=None)
        verdict = oracle(probe)
        outcome.queries_used += 1
        outcome.probes.append((t, verdict))
        if verdict == FAIL:
            f = t
            outcome.failing_positions.append(probe.center)
        else:
            hi = t
        if f == 1.0 or hi is None or hi - f <= delta:
            break
        t = (f + hi) / 2
    outcome.frontier_t = f
    return outcome


def position_key(background: str, object_id: str, c: Point) -> tuple:
    return (background, object_id, math.floor(c[0] + 0.5), math.floor(c[1] + 0.5))


def dedup_positions(outcomes: Iterable[RelocationOutcome]) -> int:
    """Number of distinct failing relocated images, keyed on the rounded centre."""
    seen = set()
    for o in outcomes:
        for c in o.failing_positions:
            seen.add(position_key(o.background, o.object_id, c))
    return len(seen)
