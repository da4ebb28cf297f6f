"""Scriptable mock detectors for exercising the harness itself.

A mock knows the ground-truth detections of each background by content hash.
Queries on a synthetic image carry a :class:`QueryContext` naming the
background, the insertion centre and the inserted box, which lets a scenario
perturb the answer in an analytically predictable way:

``perfect``
    baseline plus a detection on the inserted object.
``suppress-near``
    drops baseline detections whose centre lies within ``radius`` of the
    insertion centre.
``relabel-near``
    same neighbourhood, but the label becomes ``relabel_to``.
``drift-near``
    same neighbourhood, boxes shifted by ``offset``.
``corridor``
    drops the first baseline detection whenever the insertion centre's
    parameter along the background's declared segment is ``<= t_max``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Tuple, Union

from ..core import Detection, DetectionSet, Point, center
from ..errors import UnknownBackgroundError
from .client import DetectorEndpoint, Gateway, Response
from .protocol import QueryContext, response_body

SCENARIOS = ("perfect", "suppress-near", "relabel-near", "drift-near", "corridor")


@dataclass(frozen=True)
class MockScenario:
    kind: str
    ground_truth: Mapping[str, DetectionSet]
    radius: float = 0.0
    offset: Tuple[float, float] = (0.0, 0.0)
    relabel_to: str = "mislabeled"
    t_max: float = 0.0
    segments: Mapping[str, Tuple[Point, Point]] = field(default_factory=dict)
    inserted_confidence: float = 0.99

    def __post_init__(self) -> None:
        if self.kind not in SCENARIOS:
            raise ValueError(f"unknown mock scenario {self.kind!r}; choose from {SCENARIOS}")

    def baseline(self, background: str) -> DetectionSet:
        try:
            return self.ground_truth[background]
        except KeyError:
            raise UnknownBackgroundError(f"mock has no ground truth for background {background[:16]}...") from None

    def segment_t(self, background: str, c: Point) -> float:
        (sx, sy), (ex, ey) = self.segments[background]
        dx, dy = ex - sx, ey - sy
        return ((c[0] - sx) * dx + (c[1] - sy) * dy) / (dx * dx + dy * dy)

    def respond(self, background: str, context: Optional[QueryContext]) -> DetectionSet:
        base = self.baseline(background)
        if context is None:
            return base
        near = [math.dist(center(d.box), context.center) <= self.radius for d in base]
        dets = list(base)
        if self.kind == "suppress-near":
            dets = [d for d, n in zip(dets, near) if not n]
        elif self.kind == "relabel-near":
            dets = [replace(d, label=self.relabel_to) if n else d for d, n in zip(dets, near)]
        elif self.kind == "drift-near":
            dx, dy = self.offset
            dets = [replace(d, box=d.box.translate(dx, dy)) if n else d for d, n in zip(dets, near)]
        elif self.kind == "corridor":
            if self.segment_t(background, context.center) <= self.t_max + 1e-12:
                dets = dets[1:]
        dets.append(Detection(context.inserted_bbox, context.label, self.inserted_confidence))
        return DetectionSet(background, tuple(dets))

    # persistence: lets a CLI endpoint of kind "mock" point at a JSON file

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "radius": self.radius,
            "offset": list(self.offset),
            "relabel_to": self.relabel_to,
            "t_max": self.t_max,
            "segments": {k: [list(a), list(b)] for k, (a, b) in self.segments.items()},
            "inserted_confidence": self.inserted_confidence,
            "ground_truth": {k: [d.to_json() for d in v] for k, v in self.ground_truth.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MockScenario":
        gt = {k: DetectionSet(k, tuple(Detection.from_json(d) for d in v)) for k, v in obj["ground_truth"].items()}
        segs = {k: (tuple(a), tuple(b)) for k, (a, b) in obj.get("segments", {}).items()}
        return cls(
            kind=obj["kind"],
            ground_truth=gt,
            radius=obj.get("radius", 0.0),
            offset=tuple(obj.get("offset", (0.0, 0.0))),
            relabel_to=obj.get("relabel_to", "mislabeled"),
            t_max=obj.get("t_max", 0.0),
            segments=segs,
            inserted_confidence=obj.get("inserted_confidence", 0.99),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MockScenario":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


class MockTransport:
    """Transport that answers from a :class:`MockScenario` and counts queries."""

    def __init__(self, scenario: MockScenario):
        self.scenario = scenario
        self.calls = 0

    def __call__(self, png: bytes, context: Optional[QueryContext] = None) -> Response:
        self.calls += 1
        background = context.background if context else hashlib.sha256(png).hexdigest()
        return Response(200, response_body(self.scenario.respond(background, context)))


def mock_detector(scenario: MockScenario, endpoint_id: str = "mock", cache_dir=None, **kwargs) -> Gateway:
    """Gateway over a mock scenario with effectively unlimited rate."""
    endpoint = DetectorEndpoint(id=endpoint_id, kind="mock", qps_limit=1e9, max_in_flight=64)
    return Gateway(endpoint, transport=MockTransport(scenario), cache_dir=cache_dir, **kwargs)
