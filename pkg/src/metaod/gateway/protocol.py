"""Canonical detector wire format.

Request: ``POST`` with the PNG bytes as body and ``Content-Type: image/png``.
Response::

    {"detections": [{"label": "car", "confidence": 0.93,
                     "box": {"x": 10, "y": 20, "w": 40, "h": 30}}]}

Boxes are top-left corner plus width/height in pixels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Union

from ..core import BBox, Detection, DetectionSet, Point
from ..errors import ProtocolError

EXCERPT = 120


@dataclass(frozen=True)
class QueryContext:
    """Side information about a synthetic image.

    Only mock detectors look at it; real endpoints never see it.
    """

    background: str
    center: Point
    inserted_bbox: BBox
    label: str


def _excerpt(text: str, pos: int = 0) -> str:
    lo = max(0, pos - EXCERPT // 2)
    return text[lo:lo + EXCERPT]


def _number(value, what: str, text: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ProtocolError(f"{what} must be a finite number, got {value!r} in {_excerpt(text)!r}")
    return float(value)


def parse_response(body: Union[bytes, str], image_id: str) -> DetectionSet:
    text = body.decode("utf-8", errors="replace") if isinstance(body, bytes) else body
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(
            f"malformed JSON at position {exc.pos} (line {exc.lineno}, column {exc.colno}): "
            f"{exc.msg}; near {_excerpt(text, exc.pos)!r}"
        ) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("detections"), list):
        raise ProtocolError(f"response lacks a 'detections' list: {_excerpt(text)!r}")
    out = []
    for i, item in enumerate(doc["detections"]):
        if not isinstance(item, dict) or not isinstance(item.get("box"), dict):
            raise ProtocolError(f"detection {i} is not an object with a 'box': {_excerpt(text)!r}")
        label = item.get("label")
        if not isinstance(label, str) or not label:
            raise ProtocolError(f"detection {i} has no label: {_excerpt(text)!r}")
        conf = _number(item.get("confidence"), f"detection {i} confidence", text)
        box = item["box"]
        x, y, w, h = (_number(box.get(k), f"detection {i} box.{k}", text) for k in "xywh")
        if not 0.0 <= conf <= 1.0:
            raise ProtocolError(f"detection {i} confidence {conf} outside [0, 1]")
        if w <= 0 or h <= 0:
            raise ProtocolError(f"detection {i} has a degenerate box {w}x{h}")
        out.append(Detection(BBox(x, y, w, h), label, conf))
    return DetectionSet(image_id, tuple(out))


def canonical_json(detections: DetectionSet) -> str:
    """Byte-stable serialisation used for both mocks and the on-disk cache."""
    doc = {"detections": [d.to_json() for d in detections]}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def response_body(detections, image_id: Optional[str] = None) -> bytes:
    if not isinstance(detections, DetectionSet):
        detections = DetectionSet(image_id or "", tuple(detections))
    return canonical_json(detections).encode()
