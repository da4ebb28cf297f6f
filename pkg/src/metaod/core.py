"""Geometric and detection value types shared by every other module.

Boxes are axis-aligned, stored as top-left corner plus width/height in
continuous pixel coordinates with the origin at the image's top-left.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

Point = Tuple[float, float]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, ``(x, y)`` is the top-left corner."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive width and height, got {self}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls(x1, y1, x2 - x1, y2 - y1)

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list:
        return [self.x, self.y, self.w, self.h]

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def contains(self, other: "BBox") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )


def intersect(a: BBox, b: BBox) -> Optional[BBox]:
    """Overlap rectangle of two boxes, ``None`` when interiors are disjoint.

    Boxes that only share an edge or a corner are disjoint.
    """
    x1 = max(a.x, b.x)
    y1 = max(a.y, b.y)
    x2 = min(a.x2, b.x2)
    y2 = min(a.y2, b.y2)
    if x2 <= x1 or y2 <= y1:
        return None
    return BBox(x1, y1, x2 - x1, y2 - y1)


def overlaps(a: BBox, b: BBox) -> bool:
    return intersect(a, b) is not None


def center(b: BBox) -> Point:
    return (b.x + b.w / 2, b.y + b.h / 2)


@dataclass(frozen=True)
class Detection:
    box: BBox
    label: str
    confidence: float

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("detection label must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "confidence": self.confidence,
            "box": {"x": self.box.x, "y": self.box.y, "w": self.box.w, "h": self.box.h},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Detection":
        box = obj["box"]
        return cls(BBox(box["x"], box["y"], box["w"], box["h"]), obj["label"], obj["confidence"])


@dataclass(frozen=True)
class DetectionSet:
    """Full output of one detector query on one image."""

    image_id: str
    detections: Tuple[Detection, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.detections, tuple):
            object.__setattr__(self, "detections", tuple(self.detections))

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self) -> Iterator[Detection]:
        return iter(self.detections)

    def __getitem__(self, index: int) -> Detection:
        return self.detections[index]

    @property
    def labels(self) -> list:
        """Distinct labels in sorted order."""
        return sorted({d.label for d in self.detections})

    def boxes(self) -> list:
        return [d.box for d in self.detections]

    def replace(self, detections: Iterable[Detection]) -> "DetectionSet":
        return DetectionSet(self.image_id, tuple(detections))


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Immutable RGBA image, ``pixels`` has shape ``(height, width, 4)``."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 4:
            raise ValueError(f"expected uint8 array of shape (H, W, 4), got {px.dtype} {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError("image must be non-empty")
        if px.flags.writeable:
            px = px.copy()
            px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def dims(self) -> Tuple[int, int]:
        return (self.width, self.height)

    @property
    def rgb(self) -> np.ndarray:
        return self.pixels[:, :, :3]

    @property
    def alpha(self) -> np.ndarray:
        return self.pixels[:, :, 3]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self) -> int:
        return hash(self.content_hash)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ImageBuffer":
        """Accept grayscale, RGB or RGBA uint8 arrays; missing alpha becomes 255."""
        arr = np.asarray(array)
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        if arr.ndim != 3 or arr.shape[2] not in (3, 4):
            raise ValueError(f"unsupported pixel array shape {arr.shape}")
        if arr.shape[2] == 3:
            opaque = np.full(arr.shape[:2] + (1,), 255, dtype=np.uint8)
            arr = np.concatenate([arr, opaque], axis=2)
        return cls(np.ascontiguousarray(arr))

    @classmethod
    def open(cls, path: Union[str, Path]) -> "ImageBuffer":
        with Image.open(path) as im:
            return cls(np.asarray(im.convert("RGBA"), dtype=np.uint8))

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "ImageBuffer":
        with Image.open(io.BytesIO(data)) as im:
            return cls(np.asarray(im.convert("RGBA"), dtype=np.uint8))

    @cached_property
    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, "RGBA").save(buf, format="PNG", compress_level=6)
        return buf.getvalue()

    @cached_property
    def content_hash(self) -> str:
        """SHA-256 hex digest of the canonical PNG encoding."""
        return hashlib.sha256(self.png_bytes).hexdigest()

    def save_png(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.png_bytes)

    def crop(self, box: BBox) -> "ImageBuffer":
        """Pixels covered by ``box`` after snapping it outward to the pixel grid."""
        x0 = max(0, int(np.floor(box.x)))
        y0 = max(0, int(np.floor(box.y)))
        x1 = min(self.width, int(np.ceil(box.x2)))
        y1 = min(self.height, int(np.ceil(box.y2)))
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"{box} does not cover any pixel of a {self.width}x{self.height} image")
        return ImageBuffer(self.pixels[y0:y1, x0:x1])


def boxes_array(boxes: Sequence[BBox]) -> np.ndarray:
    """Stack boxes into an ``(n, 4)`` float array of ``x, y, w, h``."""
    if not boxes:
        return np.zeros((0, 4))
    return np.array([[b.x, b.y, b.w, b.h] for b in boxes], dtype=float)
