"""Turn instance annotations into RGBA object crops.

Masks come from annotation data (polygons or uncompressed run-length
encodings) instead of a segmentation network.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import BBox, ImageBuffer
from .errors import AnnotationBoundsError, DegenerateAnnotationError

if TYPE_CHECKING:
    from .pool import PerceptualHash

Polygon = Sequence[Tuple[float, float]]


@dataclass(frozen=True)
class RunLengthMask:
    """Uncompressed COCO-style RLE: alternating background/foreground runs, column-major."""

    height: int
    width: int
    counts: Tuple[int, ...]

    def decode(self) -> np.ndarray:
        total = self.height * self.width
        if sum(self.counts) != total:
            raise DegenerateAnnotationError(
                f"run lengths sum to {sum(self.counts)}, expected {total} for {self.height}x{self.width}"
            )
        flat = np.zeros(total, dtype=bool)
        pos = 0
        for i, run in enumerate(self.counts):
            if i % 2 == 1:
                flat[pos:pos + run] = True
            pos += run
        return flat.reshape(self.width, self.height).T


@dataclass(frozen=True)
class InstanceAnnotation:
    image_file: str
    label: str
    polygons: Tuple[Tuple[Tuple[float, float], ...], ...] = ()
    rle: Optional[RunLengthMask] = None

    def __post_init__(self) -> None:
        if not self.polygons and self.rle is None:
            raise DegenerateAnnotationError(f"annotation for {self.image_file!r} has neither polygon nor rle")


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    """A cropped object: RGBA image whose alpha channel is the binary mask.

    ``ahash`` stays ``None`` until the object pool fills it in.
    """

    id: str
    label: str
    image: ImageBuffer
    mask_pixel_count: int
    source_image: str
    source_bbox: BBox
    ahash: Optional["PerceptualHash"] = None

    @property
    def width(self) -> int:
        return self.image.width

    @property
    def height(self) -> int:
        return self.image.height

    def with_hash(self, h: "PerceptualHash") -> "ObjectInstance":
        return replace(self, ahash=h)


def _polygon_mask(polygon: Polygon, width: int, height: int) -> np.ndarray:
    pts = np.asarray(polygon, dtype=float)
    ys = np.arange(height, dtype=float)[:, None] + 0.5
    xs = np.arange(width, dtype=float)[None, :] + 0.5
    inside = np.zeros((height, width), dtype=bool)
    xj, yj = pts[-1]
    for xi, yi in pts:
        # crossing-number test of a rightward ray from each pixel centre
        straddles = (yi > ys) != (yj > ys)
        if yi != yj:
            with np.errstate(over="ignore", invalid="ignore"):
                x_cross = xi + (ys - yi) * (xj - xi) / (yj - yi)
            inside ^= straddles & (xs < x_cross)
        xj, yj = xi, yi
    return inside


def rasterize_polygon(polygon: Union[Polygon, Sequence[Polygon]], width: int, height: int) -> np.ndarray:
    """Binary ``(height, width)`` mask of pixels whose centres fall inside.

    Uses the even-odd rule per polygon.  A list of polygons is merged by union,
    which is how disconnected instance parts are represented.
    """
    polys = _as_polygon_list(polygon)
    mask = np.zeros((height, width), dtype=bool)
    for poly in polys:
        if len(poly) < 3:
            raise DegenerateAnnotationError(f"polygon needs at least 3 vertices, got {len(poly)}")
        mask |= _polygon_mask(poly, width, height)
    if not mask.any():
        raise DegenerateAnnotationError("polygon covers no pixel centre")
    return mask


def _as_polygon_list(polygon) -> List[Polygon]:
    if len(polygon) and len(polygon[0]) and isinstance(polygon[0][0], (list, tuple, np.ndarray)):
        return [list(p) for p in polygon]
    return [list(polygon)]


def _clamp_polygon(poly: Polygon, width: int, height: int) -> List[Tuple[float, float]]:
    pts = np.asarray(poly, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegenerateAnnotationError(f"malformed polygon {poly!r}")
    if pts[:, 0].max() <= 0 or pts[:, 1].max() <= 0 or pts[:, 0].min() >= width or pts[:, 1].min() >= height:
        raise AnnotationBoundsError(f"polygon lies outside the {width}x{height} image")
    pts[:, 0] = np.clip(pts[:, 0], 0, width)
    pts[:, 1] = np.clip(pts[:, 1], 0, height)
    return [tuple(p) for p in pts]


def annotation_mask(annotation: InstanceAnnotation, width: int, height: int) -> np.ndarray:
    if annotation.rle is not None:
        if (annotation.rle.height, annotation.rle.width) != (height, width):
            raise AnnotationBoundsError(
                f"rle size {annotation.rle.height}x{annotation.rle.width} does not match image {height}x{width}"
            )
        mask = annotation.rle.decode()
        if not mask.any():
            raise DegenerateAnnotationError("rle mask is empty")
        return mask
    polys = [_clamp_polygon(p, width, height) for p in annotation.polygons]
    return rasterize_polygon(polys, width, height)


def crop_id(pixels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(f"{pixels.shape[1]}x{pixels.shape[0]}:".encode())
    h.update(np.ascontiguousarray(pixels).tobytes())
    return h.hexdigest()[:16]


def extract_instance(image: ImageBuffer, annotation: InstanceAnnotation) -> ObjectInstance:
    mask = annotation_mask(annotation, image.width, image.height)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1]) + 1
    x0, x1 = int(cols[0]), int(cols[-1]) + 1
    sub = mask[y0:y1, x0:x1]
    crop = np.array(image.pixels[y0:y1, x0:x1], copy=True)
    crop[:, :, 3] = np.where(sub, 255, 0).astype(np.uint8)
    return ObjectInstance(
        id=crop_id(crop),
        label=annotation.label,
        image=ImageBuffer(crop),
        mask_pixel_count=int(sub.sum()),
        source_image=image.content_hash,
        source_bbox=BBox(x0, y0, x1 - x0, y1 - y0),
    )


@dataclass
class AnnotationFile:
    images: List[dict] = field(default_factory=list)
    instances: List[InstanceAnnotation] = field(default_factory=list)


def parse_annotations(doc: dict) -> AnnotationFile:
    """Read the annotation JSON document.

    Instances carry either ``"polygon"`` (one ``[[x, y], ...]`` ring or a list
    of rings) or ``"rle": {"size": [h, w], "counts": [...]}``.
    """
    out = AnnotationFile(images=list(doc.get("images", [])))
    for item in doc.get("instances", []):
        rle = None
        polygons: tuple = ()
        if "rle" in item:
            h, w = item["rle"]["size"]
            rle = RunLengthMask(int(h), int(w), tuple(int(c) for c in item["rle"]["counts"]))
        elif "polygon" in item:
            polygons = tuple(tuple(tuple(map(float, v)) for v in ring) for ring in _as_polygon_list(item["polygon"]))
        out.instances.append(InstanceAnnotation(item["image"], item["label"], polygons, rle))
    return out


def load_annotations(path: Union[str, Path]) -> AnnotationFile:
    return parse_annotations(json.loads(Path(path).read_text()))


def extract_all(image_dir: Union[str, Path], annotations: AnnotationFile) -> Tuple[List[ObjectInstance], List[str]]:
    """Extract every annotated instance; returns ``(instances, problems)``.

    Degenerate or out-of-bounds annotations are reported, not raised.
    """
    image_dir = Path(image_dir)
    declared = {img["file"]: img for img in annotations.images}
    cache: dict = {}
    instances: List[ObjectInstance] = []
    problems: List[str] = []
    for i, ann in enumerate(annotations.instances):
        if ann.image_file not in cache:
            cache.clear()
            cache[ann.image_file] = ImageBuffer.open(image_dir / ann.image_file)
        image = cache[ann.image_file]
        meta = declared.get(ann.image_file)
        if meta and (meta.get("width"), meta.get("height")) != (image.width, image.height):
            problems.append(f"instance {i}: {ann.image_file} is {image.width}x{image.height}, annotation says "
                            f"{meta.get('width')}x{meta.get('height')}")
            continue
        try:
            instances.append(extract_instance(image, ann))
        except (DegenerateAnnotationError, AnnotationBoundsError) as exc:
            problems.append(f"instance {i} ({ann.label} in {ann.image_file}): {exc}")
    return instances, problems
