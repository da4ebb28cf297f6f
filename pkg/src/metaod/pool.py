"""Per-category object pool: pruning, average-hash selection and resizing."""

from __future__ import annotations

import json
import logging
import math
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .core import BBox, ImageBuffer
from .errors import MissingCategoryError
from .extraction import ObjectInstance

log = logging.getLogger(__name__)

THUMB = 8
# thumbnail cells are rounded before thresholding so that a flat image yields
# exactly equal cells regardless of float summation order
_CELL_DECIMALS = 6


@dataclass(frozen=True)
class PerceptualHash:
    """64-bit average hash; bit ``r * 8 + c`` is thumbnail cell ``(r, c)``."""

    bits: int

    def __post_init__(self) -> None:
        if not 0 <= self.bits < 1 << 64:
            raise ValueError("hash must fit in 64 bits")

    def __sub__(self, other: "PerceptualHash") -> int:
        return hamming(self, other)

    @property
    def hex(self) -> str:
        return f"{self.bits:016x}"

    @classmethod
    def from_hex(cls, text: str) -> "PerceptualHash":
        if not re.fullmatch(r"[0-9a-f]{16}", text):
            raise ValueError(f"expected 16 lowercase hex chars, got {text!r}")
        return cls(int(text, 16))

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "PerceptualHash":
        value = 0
        for i, b in enumerate(np.asarray(bits, dtype=bool).ravel()):
            if b:
                value |= 1 << i
        return cls(value)

    def to_array(self) -> np.ndarray:
        return np.array([(self.bits >> i) & 1 for i in range(64)], dtype=bool).reshape(THUMB, THUMB)


def hamming(a: PerceptualHash, b: PerceptualHash) -> int:
    return bin(a.bits ^ b.bits).count("1")


def _area_weights(n: int, cells: int) -> np.ndarray:
    """``(cells, n)`` matrix averaging ``n`` unit pixels into ``cells`` equal bins."""
    edges = np.linspace(0.0, n, cells + 1)
    lo = np.maximum(edges[:-1, None], np.arange(n)[None, :])
    hi = np.minimum(edges[1:, None], np.arange(n)[None, :] + 1)
    w = np.clip(hi - lo, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def luma(image: ImageBuffer) -> np.ndarray:
    """Rec.601 luma after compositing over black."""
    px = image.pixels.astype(float)
    a = px[:, :, 3] / 255.0
    return (0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]) * a


def thumbnail(image: ImageBuffer) -> np.ndarray:
    """8x8 box-filtered luma thumbnail (exact area averaging)."""
    y = luma(image)
    wy = _area_weights(image.height, THUMB)
    wx = _area_weights(image.width, THUMB)
    return np.round(wy @ y @ wx.T, _CELL_DECIMALS)


def _threshold(thumb: np.ndarray) -> PerceptualHash:
    mean = math.fsum(thumb.ravel()) / thumb.size
    return PerceptualHash.from_bits(thumb >= mean)


def ahash(image: ImageBuffer) -> PerceptualHash:
    return _threshold(thumbnail(image))


def reference_hash(background_objects: Sequence[ImageBuffer]) -> PerceptualHash:
    """Hash of the cell-wise mean thumbnail of several same-category crops."""
    if not background_objects:
        raise MissingCategoryError("no background objects to build a reference hash from")
    thumbs = np.stack([thumbnail(im) for im in background_objects])
    return _threshold(np.round(thumbs.mean(axis=0), _CELL_DECIMALS))


def _pool_order(inst: ObjectInstance) -> tuple:
    return (-inst.mask_pixel_count, inst.id)


@dataclass(frozen=True)
class ObjectPool:
    """Instances grouped by label, each group sorted largest mask first."""

    categories: Mapping[str, Tuple[ObjectInstance, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ordered = {}
        for label in sorted(self.categories):
            insts = []
            for inst in self.categories[label]:
                if inst.ahash is None:
                    inst = inst.with_hash(ahash(inst.image))
                insts.append(inst)
            ordered[label] = tuple(sorted(insts, key=_pool_order))
        object.__setattr__(self, "categories", ordered)

    @classmethod
    def from_instances(cls, instances: Iterable[ObjectInstance]) -> "ObjectPool":
        groups: Dict[str, List[ObjectInstance]] = {}
        for inst in instances:
            groups.setdefault(inst.label, []).append(inst)
        return cls(groups)

    def __len__(self) -> int:
        return sum(len(v) for v in self.categories.values())

    def __contains__(self, label: object) -> bool:
        return label in self.categories and bool(self.categories[label])

    def labels(self) -> List[str]:
        return list(self.categories)

    def instances(self, label: str) -> Tuple[ObjectInstance, ...]:
        if label not in self:
            raise MissingCategoryError(f"pool has no instances of {label!r}")
        return self.categories[label]


def keep_count(n: int, keep_fraction: float) -> int:
    # round first: 0.1 * 30 is 3.0000000000000004 in binary floating point
    return max(1, math.ceil(round(keep_fraction * n, 9)))


def prune(pool: ObjectPool, keep_fraction: float = 0.10) -> ObjectPool:
    """Keep the largest ``ceil(keep_fraction * n)`` instances of every category."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    return ObjectPool({
        label: insts[:keep_count(len(insts), keep_fraction)]
        for label, insts in pool.categories.items()
        if insts
    })


def select_similar(pool: ObjectPool, category: str, reference: PerceptualHash) -> ObjectInstance:
    candidates = pool.instances(category)
    return min(candidates, key=lambda o: (hamming(o.ahash, reference), -o.mask_pixel_count, o.id))


def scale_for(size: Tuple[int, int], target_area: float, image_dims: Tuple[int, int], fill: float = 0.9) -> float:
    w, h = size
    W, H = image_dims
    s = math.sqrt(target_area / (w * h))
    return min(s, fill * W / w, fill * H / h)


def resize_to_category(instance: ObjectInstance, background_same_category: Sequence[BBox], image_dims: Tuple[int, int]) -> Tuple[ObjectInstance, float]:
    """Scale ``instance`` to the mean box area of its category in the background.

    Aspect ratio is kept and the result never exceeds 90% of either image
    dimension.  Returns ``(resized, scale)``; the resized instance keeps the
    pool id so reports can point back at the pool file.
    """
    if not background_same_category:
        raise ValueError("need at least one background box of the category")
    target = sum(b.area for b in background_same_category) / len(background_same_category)
    s = scale_for((instance.width, instance.height), target, image_dims)
    new_w = max(1, int(round(instance.width * s)))
    new_h = max(1, int(round(instance.height * s)))
    if (new_w, new_h) == (instance.width, instance.height):
        return instance, s
    # integer rounding can push past the 90% bound by a pixel
    W, H = image_dims
    new_w = min(new_w, max(1, int(0.9 * W)))
    new_h = min(new_h, max(1, int(0.9 * H)))

    src = instance.image.pixels
    rgb = np.asarray(Image.fromarray(np.ascontiguousarray(src[:, :, :3]), "RGB").resize((new_w, new_h), Image.BILINEAR))
    alpha = np.asarray(Image.fromarray(np.ascontiguousarray(src[:, :, 3]), "L").resize((new_w, new_h), Image.BILINEAR))
    mask = alpha >= 128
    if not mask.any():
        mask = alpha == alpha.max()
    out = np.dstack([rgb, np.where(mask, 255, 0).astype(np.uint8)])
    image = ImageBuffer(out)
    return replace(
        instance,
        image=image,
        mask_pixel_count=int(mask.sum()),
        ahash=ahash(image),
    ), s


def _label_dir(label: str) -> str:
    return re.sub(r"[^\w.-]+", "_", label) or "_"


def instance_metadata(inst: ObjectInstance) -> dict:
    b = inst.source_bbox
    return {
        "id": inst.id,
        "label": inst.label,
        "source_image": inst.source_image,
        "source_bbox": [b.x, b.y, b.w, b.h],
        "mask_pixels": inst.mask_pixel_count,
        "ahash": (inst.ahash or ahash(inst.image)).hex,
    }


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_pool(pool: ObjectPool, root: Union[str, Path]) -> None:
    """Write ``<root>/<label>/<id>.png`` plus ``<id>.json`` metadata."""
    root = Path(root)
    for label, insts in pool.categories.items():
        d = root / _label_dir(label)
        d.mkdir(parents=True, exist_ok=True)
        for inst in insts:
            _atomic_write(d / f"{inst.id}.png", inst.image.png_bytes)
            meta = json.dumps(instance_metadata(inst), indent=2) + "\n"
            _atomic_write(d / f"{inst.id}.json", meta.encode())


def load_pool(root: Union[str, Path]) -> ObjectPool:
    root = Path(root)
    instances = []
    for meta_path in sorted(root.glob("*/*.json")):
        meta = json.loads(meta_path.read_text())
        image = ImageBuffer.open(meta_path.with_suffix(".png"))
        x, y, w, h = meta["source_bbox"]
        instances.append(ObjectInstance(
            id=meta["id"],
            label=meta["label"],
            image=image,
            mask_pixel_count=int(meta["mask_pixels"]),
            source_image=meta["source_image"],
            source_bbox=BBox(x, y, w, h),
            ahash=PerceptualHash.from_hex(meta["ahash"]),
        ))
    log.debug("loaded %d instances from %s", len(instances), root)
    return ObjectPool.from_instances(instances)


def remove_instances(root: Union[str, Path], keep: ObjectPool) -> int:
    """Delete pool files not present in ``keep``; returns the number removed."""
    root = Path(root)
    kept = {(label, inst.id) for label, insts in keep.categories.items() for inst in insts}
    removed = 0
    for meta_path in sorted(root.glob("*/*.json")):
        meta = json.loads(meta_path.read_text())
        if (meta["label"], meta["id"]) not in kept:
            meta_path.unlink()
            png = meta_path.with_suffix(".png")
            if png.exists():
                png.unlink()
            removed += 1
    return removed
