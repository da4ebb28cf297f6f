"""Synthetic backgrounds, ground truth and object pools for harness tests."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from metaod.core import BBox, Detection, DetectionSet, ImageBuffer, overlaps
from metaod.extraction import ObjectInstance, crop_id
from metaod.gateway import DetectorEndpoint, MockScenario
from metaod.pool import ObjectPool, save_pool

LABELS = ("car", "cat", "dog")


def textured(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    base = rng.integers(40, 200, size=3)
    grad = np.stack([(xx * rng.uniform(0.2, 0.6) + yy * rng.uniform(0.1, 0.4)) % 60] * 3, axis=-1)
    noise = rng.integers(0, 25, size=(height, width, 3))
    return np.clip(base + grad + noise, 0, 255).astype(np.uint8)


def random_boxes(rng: np.random.Generator, m: int, dims, lo: int = 12, hi: int = 26) -> List[BBox]:
    W, H = dims
    boxes: List[BBox] = []
    while len(boxes) < m:
        w, h = int(rng.integers(lo, hi)), int(rng.integers(lo, hi))
        b = BBox(int(rng.integers(0, W - w)), int(rng.integers(0, H - h)), w, h)
        if not any(overlaps(b, o) for o in boxes):
            boxes.append(b)
    return boxes


def blob(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    """RGBA ellipse with a noisy fill and a binary alpha."""
    yy, xx = np.mgrid[0:h, 0:w]
    inside = ((xx + 0.5 - w / 2) / (w / 2)) ** 2 + ((yy + 0.5 - h / 2) / (h / 2)) ** 2 <= 1.0
    rgb = np.clip(rng.integers(0, 255, size=3) + rng.integers(-20, 20, size=(h, w, 3)), 0, 255)
    return np.dstack([rgb, np.where(inside, 255, 0)]).astype(np.uint8)


def make_instance(rng: np.random.Generator, label: str, w: int, h: int) -> ObjectInstance:
    px = blob(rng, w, h)
    return ObjectInstance(
        id=crop_id(px),
        label=label,
        image=ImageBuffer(px),
        mask_pixel_count=int((px[:, :, 3] == 255).sum()),
        source_image="synthetic.png",
        source_bbox=BBox(0, 0, w, h),
    )


@dataclass
class World:
    root: Path
    background_glob: str
    pool_dir: Path
    images: List[ImageBuffer] = field(default_factory=list)
    ground_truth: Dict[str, DetectionSet] = field(default_factory=dict)

    def scenario(self, kind: str = "perfect", **kw) -> MockScenario:
        return MockScenario(kind, self.ground_truth, **kw)

    def endpoint(self, scenario: MockScenario, endpoint_id: str = "mock") -> DetectorEndpoint:
        path = self.root / f"{endpoint_id}.json"
        scenario.save(path)
        return DetectorEndpoint(id=endpoint_id, kind="mock", address=str(path), qps_limit=1e9, max_in_flight=8)


def make_world(
    root: Path,
    counts: Sequence[int],
    seed: int = 0,
    dims=(160, 120),
    labels: Sequence[str] = LABELS,
    pool_per_label: int = 10,
) -> World:
    """Backgrounds with ``counts[i]`` ground-truth objects each, plus a pool."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    bg_dir = root / "backgrounds"
    bg_dir.mkdir(parents=True, exist_ok=True)
    world = World(root, str(bg_dir / "*.png"), root / "pool")
    for i, m in enumerate(counts):
        img = ImageBuffer.from_array(textured(rng, *dims))
        img.save_png(bg_dir / f"bg_{i:03d}.png")
        dets = tuple(
            Detection(b, labels[int(rng.integers(len(labels)))], float(rng.uniform(0.5, 1.0)))
            for b in random_boxes(rng, m, dims)
        )
        world.images.append(img)
        world.ground_truth[img.content_hash] = DetectionSet(img.content_hash, dets)
    instances = [
        make_instance(rng, label, int(rng.integers(10, 22)), int(rng.integers(10, 22)))
        for label in labels
        for _ in range(pool_per_label)
    ]
    save_pool(ObjectPool.from_instances(instances), world.pool_dir)
    return world


def write_config(path: Path, **fields) -> Path:
    path.write_text(json.dumps(fields, indent=2))
    return path
