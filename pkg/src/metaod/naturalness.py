"""HOG descriptors and histogram intersection as a naturalness score.

Dalal-Triggs layout: 8x8-pixel cells, 9 unsigned orientation bins whose
centres sit at 0, 20, ..., 160 degrees, 2x2-cell blocks with a one-cell stride,
L2 block normalisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ImageBuffer

CELL = 8
BINS = 9
BLOCK = 2
_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class HOGDescriptor:
    vector: np.ndarray = field(repr=False)
    cells_x: int
    cells_y: int

    @property
    def geometry(self) -> tuple:
        return (self.cells_x, self.cells_y)


def grayscale(image: ImageBuffer) -> np.ndarray:
    rgb = image.pixels[:, :, :3].astype(float)
    return 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]


def cell_histograms(gray: np.ndarray) -> np.ndarray:
    """``(cells_y, cells_x, 9)`` magnitude-weighted orientation histograms."""
    padded = np.pad(gray, 1, mode="edge")
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    mag = np.hypot(gx, gy)
    theta = np.degrees(np.arctan2(gy, gx)) % 180.0

    pos = theta / (180.0 / BINS)
    lo = np.floor(pos).astype(int) % BINS
    hi = (lo + 1) % BINS
    frac = pos - np.floor(pos)

    cy, cx = gray.shape[0] // CELL, gray.shape[1] // CELL
    h, w = cy * CELL, cx * CELL
    cell_row = (np.arange(h) // CELL)[:, None].repeat(w, axis=1)
    cell_col = (np.arange(w) // CELL)[None, :].repeat(h, axis=0)
    flat_cell = (cell_row * cx + cell_col).ravel()
    m = mag[:h, :w].ravel()
    f = frac[:h, :w].ravel()
    n = cy * cx * BINS
    hist = np.bincount(flat_cell * BINS + lo[:h, :w].ravel(), weights=m * (1.0 - f), minlength=n)
    hist += np.bincount(flat_cell * BINS + hi[:h, :w].ravel(), weights=m * f, minlength=n)
    return hist.reshape(cy, cx, BINS)


def hog(image: ImageBuffer) -> HOGDescriptor:
    if image.width < 2 * CELL or image.height < 2 * CELL:
        raise ValueError(f"HOG needs at least a 16x16 image, got {image.width}x{image.height}")
    cells = cell_histograms(grayscale(image))
    cy, cx = cells.shape[:2]
    blocks = np.concatenate(
        [cells[dy:cy - BLOCK + 1 + dy, dx:cx - BLOCK + 1 + dx] for dy in range(BLOCK) for dx in range(BLOCK)],
        axis=2,
    )
    norms = np.sqrt((blocks ** 2).sum(axis=2, keepdims=True))
    blocks = blocks / (norms + _EPS)
    return HOGDescriptor(blocks.ravel(), cx, cy)


def hog_intersection(a: HOGDescriptor, b: HOGDescriptor) -> float:
    """Histogram intersection of the L1-normalised descriptors, in ``[0, 1]``."""
    if a.geometry != b.geometry:
        raise ValueError(f"descriptor geometry differs: {a.geometry} vs {b.geometry}")
    if np.array_equal(a.vector, b.vector):
        return 1.0
    sa, sb = a.vector.sum(), b.vector.sum()
    if sa == 0 and sb == 0:
        return 1.0
    if sa == 0 or sb == 0:
        return 0.0
    score = float(np.minimum(a.vector / sa, b.vector / sb).sum())
    return min(1.0, score)


def naturalness(synthetic: ImageBuffer, background: ImageBuffer) -> float:
    return hog_intersection(hog(synthetic), hog(background))
