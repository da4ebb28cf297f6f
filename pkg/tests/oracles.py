"""Independent reference implementations used as test oracles.

These are written from the definitions with plain Python loops so that they
share no code with the package.
"""

from __future__ import annotations

import itertools
from typing import List, Sequence, Tuple

import numpy as np


def box_iou(a: Tuple[float, float, float, float], b: Tuple[float, float, float, float]) -> float:
    ax1, ay1, aw, ah = a
    bx1, by1, bw, bh = b
    ix = max(0.0, min(ax1 + aw, bx1 + bw) - max(ax1, bx1))
    iy = max(0.0, min(ay1 + ah, by1 + bh) - max(ay1, by1))
    inter = ix * iy
    if inter == 0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


def staircase_ap(preds: Sequence[Tuple[float, str, tuple]], gts: Sequence[tuple], eps: float) -> float:
    """AP from an explicit precision/recall staircase.

    ``preds`` are ``(confidence, label, box)``; labels only take part in the
    tie-break.  Every cut of the ranked list contributes one (recall,
    precision) point; AP sums recall increments times the best precision
    reachable at or beyond that recall.
    """
    if not gts or not preds:
        return 0.0
    ranked = sorted(preds, key=lambda p: (-p[0], p[1], *p[2]))
    taken = [False] * len(gts)
    points: List[Tuple[float, float]] = []
    tp = 0
    for k, (_, _, box) in enumerate(ranked, start=1):
        best, best_iou = None, -1.0
        for g, gbox in enumerate(gts):
            if taken[g]:
                continue
            v = box_iou(box, gbox)
            if v > best_iou:
                best, best_iou = g, v
        if best is not None and best_iou >= eps:
            taken[best] = True
            tp += 1
        points.append((tp / len(gts), tp / k))
    ap, prev = 0.0, 0.0
    for r in sorted({r for r, _ in points}):
        if r == 0.0:
            continue
        p_max = max(p for rr, p in points if rr >= r)
        ap += (r - prev) * p_max
        prev = r
    return ap


def interval_masks(n: int, max_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """All integer intervals ``[x, x + w)`` inside ``[0, n)`` with ``w <= max_len``.

    Returns ``(params, masks)`` with ``params[i] = (x, w)`` and ``masks[i]`` a
    boolean raster of length ``n``.
    """
    params = [(x, w) for w in range(1, max_len + 1) for x in range(0, n - w + 1)]
    masks = np.zeros((len(params), n), dtype=bool)
    for i, (x, w) in enumerate(params):
        masks[i, x:x + w] = True
    return np.array(params), masks


def raster(box, n: int) -> np.ndarray:
    x, y, w, h = (int(v) for v in box)
    m = np.zeros((n, n), dtype=bool)
    m[y:y + h, x:x + w] = True
    return m


def raster_iou(a, b, n: int) -> float:
    ma, mb = raster(a, n), raster(b, n)
    return (ma & mb).sum() / (ma | mb).sum()


def exhaustive_assignments(n_pred: int, n_gt: int):
    """Every partial injective assignment of predictions to ground truths."""
    for k in range(min(n_pred, n_gt) + 1):
        for preds in itertools.combinations(range(n_pred), k):
            for gts in itertools.permutations(range(n_gt), k):
                yield dict(zip(preds, gts))


def point_in_polygon(px: float, py: float, poly) -> bool:
    """Even-odd rule, scalar and loop-based."""
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > py) != (y2 > py):
            if px < x1 + (py - y1) * (x2 - x1) / (y2 - y1):
                inside = not inside
    return inside


def shoelace(poly) -> float:
    n = len(poly)
    return abs(sum(poly[i][0] * poly[(i + 1) % n][1] - poly[(i + 1) % n][0] * poly[i][1] for i in range(n))) / 2


def near_edge(px: float, py: float, poly, tol: float = 1e-9) -> bool:
    """Whether the point lies within ``tol`` of some polygon edge."""
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        dx, dy = x2 - x1, y2 - y1
        seg = dx * dx + dy * dy
        t = 0.0 if seg == 0 else max(0.0, min(1.0, ((px - x1) * dx + (py - y1) * dy) / seg))
        if (px - x1 - t * dx) ** 2 + (py - y1 - t * dy) ** 2 <= tol * tol:
            return True
    return False
