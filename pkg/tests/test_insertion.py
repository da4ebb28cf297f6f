import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaod.core import BBox, Detection, DetectionSet, ImageBuffer, overlaps
from metaod.errors import ContractViolation, PlacementExhaustedError
from metaod.extraction import ObjectInstance
from metaod.insertion import (
    FAIL,
    INVALID,
    PASS,
    RELOCATED,
    Placement,
    RelocationOutcome,
    centroid,
    composite,
    dedup_positions,
    guided_region,
    is_valid,
    placed_box,
    relocate,
    sample_guided,
    sample_random,
)

from worlds import random_boxes

CHI2_999 = {3: 16.27}


def baseline_of(*boxes):
    return DetectionSet("bg", tuple(Detection(b, "a", 0.9) for b in boxes))


def obj_of(w, h, alpha=None, seed=0):
    rng = np.random.default_rng(seed)
    px = rng.integers(0, 256, (h, w, 4), dtype=np.uint8)
    px[:, :, 3] = 255 if alpha is None else alpha
    return ObjectInstance("o", "a", ImageBuffer(px), int((px[:, :, 3] == 255).sum()), "s", BBox(0, 0, w, h))


def gray(w=64, h=48, v=90):
    return ImageBuffer.from_array(np.full((h, w, 3), v, dtype=np.uint8))


class TestCentroid:
    @pytest.mark.parametrize("boxes,expected", [
        ([BBox(0, 0, 10, 10)], (5, 5)),
        ([BBox(-1, -1, 2, 2), BBox(9, 9, 2, 2)], (5, 5)),
        ([BBox(-1, -1, 2, 2), BBox(5, -1, 2, 2), BBox(-1, 5, 2, 2)], (2, 2)),
    ])
    def test_mean_of_centres(self, boxes, expected):
        assert centroid(baseline_of(*boxes)) == pytest.approx(expected)

    def test_empty(self):
        with pytest.raises(ContractViolation):
            centroid(baseline_of())


class TestGeometry:
    def test_placed_box_snaps(self):
        assert placed_box((10.0, 10.0), (4, 6)) == BBox(8, 7, 4, 6)
        assert placed_box((10.4, 10.6), (5, 5)) == BBox(8, 8, 5, 5)

    def test_region(self):
        r = guided_region(BBox(40, 40, 20, 20), (10, 10), k=2.0)
        assert r.inner_exclusion == BBox(35, 35, 30, 30)
        assert r.outer == BBox(20, 20, 60, 60)
        assert r.outer.contains(r.inner_exclusion)

    def test_is_valid(self):
        assert is_valid(BBox(0, 0, 5, 5), [BBox(5, 0, 5, 5)], (10, 10))
        assert not is_valid(BBox(0, 0, 6, 5), [BBox(5, 0, 5, 5)], (10, 10))
        assert not is_valid(BBox(6, 0, 5, 5), [], (10, 10))


class TestSamplers:
    def test_guided_never_in_exclusion(self):
        rng = np.random.default_rng(0)
        base = baseline_of(BBox(40, 40, 20, 20))
        obj = obj_of(10, 10)
        for _ in range(10_000):
            p = sample_guided(base, obj, (100, 100), rng)
            x, y = p.center
            assert not (35 < x < 65 and 35 < y < 65)
            assert not overlaps(p.box, base[0].box)
            assert 20 <= x <= 80 and 20 <= y <= 80

    def test_anchor_covering_image_exhausts(self):
        with pytest.raises(PlacementExhaustedError):
            sample_guided(baseline_of(BBox(0, 0, 50, 50)), obj_of(5, 5), (50, 50), np.random.default_rng(0))

    def test_random_empty_baseline_first_sample(self):
        rng = np.random.default_rng(3)
        p = sample_random(baseline_of(), obj_of(6, 6), (30, 20), rng)
        expected = np.random.default_rng(3)
        assert p.center == (expected.uniform(3, 27), expected.uniform(3, 17))

    def test_random_nearly_tiled_exhausts(self):
        # 99% tiled: no 10x10 spot exists
        base = baseline_of(BBox(0, 0, 100, 99))
        with pytest.raises(PlacementExhaustedError):
            sample_random(base, obj_of(10, 10), (100, 100), np.random.default_rng(0))

    def test_random_uniform_over_quadrants(self):
        rng = np.random.default_rng(11)
        obj = obj_of(8, 8)
        W, H = 80, 80
        counts = np.zeros(4)
        for _ in range(10_000):
            x, y = sample_random(baseline_of(), obj, (W, H), rng).center
            counts[(x >= W / 2) + 2 * (y >= H / 2)] += 1
        chi2 = ((counts - 2500) ** 2 / 2500).sum()
        assert chi2 < CHI2_999[3]

    def test_guided_uniform_over_ring(self):
        # the ring around a centred anchor is symmetric: quadrant counts must agree
        rng = np.random.default_rng(12)
        base = baseline_of(BBox(45, 45, 10, 10))
        obj = obj_of(6, 6)
        counts = np.zeros(4)
        for _ in range(10_000):
            x, y = sample_guided(base, obj, (100, 100), rng).center
            counts[(x >= 50) + 2 * (y >= 50)] += 1
        chi2 = ((counts - 2500) ** 2 / 2500).sum()
        assert chi2 < CHI2_999[3]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6), st.sampled_from(["guided", "random"]))
    def test_accepted_placements_are_valid(self, seed, m, mode):
        rng = np.random.default_rng(seed)
        dims = (120, 90)
        base = baseline_of(*random_boxes(rng, m, dims))
        obj = obj_of(int(rng.integers(3, 20)), int(rng.integers(3, 20)))
        for _ in range(20):
            try:
                if mode == "guided":
                    p = sample_guided(base, obj, dims, rng)
                else:
                    p = sample_random(base, obj, dims, rng)
            except PlacementExhaustedError:
                continue
            assert is_valid(p.box, base.boxes(), dims)
            assert p.box == placed_box(p.center, (obj.width, obj.height))


class TestComposite:
    def test_transparent_is_identity(self):
        bg = gray()
        out = composite(bg, obj_of(10, 10, alpha=0), Placement((20, 20), "o", (10, 10)))
        assert out.png_bytes == bg.png_bytes

    def test_opaque_rectangle(self):
        bg = gray()
        obj = obj_of(10, 6)
        out = composite(bg, obj, Placement((20, 20), "o", (10, 6)))
        diff = (out.pixels != bg.pixels).any(axis=2)
        np.testing.assert_array_equal(out.pixels[17:23, 15:25], obj.image.pixels)
        assert not diff[:17].any() and not diff[23:].any()

    def test_checkerboard_support(self):
        bg = gray(v=0)
        alpha = ((np.indices((8, 8)).sum(axis=0) % 2) * 255).astype(np.uint8)
        obj = obj_of(8, 8, alpha=alpha)
        out = composite(bg, obj, Placement((12, 12), "o", (8, 8)))
        changed = np.zeros((48, 64), dtype=bool)
        changed[8:16, 8:16] = alpha == 255
        # guard: an opaque pixel that happens to equal the background would not show up
        same = (obj.image.pixels[:, :, :3] == 0).all(axis=2) & (alpha == 255)
        assert not same.any()
        np.testing.assert_array_equal((out.pixels != bg.pixels).any(axis=2), changed)

    def test_out_of_bounds(self):
        with pytest.raises(ContractViolation):
            composite(gray(), obj_of(10, 10), Placement((2, 2), "o", (10, 10)))


def step_oracle(boundary, start, target):
    length = math.dist(start, target)

    def oracle(p):
        t = math.dist(start, p.center) / length
        return FAIL if t <= boundary + 1e-12 else PASS

    return oracle


class TestRelocate:
    start = Placement((0.0, 0.0), "o", (4, 4))
    target = (100.0, 0.0)

    def test_fails_everywhere(self):
        out = relocate(self.start, self.target, lambda p: FAIL, 0.05)
        # start check plus the probe at t = 1
        assert out.frontier_t == 1.0 and out.queries_used == 2
        assert out.failing_positions == [self.target]

    def test_fails_only_at_start(self):
        out = relocate(self.start, self.target, lambda p: FAIL if p.center == (0.0, 0.0) else PASS, 0.05)
        assert out.frontier_t == 0.0 and not out.failing_positions

    def test_start_must_fail(self):
        with pytest.raises(ContractViolation):
            relocate(self.start, self.target, lambda p: PASS, 0.05)

    def test_invalid_treated_as_upper_bound(self):
        oracle = lambda p: INVALID if p.center[0] > 70 else FAIL  # noqa: E731
        out = relocate(self.start, self.target, oracle, 0.01)
        assert 0.7 - 0.01 <= out.frontier_t <= 0.7

    def test_probes_are_relocated_mode(self):
        seen = []
        relocate(self.start, self.target, lambda p: seen.append(p) or PASS, 0.1, start_verdict=FAIL)
        assert all(p.mode == RELOCATED and p.anchor_index is None for p in seen)

    @pytest.mark.parametrize("boundary", [0.6, 0.1, 0.37, 0.95])
    def test_step_boundary(self, boundary):
        delta = 0.01
        out = relocate(self.start, self.target, step_oracle(boundary, self.start.center, self.target), delta,
                       start_verdict=FAIL)
        assert boundary - delta <= out.frontier_t <= boundary
        assert out.queries_used <= math.ceil(math.log2(1 / delta)) + 1

    @settings(max_examples=300)
    @given(st.floats(0.0, 0.999), st.floats(0.001, 0.5),
           st.tuples(st.floats(-50, 50), st.floats(-50, 50)), st.tuples(st.floats(-50, 50), st.floats(-50, 50)))
    def test_monotone_predicate_property(self, boundary, delta, s, e):
        if math.dist(s, e) < 1e-3:
            return
        start = Placement(s, "o", (4, 4))
        out = relocate(start, e, step_oracle(boundary, s, e), delta, start_verdict=FAIL)
        assert out.queries_used <= math.ceil(math.log2(1 / delta)) + 1
        assert boundary - delta - 1e-9 <= out.frontier_t <= boundary + 1e-9
        for c in out.failing_positions:
            # on the segment
            cross = (e[0] - s[0]) * (c[1] - s[1]) - (e[1] - s[1]) * (c[0] - s[0])
            assert abs(cross) <= 1e-6 * max(1.0, math.dist(s, e) ** 2)


class TestDedup:
    def outcome(self, *points, bg="bg", obj="o"):
        return RelocationOutcome((0, 0), (0, 0), failing_positions=list(points), background=bg, object_id=obj)

    def test_same_centroid_counted_once(self):
        assert dedup_positions([self.outcome((5.0, 5.0)), self.outcome((5.0, 5.0))]) == 1

    def test_disjoint(self):
        assert dedup_positions([self.outcome((1, 1), (9, 9)), self.outcome((20, 20))]) == 3

    def test_subpixel(self):
        assert dedup_positions([self.outcome((5.1, 4.8)), self.outcome((4.9, 5.2))]) == 1

    def test_keyed_by_background_and_object(self):
        assert dedup_positions([self.outcome((5, 5)), self.outcome((5, 5), bg="x"), self.outcome((5, 5), obj="p")]) == 3
