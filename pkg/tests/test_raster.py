"""Raster core: truncation bounds, normalization, remapping, tiling, merge."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sort_truncation_oracle as _sort_oracle
from xferkit.raster import (LABEL_VOID, BandRole, ClassLookup, LabelMap,
                            MultibandRaster, ProbabilityMap, Window,
                            compute_truncation_bounds, extract_patch,
                            merge_probability_patches, normalize_truncate,
                            plan_tiles, remap_labels)


def _single_band(values, dtype, role=BandRole.RED, nodata=None):
    arr = np.asarray(values, dtype=dtype).reshape(1, 1, -1)
    return MultibandRaster(arr, (role,), nodata=nodata)


class TestTruncationBounds:
    def test_uniform_0_to_99(self):
        raster = _single_band(np.arange(100), np.uint8)
        lo, hi, degenerate = compute_truncation_bounds([raster], BandRole.RED)
        assert (lo, hi) == (2.0, 97.0)
        assert not degenerate

    def test_constant_degenerate(self):
        raster = _single_band([500] * 64, np.uint16)
        bounds = compute_truncation_bounds([raster], BandRole.RED)
        assert bounds.lo == bounds.hi == 500.0
        assert bounds.degenerate

    def test_pooling_is_order_invariant(self):
        ramp = np.arange(65536, dtype=np.uint16)
        whole = _single_band(ramp, np.uint16)
        first = _single_band(ramp[::2], np.uint16)
        second = _single_band(ramp[1::2], np.uint16)
        assert compute_truncation_bounds([whole], BandRole.RED) == \
            compute_truncation_bounds([first, second], BandRole.RED) == \
            compute_truncation_bounds([second, first], BandRole.RED)

    def test_matches_sort_oracle_u16(self, rng):
        chunks = [rng.integers(0, 60000, size=rng.integers(10, 500)).astype(np.uint16)
                  for _ in range(4)]
        rasters = [_single_band(c, np.uint16) for c in chunks]
        for lower, upper in ((2, 2), (0, 0), (10, 5)):
            got = compute_truncation_bounds(rasters, BandRole.RED, lower, upper)
            assert (got.lo, got.hi) == _sort_oracle(chunks, lower, upper)

    def test_float_path_within_bin_width(self, rng):
        chunks = [rng.uniform(-5, 20, size=3000).astype(np.float32) for _ in range(3)]
        rasters = [_single_band(c, np.float32) for c in chunks]
        got = compute_truncation_bounds(rasters, BandRole.RED)
        lo, hi = _sort_oracle(chunks, 2, 2)
        bin_w = (max(c.max() for c in chunks) - min(c.min() for c in chunks)) / 65536
        assert abs(got.lo - lo) <= bin_w + 1e-9
        assert abs(got.hi - hi) <= bin_w + 1e-9

    def test_nodata_excluded_and_empty_errors(self):
        raster = _single_band([5, 5, 5, 9], np.uint8, nodata=9)
        bounds = compute_truncation_bounds([raster], BandRole.RED)
        assert bounds.lo == bounds.hi == 5.0
        all_nodata = _single_band([9, 9], np.uint8, nodata=9)
        with pytest.raises(ValueError, match="no valid samples"):
            compute_truncation_bounds([all_nodata], BandRole.RED)

    def test_missing_band_errors(self):
        raster = _single_band([1, 2], np.uint8, role=BandRole.GREEN)
        with pytest.raises(ValueError, match="NIR"):
            compute_truncation_bounds([raster], BandRole.NIR)


class TestNormalizeTruncate:
    def test_affine_endpoints(self):
        raster = _single_band([10, 20, 30, 5, 40], np.uint8)
        out = normalize_truncate(raster, {0: (10, 30)})
        np.testing.assert_allclose(out.data[0, 0], [0.0, 0.5, 1.0, 0.0, 1.0])
        assert out.normalized and out.dtype.name == "F32"

    def test_degenerate_bounds_map_to_zero(self):
        raster = _single_band([7, 7, 7], np.uint16)
        out = normalize_truncate(raster, {0: (7, 7)})
        np.testing.assert_array_equal(out.data[0, 0], [0.0, 0.0, 0.0])

    def test_nodata_preserved(self):
        raster = _single_band([10, 99, 30], np.uint8, nodata=99)
        out = normalize_truncate(raster, {0: (10, 30)})
        assert out.nodata == -1.0
        np.testing.assert_allclose(out.data[0, 0], [0.0, -1.0, 1.0])

    def test_missing_bounds_error(self):
        raster = _single_band([1, 2], np.uint8)
        with pytest.raises(ValueError, match="missing bounds"):
            normalize_truncate(raster, {}, bands=[0])

    def test_ramp_clamp_fractions_match_oracle(self):
        ramp = np.arange(65536, dtype=np.uint16)
        raster = _single_band(ramp, np.uint16)
        bounds = compute_truncation_bounds([raster], BandRole.RED)
        out = normalize_truncate(raster, {0: (bounds.lo, bounds.hi)})
        lo, hi = _sort_oracle([ramp], 2, 2)
        expect_zero = int((ramp <= lo).sum())
        expect_one = int((ramp >= hi).sum())
        assert int((out.data[0, 0] == 0.0).sum()) == expect_zero
        assert int((out.data[0, 0] == 1.0).sum()) == expect_one
        # about 2% of pixels pinned at each end
        assert abs(expect_zero / ramp.size - 0.02) < 0.001
        assert abs(expect_one / ramp.size - 0.02) < 0.001

    @given(st.lists(st.integers(0, 65535), min_size=2, max_size=60),
           st.integers(0, 65534))
    @settings(max_examples=60, deadline=None)
    def test_monotone_into_unit_interval(self, values, lo):
        hi = lo + 1000
        raster = _single_band(values, np.uint16)
        out = normalize_truncate(raster, {0: (lo, hi)}).data[0, 0]
        assert out.min() >= 0.0 and out.max() <= 1.0
        order = np.argsort(np.asarray(values, dtype=np.int64), kind="stable")
        assert np.all(np.diff(out[order]) >= 0)


class TestRemapLabels:
    def test_identity(self):
        lookup = ClassLookup({0: 0, 1: 1, 2: 2, 3: 3})
        arr = np.array([[0, 1], [2, 3]], dtype=np.uint8)
        np.testing.assert_array_equal(remap_labels(arr, lookup).codes, arr)

    def test_jax_style_elevated_road_to_void(self):
        # source schema: 0 ground, 1 tree, 2 roof, 3 water, 4 elevated road
        lookup = ClassLookup({0: 0, 1: 1, 2: 2, 3: 3, 4: 255})
        arr = np.array([[4, 2], [0, 4]], dtype=np.uint8)
        out = remap_labels(arr, lookup)
        np.testing.assert_array_equal(out.codes, [[255, 2], [0, 255]])

    def test_haiti_london_style_merge(self):
        # 10 road, 11 impervious, 12 agriculture, 13 grassland, 14 barren,
        # 15 shrubland, 1 tree, 2 building, 3 water
        lookup = ClassLookup({10: 0, 11: 0, 12: 0, 13: 0, 14: 0, 15: 255,
                              1: 1, 2: 2, 3: 3})
        arr = np.array([[10, 11, 12], [13, 14, 15], [1, 2, 3]], dtype=np.uint16)
        out = remap_labels(arr, lookup)
        np.testing.assert_array_equal(
            out.codes, [[0, 0, 0], [0, 0, 255], [1, 2, 3]])

    def test_unmapped_codes_listed(self):
        lookup = ClassLookup({0: 0})
        with pytest.raises(ValueError, match=r"\[7, 9\]"):
            remap_labels(np.array([[0, 7], [9, 0]], dtype=np.uint8), lookup)

    def test_idempotent_on_target_schema(self):
        lookup = ClassLookup({0: 0, 1: 1, 2: 2, 3: 3, 255: 255})
        arr = np.array([[0, 255], [3, 1]], dtype=np.uint8)
        once = remap_labels(arr, lookup)
        twice = remap_labels(once.codes, lookup)
        np.testing.assert_array_equal(once.codes, twice.codes)

    def test_lookup_json_roundtrip(self):
        lookup = ClassLookup.from_json('{"map": {"4": 255, "0": 0}}')
        assert lookup.entries == {4: 255, 0: 0}
        assert ClassLookup.from_json(lookup.to_json()).entries == lookup.entries


class TestPlanTiles:
    def test_exact_fit_single_window(self):
        plan = plan_tiles(512, 512, 512, 0.5)
        assert plan.windows == (Window(0, 0, 512, 512),)
        assert not plan.undersized

    def test_1024_gives_nine_windows(self):
        plan = plan_tiles(1024, 1024, 512, 0.5)
        origins = sorted({w.x for w in plan.windows})
        assert origins == [0, 256, 512]
        assert len(plan.windows) == 9

    def test_clamped_final_window(self):
        plan = plan_tiles(700, 512, 512, 0.5)
        assert sorted({w.x for w in plan.windows}) == [0, 188]
        assert sorted({w.y for w in plan.windows}) == [0]
        assert len(plan.windows) == 2

    def test_undersized_raster(self):
        plan = plan_tiles(100, 40, 512, 0.5)
        assert plan.undersized
        assert plan.windows == (Window(0, 0, 100, 40),)

    @given(st.integers(1, 1500), st.integers(1, 1500),
           st.integers(1, 600), st.floats(0, 0.9))
    @settings(max_examples=120, deadline=None)
    def test_coverage_and_bounds(self, w, h, patch, overlap):
        plan = plan_tiles(w, h, patch, overlap)
        assert plan.stride == max(1, int(patch * (1 - overlap)))
        seen_x = np.zeros(w, dtype=bool)
        seen_y = np.zeros(h, dtype=bool)
        for win in plan.windows:
            assert win.x >= 0 and win.y >= 0
            assert win.x + win.width <= w and win.y + win.height <= h
            seen_x[win.x:win.x + win.width] = True
            seen_y[win.y:win.y + win.height] = True
        assert seen_x.all() and seen_y.all()


def _patch(window, dist):
    probs = np.zeros((4, window.height, window.width), dtype=np.float32)
    for c, v in enumerate(dist):
        probs[c] = v
    return window, probs


class TestMerge:
    def test_single_patch_identity(self, rng):
        probs = rng.dirichlet(np.ones(4), size=(3, 5)).astype(np.float32)
        probs = np.moveaxis(probs, -1, 0)
        pmap, labels = merge_probability_patches(
            [(Window(0, 0, 5, 3), probs)], 5, 3)
        np.testing.assert_allclose(pmap.probs, probs, atol=1e-7)
        np.testing.assert_array_equal(labels.codes, np.argmax(probs, axis=0))

    def test_two_patch_mean(self):
        w = Window(0, 0, 1, 1)
        one = _patch(w, (0.4, 0.6, 0.0, 0.0))
        two = _patch(w, (0.2, 0.8, 0.0, 0.0))
        pmap, _ = merge_probability_patches([one, two], 1, 1)
        assert pmap.probs[1, 0, 0] == pytest.approx(0.7, abs=1e-7)
        assert pmap.weight[0, 0] == 2

    def test_exact_tie_takes_lowest_class(self):
        w = Window(0, 0, 1, 1)
        one = _patch(w, (1.0, 0.0, 0.0, 0.0))
        two = _patch(w, (0.0, 0.0, 1.0, 0.0))
        _, labels = merge_probability_patches([one, two], 1, 1)
        assert labels.codes[0, 0] == 0

    def test_uncovered_pixels_void(self):
        pmap, labels = merge_probability_patches(
            [_patch(Window(0, 0, 1, 1), (1, 0, 0, 0))], 2, 1)
        assert labels.codes[0, 1] == LABEL_VOID
        assert pmap.weight[0, 1] == 0

    def test_permutation_invariance_bit_identical(self, rng):
        windows = [Window(x, y, 4, 4) for x in (0, 2, 4) for y in (0, 2)]
        patches = []
        for win in windows:
            raw = rng.dirichlet(np.ones(4), size=(win.height, win.width))
            patches.append((win, np.moveaxis(raw, -1, 0).astype(np.float32)))
        base, _ = merge_probability_patches(patches, 8, 6)
        for _ in range(5):
            perm = [patches[i] for i in rng.permutation(len(patches))]
            merged, _ = merge_probability_patches(perm, 8, 6)
            assert merged.probs.tobytes() == base.probs.tobytes()
            np.testing.assert_array_equal(merged.weight, base.weight)

    def test_merge_equals_full_image_for_pointwise_classifier(self, rng):
        # context-free classifier: per-pixel softmax of fixed linear scores
        image = rng.uniform(0, 1, size=(3, 30, 22)).astype(np.float32)
        weights = rng.normal(size=(4, 3)).astype(np.float32)

        def classify(pixels):
            scores = np.einsum("cb,byx->cyx", weights, pixels).astype(np.float64)
            e = np.exp(scores - scores.max(axis=0))
            return (e / e.sum(axis=0)).astype(np.float32)

        full = classify(image)
        plan = plan_tiles(22, 30, 16, 0.5)
        patches = [(w, classify(extract_patch(image, w))) for w in plan.windows]
        pmap, labels = merge_probability_patches(patches, 22, 30)
        np.testing.assert_array_equal(
            labels.codes, np.argmax(full, axis=0).astype(np.uint8))
        np.testing.assert_allclose(pmap.probs, full, atol=1e-6)

    def test_bad_patches_rejected(self):
        bad_sum = np.full((4, 1, 1), 0.3, dtype=np.float32)
        with pytest.raises(ValueError, match="sum to 1"):
            merge_probability_patches([(Window(0, 0, 1, 1), bad_sum)], 1, 1)
        ok = np.full((4, 1, 1), 0.25, dtype=np.float32)
        with pytest.raises(ValueError, match="exceeds raster bounds"):
            merge_probability_patches([(Window(3, 0, 1, 1), ok)], 2, 1)
        with pytest.raises(ValueError, match="does not match"):
            merge_probability_patches([(Window(0, 0, 2, 1), ok)], 2, 1)


class TestTypes:
    def test_duplicate_role_rejected(self):
        data = np.zeros((2, 1, 1), dtype=np.uint8)
        with pytest.raises(ValueError, match="one band per role"):
            MultibandRaster(data, (BandRole.RED, BandRole.RED))

    def test_label_schema_enforced(self):
        with pytest.raises(ValueError, match="outside schema"):
            LabelMap(np.array([[0, 7]], dtype=np.uint8))

    def test_probability_sum_enforced(self):
        probs = np.full((4, 1, 1), 0.3, dtype=np.float32)
        with pytest.raises(ValueError, match="sum to 1"):
            ProbabilityMap(probs, np.ones((1, 1), dtype=np.int32))

    def test_nodata_range_checked(self):
        data = np.zeros((1, 1, 1), dtype=np.uint8)
        with pytest.raises(ValueError, match="nodata"):
            MultibandRaster(data, (BandRole.RED,), nodata=300)
