"""Relative features: formulas, invariances, binning."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxrescore.core import (
    BinningConfig,
    Detection,
    InvalidInputError,
    MissingScaleFactorError,
    RelativeFeature,
    bin_feature,
    featurize,
    relative_location,
    relative_scale,
)

from conftest import det, gt

_BINNING = BinningConfig.default(["chair", "table"])


class TestRelativeLocation:
    def test_identical_centers(self):
        assert relative_location((5.0, 5.0), (5.0, 5.0), 17.0, 2.0) == (0.0, 0.0)

    def test_worked_case(self):
        assert relative_location((110.0, 220.0), (100.0, 200.0), 10.0, 1.0) \
            == (1.0, 2.0)

    @given(st.floats(0.1, 100.0))
    def test_homogeneity(self, k):
        base = relative_location((110.0, 220.0), (100.0, 200.0), 10.0, 1.5)
        scaled = relative_location((110.0 * k, 220.0 * k),
                                   (100.0 * k, 200.0 * k), 10.0 * k, 1.5)
        assert scaled[0] == pytest.approx(base[0], rel=1e-12)
        assert scaled[1] == pytest.approx(base[1], rel=1e-12)

    def test_rejects_bad_height_and_factor(self):
        with pytest.raises(InvalidInputError):
            relative_location((0, 0), (1, 1), 0.0, 1.0)
        with pytest.raises(InvalidInputError):
            relative_location((0, 0), (1, 1), 1.0, -2.0)


class TestRelativeScale:
    def test_equal_heights(self):
        assert relative_scale(12.0, 12.0) == 0.0

    def test_double_height(self):
        assert relative_scale(20.0, 10.0) == pytest.approx(math.log(2), abs=1e-12)

    @given(st.floats(0.1, 1e4), st.floats(0.1, 1e4))
    def test_antisymmetry(self, a, b):
        assert relative_scale(a, b) == pytest.approx(-relative_scale(b, a),
                                                     abs=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidInputError):
            relative_scale(-1.0, 2.0)
        with pytest.raises(InvalidInputError):
            relative_scale(2.0, 0.0)


class TestFeaturize:
    def test_self_feature_is_origin(self, binning_two):
        obj = gt(0, "chair", 50.0, 60.0, 20.0)
        feat = featurize(obj, obj, binning_two)
        assert feat.offset == (0.0, 0.0)
        assert feat.scale_ratio == 0.0

    def test_numeric_case(self):
        # oracle: direct evaluation of the offset and log-ratio formulas
        config = BinningConfig(scale_factors={"chair": 1.5})
        query = gt(0, "table", 130.0, 250.0, 15.0)
        ref = gt(0, "chair", 100.0, 200.0, 20.0)
        feat = featurize(query, ref, config)
        assert feat.offset[0] == pytest.approx(30.0 / (20.0 * 1.5), abs=1e-15)
        assert feat.offset[1] == pytest.approx(50.0 / (20.0 * 1.5), abs=1e-15)
        assert feat.scale_ratio == pytest.approx(math.log(15.0 / 20.0),
                                                 abs=1e-15)

    def test_unknown_category(self, binning_two):
        query = gt(0, "chair", 0.0, 0.0, 5.0)
        ref = gt(0, "lamp", 1.0, 1.0, 5.0)
        with pytest.raises(MissingScaleFactorError):
            featurize(query, ref, binning_two)

    @given(st.sampled_from([0.5, 2.0, 3.0]),
           st.floats(10.0, 500.0), st.floats(10.0, 500.0),
           st.floats(5.0, 80.0), st.floats(5.0, 80.0))
    @settings(max_examples=200)
    def test_scale_invariance(self, k, qx, qy, qh, rh):
        query = gt(0, "table", qx, qy, qh)
        ref = gt(0, "chair", 300.0, 200.0, rh)
        base = featurize(query, ref, _BINNING)
        query_k = gt(0, "table", qx * k, qy * k, qh * k)
        ref_k = gt(0, "chair", 300.0 * k, 200.0 * k, rh * k)
        scaled = featurize(query_k, ref_k, _BINNING)
        assert scaled.offset[0] == pytest.approx(base.offset[0], rel=1e-12,
                                                 abs=1e-12)
        assert scaled.offset[1] == pytest.approx(base.offset[1], rel=1e-12,
                                                 abs=1e-12)
        assert scaled.scale_ratio == pytest.approx(base.scale_ratio, rel=1e-12,
                                                   abs=1e-12)

    @given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4),
           st.floats(10.0, 500.0), st.floats(10.0, 500.0))
    @settings(max_examples=200)
    def test_translation_invariance(self, tx, ty, qx, qy):
        query = gt(0, "table", qx, qy, 12.0)
        ref = gt(0, "chair", 300.0, 200.0, 40.0)
        base = featurize(query, ref, _BINNING)
        query_t = gt(0, "table", qx + tx, qy + ty, 12.0)
        ref_t = gt(0, "chair", 300.0 + tx, 200.0 + ty, 40.0)
        moved = featurize(query_t, ref_t, _BINNING)
        assert moved.offset[0] == pytest.approx(base.offset[0], abs=1e-9)
        assert moved.offset[1] == pytest.approx(base.offset[1], abs=1e-9)
        assert moved.scale_ratio == base.scale_ratio


class TestBinning:
    def test_range_minimum_maps_to_first_bin(self, binning_two):
        feat = RelativeFeature(offset=(-4.0, -4.0), scale_ratio=-2.0)
        assert bin_feature(feat, binning_two) == (0, 0, 0)

    def test_overflow_clamps_to_last_bin(self, binning_two):
        feat = RelativeFeature(offset=(99.0, 4.0), scale_ratio=57.0)
        bx, by, bs = bin_feature(feat, binning_two)
        assert bx == 15 and by == 15 and bs == 7

    def test_midrange_arithmetic(self, binning_two):
        # oracle: floor((v - min) / width) per axis
        feat = RelativeFeature(offset=(0.3, -1.7), scale_ratio=0.6)
        expected = (
            math.floor((0.3 + 4.0) / 0.5),
            math.floor((-1.7 + 4.0) / 0.5),
            math.floor((0.6 + 2.0) / 0.5),
        )
        assert bin_feature(feat, binning_two) == expected

    @given(st.floats(allow_nan=False, allow_infinity=False),
           st.floats(allow_nan=False, allow_infinity=False),
           st.floats(allow_nan=False, allow_infinity=False))
    def test_total_over_finite_features(self, ox, oy, s):
        bx, by, bs = bin_feature(RelativeFeature((ox, oy), s), _BINNING)
        assert 0 <= bx < 16 and 0 <= by < 16 and 0 <= bs < 8


class TestDetectionModel:
    def test_confidence_and_geometry_validation(self):
        with pytest.raises(InvalidInputError):
            det(0, 0, "chair", 0.0, 0.0, 10.0, confidence=1.5)
        with pytest.raises(InvalidInputError):
            Detection(0, 0, "chair", 0.0, 0.0, -3.0, 10.0, 0.5)

    def test_center_roundtrip(self):
        d = det(3, "img", "chair", 50.0, 60.0, 20.0, confidence=0.7)
        assert d.center == (50.0, 60.0)
        assert d.bbox[2] == 15.0 and d.bbox[3] == 20.0
