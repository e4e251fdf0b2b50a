import math

import numpy as np
import pytest

from scanplace.errors import InvalidParameterError, ShapeError
from scanplace.windowing import (
    WindowIndex,
    WindowSpec,
    cubic_index,
    partition,
    radial_width,
    spherical_index,
)

from _oracles import brute_partition, brute_spherical_index

SPEC = WindowSpec()   # radial 10 m, theta 1.8 deg, phi 1.8 deg, cubic 10 m


class TestWindowSpec:
    def test_defaults(self):
        assert SPEC.radial_size == 10.0
        assert SPEC.theta_size == 1.8
        assert SPEC.phi_size == 1.8
        assert SPEC.cubic_size == 10.0
        assert SPEC.expansion == 1.5

    def test_bin_counts(self):
        assert SPEC.theta_bins == 100    # 180 / 1.8
        assert SPEC.phi_bins == 200      # 360 / 1.8

    def test_radial_width_expands_per_level(self):
        # 10 * 1.5^level, exact in floating point for small powers
        assert radial_width(SPEC, 0) == 10.0
        assert radial_width(SPEC, 1) == 15.0
        assert radial_width(SPEC, 2) == 22.5

    def test_phi_must_divide_circle(self):
        with pytest.raises(InvalidParameterError):
            WindowSpec(phi_size=7.0)   # 360/7 is not an integer

    def test_positive_sizes_required(self):
        with pytest.raises(InvalidParameterError):
            WindowSpec(radial_size=0.0)
        with pytest.raises(InvalidParameterError):
            WindowSpec(theta_size=-1.0)
        with pytest.raises(InvalidParameterError):
            WindowSpec(cubic_size=0.0)


class TestSphericalIndex:
    def test_hand_case_equator_point(self):
        # point on the +x axis: r=20, theta=90 (acos(0) is exactly 90 deg),
        # phi=0  ->  bins (2, 50, 0) at level 0
        idx = spherical_index(np.array([20.0, 0.0, 0.0]), SPEC, level=0)
        assert idx.kind == "spherical"
        assert idx.level == 0
        assert idx.bins == (2, 50, 0)

    def test_level_rescales_radius_only(self):
        p = np.array([20.0, 0.0, 0.0])
        level0 = spherical_index(p, SPEC, level=0)
        level1 = spherical_index(p, SPEC, level=1)
        # 20 / 15 -> bin 1; angles unchanged
        assert level1.bins == (1, level0.bins[1], level0.bins[2])

    def test_origin_is_first_window(self):
        assert spherical_index(np.zeros(3), SPEC, level=0).bins == (0, 0, 0)

    def test_poles(self):
        up = spherical_index(np.array([0.0, 0.0, 5.0]), SPEC, level=0)
        down = spherical_index(np.array([0.0, 0.0, -5.0]), SPEC, level=0)
        assert up.bins[1] == 0                      # theta = 0
        assert down.bins[1] == SPEC.theta_bins - 1  # theta = 180 clamps into last bin
        assert up.bins[0] == down.bins[0] == 0

    def test_azimuth_wraps(self):
        # just below the +x axis from the -y side: phi close to 360
        p = np.array([10.0, -1e-9, 0.0])
        idx = spherical_index(p, SPEC, level=0)
        assert idx.bins[2] == SPEC.phi_bins - 1

    def test_matches_oracle_random(self, rng):
        # [DERIVED: independent trig oracle]
        for spec in (SPEC, WindowSpec(radial_size=0.25, theta_size=30.0,
                                      phi_size=45.0, cubic_size=0.25)):
            pts = rng.normal(scale=20.0, size=(500, 3))
            for level in (0, 1, 2):
                for p in pts:
                    got = spherical_index(p, spec, level)
                    want = brute_spherical_index(p, spec.radial_size,
                                                 spec.theta_size, spec.phi_size,
                                                 level, spec.expansion)
                    assert got.bins == want, (p, level)


class TestCubicIndex:
    def test_hand_case(self):
        spec = WindowSpec(cubic_size=0.2)
        idx = cubic_index(np.array([0.39, 0.01, -0.01]), spec, level=1)
        # floor semantics: 0.39/0.2 -> 1, 0.01/0.2 -> 0, -0.01/0.2 -> -1
        assert idx.level == 1
        assert idx.bins == (1, 0, -1)

    def test_level_tags_key_but_not_size(self):
        p = np.array([5.0, -3.0, 2.0])
        a = cubic_index(p, SPEC, level=0)
        b = cubic_index(p, SPEC, level=2)
        assert a.bins == b.bins   # same spatial cell
        assert a.level == 0 and b.level == 2
        assert a != b             # distinct keys per level

    def test_negative_floor(self):
        idx = cubic_index(np.array([-0.1, 0.0, 0.0]), SPEC, level=0)
        assert idx.bins == (-1, 0, 0)


class TestPartition:
    def test_non_overlapping_cover(self, rng):
        pts = rng.normal(scale=15.0, size=(300, 3))
        for kind in ("spherical", "cubic"):
            groups = partition(pts, SPEC, level=0, kind=kind)
            all_rows = np.concatenate(list(groups.values()))
            assert sorted(all_rows.tolist()) == list(range(300))

    def test_first_occurrence_order(self):
        pts = np.array([[25.0, 0.0, 0.0],   # window A
                        [0.0, 25.0, 0.0],   # window B
                        [25.1, 0.0, 0.0]])  # window A again
        groups = partition(pts, SPEC, level=0, kind="spherical")
        keys = list(groups)
        assert len(keys) == 2
        np.testing.assert_array_equal(groups[keys[0]], [0, 2])
        np.testing.assert_array_equal(groups[keys[1]], [1])

    def test_matches_oracle(self, rng):
        pts = rng.normal(scale=25.0, size=(250, 3))
        got = partition(pts, SPEC, level=1, kind="spherical")
        want = brute_partition(pts, lambda p: brute_spherical_index(
            p, SPEC.radial_size, SPEC.theta_size, SPEC.phi_size, 1, SPEC.expansion))
        assert {k.bins for k in got} == set(want)
        for key in got:
            np.testing.assert_array_equal(got[key], want[key.bins])

    def test_cubic_groups_level_independent_membership(self, rng):
        pts = rng.normal(scale=10.0, size=(100, 3))
        g0 = partition(pts, SPEC, level=0, kind="cubic")
        g1 = partition(pts, SPEC, level=1, kind="cubic")
        # same spatial grouping, keys differ only in the level tag
        assert {k.bins for k in g0} == {k.bins for k in g1}
        for key in g0:
            np.testing.assert_array_equal(
                g0[key], g1[WindowIndex("cubic", 1, key.bins)])

    def test_rejects_bad_kind(self, rng):
        with pytest.raises(InvalidParameterError):
            partition(rng.normal(size=(5, 3)), SPEC, level=0, kind="toroidal")

    def test_rejects_bad_shape(self):
        with pytest.raises(ShapeError):
            partition(np.zeros((4, 2)), SPEC, level=0, kind="cubic")

    def test_empty_input(self):
        groups = partition(np.zeros((0, 3)), SPEC, level=0, kind="spherical")
        assert groups == {}


class TestScaleEquivalence:
    def test_uniform_scale_matches_scaled_spec(self, rng):
        # normalized coordinates with a scaled-down spec index identically
        pts = rng.normal(scale=30.0, size=(200, 3))
        small = WindowSpec(radial_size=0.1, theta_size=1.8, phi_size=1.8,
                           cubic_size=0.1)
        for p in pts:
            a = spherical_index(p, SPEC, level=0)
            b = spherical_index(p / 100.0, small, level=0)
            assert a.bins == b.bins
