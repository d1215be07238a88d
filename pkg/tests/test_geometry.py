import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bootplan import geometry
from bootplan.model import ObjectState, Pose

import oracles


def rect(x=0.0, y=0.0, yaw=0.0, l=0.1, w=0.06):
    return ObjectState("r", "r", Pose(x, y, 0.01, yaw), l, w, 0.02)


coords = st.floats(min_value=-0.3, max_value=0.3)
yaws = st.floats(min_value=-math.pi, max_value=math.pi, exclude_max=True)
sizes = st.floats(min_value=0.01, max_value=0.2)


def test_local_frame_of_rotated_rect():
    r = rect(0.1, 0.2, math.pi / 2)
    lx, ly = geometry.to_local(0.1, 0.3, r)
    assert (lx, ly) == pytest.approx((0.1, 0.0), abs=1e-12)


def test_distance_outside_corner():
    r = rect(l=0.1, w=0.06)
    assert geometry.distance_to_footprint(0.08, 0.07, r) == pytest.approx(math.hypot(0.03, 0.04))
    assert geometry.distance_to_footprint(0.0, 0.0, r) == 0.0


def test_corners_counter_clockwise():
    cs = geometry.corners(rect(yaw=0.3))
    area = 0.5 * sum(x1 * y2 - x2 * y1 for (x1, y1), (x2, y2) in zip(cs, cs[1:] + cs[:1]))
    assert area == pytest.approx(0.1 * 0.06)


def test_overlap_half_shift():
    a, b = rect(l=0.1, w=0.1), rect(x=0.05, l=0.1, w=0.1)
    assert geometry.overlap_area(a, b) == pytest.approx(0.005)
    assert geometry.overlap_fraction(a, b) == pytest.approx(0.5)


def test_overlap_disjoint_and_contained():
    assert geometry.overlap_area(rect(), rect(x=0.5)) == 0.0
    small = rect(l=0.02, w=0.02)
    assert geometry.overlap_fraction(small, rect()) == pytest.approx(1.0)


def test_grasp_extent_rotation():
    o = rect(l=0.1, w=0.04)
    assert geometry.grasp_extent(o, 0.0) == pytest.approx(0.04)
    assert geometry.grasp_extent(o, math.pi / 2) == pytest.approx(0.1)


@given(coords, coords, yaws, sizes, sizes, coords, coords)
def test_distance_matches_reference(x, y, yaw, l, w, px, py):
    r = rect(x, y, yaw, l, w)
    ref = max(oracles.signed_distance(px, py, r), 0.0)
    assert geometry.distance_to_footprint(px, py, r) == pytest.approx(ref, abs=1e-12)


@given(coords, coords, yaws, sizes, sizes, coords, coords, yaws, sizes, sizes)
def test_overlap_matches_area_sampling(x1, y1, a1, l1, w1, x2, y2, a2, l2, w2):
    a, b = rect(x1, y1, a1, l1, w1), rect(x2, y2, a2, l2, w2)
    rng = np.random.default_rng(0)
    ref = oracles.mc_overlap_of_smaller(rng, a, b)
    # sampling error of a 10^4-point estimate, relative to the smaller footprint
    scale = a.length * a.width / min(a.length * a.width, b.length * b.width)
    assert geometry.overlap_fraction(a, b) == pytest.approx(ref, abs=0.03 * scale + 1e-9)


@given(coords, coords, yaws, sizes, sizes, coords, coords, yaws, sizes, sizes)
def test_overlap_symmetric(x1, y1, a1, l1, w1, x2, y2, a2, l2, w2):
    a, b = rect(x1, y1, a1, l1, w1), rect(x2, y2, a2, l2, w2)
    assert geometry.overlap_area(a, b) == pytest.approx(geometry.overlap_area(b, a), abs=1e-12)
