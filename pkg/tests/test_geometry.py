"""Region predicates: closed-set semantics, batch/scalar parity, configs."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from darnwalk.geometry import (
    GEOM_TOL,
    AxisBox,
    Ball,
    GeometryError,
    HalfspacePolytope,
    Polygon2D,
    extent,
    region_from_config,
)

coord = st.floats(-4.0, 4.0, allow_nan=False, allow_infinity=False, width=32)
point2 = st.tuples(coord, coord)


def unit_square_regions():
    """The same closed unit square [-0.5, 0.5]^2 in four representations."""
    box = AxisBox(lo=(-0.5, -0.5), hi=(0.5, 0.5))
    poly = HalfspacePolytope(
        normals=((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)),
        offsets=(0.5, 0.5, 0.5, 0.5),
    )
    gon = Polygon2D(vertices=((-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)))
    return box, poly, gon


# -- closed-set semantics ------------------------------------------------------


def test_ball_boundary_is_inside():
    b = Ball(center=(0.0, 0.0), radius=0.25)
    assert b.contains((0.25, 0.0))
    assert b.contains((0.0, -0.25))
    assert not b.contains((0.25 + 1e-9, 0.0))
    assert b.distance((0.25, 0.0)) == 0.0
    assert b.distance((1.25, 0.0)) == pytest.approx(1.0, abs=1e-15)


def test_ball_tangent_segment_intersects():
    b = Ball(center=(0.0, 0.0), radius=0.25)
    # horizontal line touching the top of the ball
    assert b.segment_intersects((-1.0, 0.25), (1.0, 0.25))
    assert not b.segment_intersects((-1.0, 0.25 + 1e-8), (1.0, 0.25 + 1e-8))
    # both endpoints outside, chord through the middle
    assert b.segment_intersects((-1.0, 0.1), (1.0, 0.1))


def test_box_faces_are_inside():
    box = AxisBox(lo=(-0.5, -0.5), hi=(0.5, 0.5))
    assert box.contains((0.5, 0.5))
    assert box.contains((-0.5, 0.3))
    assert not box.contains((0.5 + 1e-9, 0.0))
    assert box.segment_intersects((-1.0, 0.5), (1.0, 0.5))  # runs along the face
    assert not box.segment_intersects((-1.0, 0.5 + 1e-8), (1.0, 0.5 + 1e-8))


def test_segment_touching_single_corner_intersects():
    box = AxisBox(lo=(-0.5, -0.5), hi=(0.5, 0.5))
    assert box.segment_intersects((0.0, 1.0), (1.0, 0.0))  # through (0.5, 0.5)
    assert not box.segment_intersects((0.0, 1.0 + 1e-7), (1.0 + 1e-7, 0.0))


# -- representation agreement --------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(point2)
def test_square_representations_agree_on_contains(p):
    box, poly, gon = unit_square_regions()
    want = box.contains(p)
    assert poly.contains(p) == want
    assert gon.contains(p) == want


@settings(max_examples=300, deadline=None)
@given(point2, point2)
def test_square_representations_agree_on_segments(p, q):
    box, poly, gon = unit_square_regions()
    want = box.segment_intersects(p, q)
    assert poly.segment_intersects(p, q) == want
    assert gon.segment_intersects(p, q) == want


@settings(max_examples=200, deadline=None)
@given(point2)
def test_square_representations_agree_on_distance(p):
    box, poly, gon = unit_square_regions()
    want = box.distance(p)
    assert poly.distance(p) == pytest.approx(want, abs=1e-9)
    assert gon.distance(p) == pytest.approx(want, abs=1e-9)


def test_square_bounding_boxes_agree():
    box, poly, gon = unit_square_regions()
    for r in (box, poly, gon):
        lo, hi = r.bounding_box()
        assert np.allclose(lo, [-0.5, -0.5], atol=1e-9)
        assert np.allclose(hi, [0.5, 0.5], atol=1e-9)


# -- generic properties, all shapes --------------------------------------------


def all_regions():
    box, poly, gon = unit_square_regions()
    return [
        Ball(center=(0.1, -0.2), radius=0.35),
        box,
        poly,
        gon,
        Ball(center=(0.0, 0.0, 0.0), radius=0.25),
    ]


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_contained_endpoint_forces_intersection(data):
    region = data.draw(st.sampled_from(all_regions()))
    pt = st.tuples(*[coord] * region.dim)
    p = data.draw(pt)
    q = data.draw(pt)
    if region.contains(p) or region.contains(q):
        assert region.segment_intersects(p, q)
        assert region.segment_intersects(q, p)


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_degenerate_segment_equals_contains(data):
    region = data.draw(st.sampled_from(all_regions()))
    p = data.draw(st.tuples(*[coord] * region.dim))
    assert region.segment_intersects(p, p) == region.contains(p)


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_distance_is_lipschitz(data):
    region = data.draw(st.sampled_from(all_regions()))
    pt = st.tuples(*[coord] * region.dim)
    p = np.array(data.draw(pt))
    q = np.array(data.draw(pt))
    dp, dq = region.distance(p), region.distance(q)
    assert abs(dp - dq) <= np.linalg.norm(p - q) + 1e-9


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_contains_iff_distance_tiny(data):
    region = data.draw(st.sampled_from(all_regions()))
    p = data.draw(st.tuples(*[coord] * region.dim))
    if region.contains(p):
        assert region.distance(p) <= 10 * GEOM_TOL
    else:
        assert region.distance(p) > 0.0


def test_batch_matches_scalar_bitwise(rng):
    for region in all_regions():
        d = region.dim
        pts = rng.uniform(-1.0, 1.0, size=(400, d))
        # mix in exact boundary-grade dyadic points
        pts[::7] = np.round(pts[::7] * 8) / 8
        P, Q = pts[:200], pts[200:]
        cm = region.contains_many(pts)
        dm = region.distance_many(pts)
        sm = region.segments_intersect_many(P, Q)
        for i, p in enumerate(pts):
            assert cm[i] == region.contains(p)
            assert dm[i] == region.distance(p)
        for i, (p, q) in enumerate(zip(P, Q)):
            assert sm[i] == region.segment_intersects(p, q)


# -- config round trips and validation ------------------------------------------


def test_config_roundtrip_preserves_behaviour(rng):
    for region in all_regions():
        back = region_from_config(region.to_config())
        assert back.to_config() == region.to_config()
        pts = rng.uniform(-1.0, 1.0, size=(50, region.dim))
        assert np.array_equal(back.contains_many(pts), region.contains_many(pts))
        assert np.array_equal(back.distance_many(pts), region.distance_many(pts))


def test_region_from_config_none_is_debug_mode():
    assert region_from_config(None) is None


@pytest.mark.parametrize(
    "cfg",
    [
        {"center": [0, 0], "radius": 1},  # no shape
        {"shape": "blob"},
        {"shape": "ball", "center": [0, 0]},  # missing radius
        {"shape": "axis_box", "lo": [0, 0]},
        "ball",
        42,
    ],
)
def test_region_from_config_rejects_bad_input(cfg):
    with pytest.raises(GeometryError):
        region_from_config(cfg)


@pytest.mark.parametrize(
    "make",
    [
        lambda: Ball(center=(0.0,), radius=1.0),
        lambda: Ball(center=(0.0, 0.0), radius=0.0),
        lambda: Ball(center=(0.0, 0.0), radius=-1.0),
        lambda: AxisBox(lo=(0.0, 0.0), hi=(1.0,)),
        lambda: AxisBox(lo=(0.0, 0.0), hi=(0.0, 1.0)),
        lambda: AxisBox(lo=(1.0, 0.0), hi=(0.0, 1.0)),
        lambda: HalfspacePolytope(normals=((1.0, 0.0),), offsets=(1.0,)),  # unbounded
        lambda: HalfspacePolytope(normals=((0.0, 0.0),), offsets=(1.0,)),
        lambda: Polygon2D(vertices=((0.0, 0.0), (1.0, 0.0))),
        lambda: Polygon2D(vertices=((0.0, 0.0), (1.0, 0.0), (2.0, 0.0))),  # zero area
        lambda: Polygon2D(  # bowtie
            vertices=((0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0))
        ),
    ],
)
def test_invalid_regions_raise(make):
    with pytest.raises(GeometryError):
        make()


def test_polytope_empty_raises():
    with pytest.raises(GeometryError):
        HalfspacePolytope(normals=((1.0, 0.0), (-1.0, 0.0)), offsets=(-1.0, -1.0))


def test_extent_covers_region_and_start():
    ball = Ball(center=(0.0, 0.0), radius=0.25)
    assert extent(ball, (0.5, 0.0)).k0 == 1
    assert extent(ball, (2.5, 0.0)).k0 == 3
    assert extent(None, (0.0, 0.0)).k0 == 1


def test_polytope_distance_matches_ball_projection():
    # a diamond |x| + |y| <= 1: distance from (2, 0) is 1
    diamond = HalfspacePolytope(
        normals=((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)),
        offsets=(1.0, 1.0, 1.0, 1.0),
    )
    assert diamond.distance((2.0, 0.0)) == pytest.approx(1.0, abs=1e-12)
    assert diamond.distance((1.0, 1.0)) == pytest.approx(math.sqrt(2) / 2, abs=1e-12)
    assert diamond.contains((0.5, 0.5))
    assert not diamond.contains((0.51, 0.5))
