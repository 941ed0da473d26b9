import math

import numpy as np
import pytest
import shapely
from hypothesis import given, strategies as st

from excursionlab import geometry as geo
from excursionlab.geometry import ConvexBody, GeometryError, HalfPlane

from conftest import random_polygon

UNIT = ConvexBody.box(0, 0, 1, 1)

# coordinates on a 1e-3 lattice: inputs stay far above the geometric tolerance
coord = st.integers(-5000, 5000).map(lambda i: i / 1000.0)
point_lists = st.lists(st.tuples(coord, coord), min_size=3, max_size=12)


def polygons():
    return point_lists.map(geo.convex_hull).filter(lambda k: k.dim == 2 and geo.area(k) > 1e-3)


def as_shapely(k: ConvexBody):
    return shapely.Polygon(k.vertices)


# -- construction -------------------------------------------------------------

def test_halfplane_normalized():
    hp = HalfPlane(3.0, 4.0, 10.0)
    assert math.hypot(hp.a, hp.b) == pytest.approx(1.0, abs=1e-12)
    assert hp.c == pytest.approx(2.0)
    with pytest.raises(GeometryError):
        HalfPlane(0.0, 0.0, 1.0)


def test_hull_drops_collinear_and_duplicates():
    k = geo.convex_hull([(0, 0), (0.5, 0), (1, 0), (1, 1), (0, 1), (0, 1), (1, 1 + 1e-12)])
    assert k.dim == 2 and len(k.vertices) == 4
    assert geo.is_convex_canonical(k)


def test_degenerate_dimensions():
    assert geo.convex_hull([(1, 1), (1, 1 + 1e-12)]).dim == 0
    seg = geo.convex_hull([(0, 0), (1, 1), (2, 2)])
    assert seg.dim == 1 and len(seg.vertices) == 2
    assert geo.EMPTY.is_empty and geo.EMPTY.dim is None


@given(polygons())
def test_hull_is_ccw_and_convex(k):
    assert geo.is_convex_canonical(k)
    v = k.vertices
    for i in range(len(v)):
        assert geo.orient2d(v[i - 1], v[i], v[(i + 1) % len(v)]) > 0


# -- clipping -----------------------------------------------------------------

def test_intersect_halfplanes_examples():
    assert geo.intersect_halfplanes([], UNIT) == UNIT
    half = geo.intersect_halfplanes([HalfPlane(1, 0, 0.5)], UNIT)
    assert geo.area(half) == pytest.approx(0.5)
    edge = geo.intersect_halfplanes([HalfPlane(1, 0, 0.0)], UNIT)
    assert edge.dim == 1
    assert geo.intrinsic_volumes(edge).as_tuple() == pytest.approx((1, 1, 0))


def test_clip_examples():
    assert geo.clip(UNIT, UNIT) == UNIT
    r = geo.clip(UNIT, ConvexBody.box(0.5, 0, 1.5, 1))
    assert geo.area(r) == pytest.approx(0.5) and r.bbox() == pytest.approx((0.5, 0, 1, 1))
    seg = geo.clip(UNIT, ConvexBody.box(1, 0, 2, 1))
    assert seg.dim == 1 and seg.bbox() == pytest.approx((1, 0, 1, 1))
    corner = geo.clip(UNIT, ConvexBody.box(1, 1, 2, 2))
    assert corner.dim == 0
    assert geo.clip(UNIT, ConvexBody.box(2, 2, 3, 3)).is_empty


@given(polygons(), polygons())
def test_clip_matches_shapely(a, b):
    ours = geo.area(geo.clip(a, b))
    ref = as_shapely(a).intersection(as_shapely(b)).area
    assert ours == pytest.approx(ref, abs=1e-8)


@given(polygons(), polygons())
def test_clip_commutative_idempotent_dimension_monotone(a, b):
    ab, ba = geo.clip(a, b), geo.clip(b, a)
    assert geo.intrinsic_volumes(ab).as_tuple() == pytest.approx(geo.intrinsic_volumes(ba).as_tuple(), abs=1e-9)
    assert geo.clip(a, a) == a
    if not ab.is_empty:
        assert ab.dim <= min(a.dim, b.dim)
        assert geo.intrinsic_volumes(geo.clip(ab, a)).as_tuple() == pytest.approx(
            geo.intrinsic_volumes(ab).as_tuple(), abs=1e-9)


def test_lower_dimensional_clip():
    seg = geo.convex_hull([(-1, 0.5), (2, 0.5)])
    r = geo.clip(seg, UNIT)
    assert r.dim == 1 and geo.intrinsic_volumes(r).v1 == pytest.approx(1.0)
    pt = geo.convex_hull([(0.3, 0.3)])
    assert geo.clip(pt, UNIT) == pt
    assert geo.clip(geo.convex_hull([(3, 3)]), UNIT).is_empty


def test_contains_and_contains_body():
    assert geo.contains(UNIT, (1.0, 0.5))
    assert not geo.contains(UNIT, (1.0 + 1e-6, 0.5))
    assert geo.contains_body(UNIT, ConvexBody.box(0.2, 0.2, 0.8, 0.8))
    assert not geo.contains_body(ConvexBody.box(0.2, 0.2, 0.8, 0.8), UNIT)


def test_orientation_exact_sign_near_degenerate():
    p, q = (0.1, 0.1), (0.3, 0.3)
    assert geo.orient2d(p, q, (0.7, 0.7)) == 0
    assert geo.orient2d((0, 0), (1, 1e-300), (2, 2e-300)) == 0
    assert geo.orient2d((0, 0), (1, 0), (0.5, 1e-200)) == 1


# -- intrinsic volumes ----------------------------------------------------------

def test_intrinsic_volume_examples():
    assert geo.intrinsic_volumes(UNIT).as_tuple() == pytest.approx((1, 2, 1))
    seg = geo.convex_hull([(0, 0), (3, 0)])
    assert geo.intrinsic_volumes(seg).as_tuple() == pytest.approx((1, 3, 0))
    tri = ConvexBody.from_vertices([(0, 0), (1, 0), (0, 1)])
    assert geo.intrinsic_volumes(tri).as_tuple() == pytest.approx((1, (2 + math.sqrt(2)) / 2, 0.5))
    assert geo.intrinsic_volumes(geo.EMPTY).as_tuple() == (0, 0, 0)
    assert geo.intrinsic_volumes(geo.convex_hull([(2, 3)])).as_tuple() == (1, 0, 0)


@given(polygons())
def test_area_perimeter_match_shapely(k):
    s = as_shapely(k)
    assert geo.area(k) == pytest.approx(s.area, rel=1e-12, abs=1e-12)
    assert geo.perimeter(k) == pytest.approx(s.length, rel=1e-12)


@given(polygons(), st.sampled_from([0.5, 2.0, 3.0]))
def test_homogeneity(k, r):
    iv, ivr = geo.intrinsic_volumes(k), geo.intrinsic_volumes(geo.scale(k, r))
    assert ivr.v0 == iv.v0
    assert ivr.v1 == pytest.approx(r * iv.v1, abs=1e-9 * max(1, r * iv.v1))
    assert ivr.v2 == pytest.approx(r * r * iv.v2, abs=1e-9 * max(1, r * r * iv.v2))


@given(polygons(), st.floats(0, 2 * math.pi), st.floats(-1, 1))
def test_monotonicity(k, theta, t):
    cx, cy = geo.centroid(k)
    hp = HalfPlane(math.cos(theta), math.sin(theta), math.cos(theta) * cx + math.sin(theta) * cy + t)
    sub = geo.clip_halfplane(k, hp)
    a, b = geo.intrinsic_volumes(sub), geo.intrinsic_volumes(k)
    assert a.v1 <= b.v1 + 1e-9 and a.v2 <= b.v2 + 1e-9


@given(polygons(), st.tuples(coord, coord))
def test_translation_invariance(k, t):
    a = geo.intrinsic_volumes(k).as_tuple()
    b = geo.intrinsic_volumes(geo.translate(k, t)).as_tuple()
    assert b == pytest.approx(a, rel=1e-12, abs=1e-9)


def test_scale_examples():
    assert geo.intrinsic_volumes(geo.scale(UNIT, 2)).as_tuple() == pytest.approx((1, 4, 4))
    with pytest.raises(GeometryError):
        geo.scale(UNIT, -1)


def test_circumradius_unit_square():
    assert geo.circumradius(UNIT) == pytest.approx(math.sqrt(2) / 2)


# -- Steiner formula --------------------------------------------------------------

def test_steiner_examples():
    assert geo.steiner_volume(UNIT, 0) == pytest.approx(1.0)
    assert geo.steiner_volume(UNIT, 1) == pytest.approx(1 + 4 + math.pi)
    assert geo.steiner_volume(geo.convex_hull([(0, 0)]), 1) == pytest.approx(math.pi)
    with pytest.raises(GeometryError):
        geo.steiner_volume(UNIT, -0.1)


@given(polygons(), st.floats(0.05, 3.0))
def test_steiner_matches_buffer(k, r):
    ref = as_shapely(k).buffer(r, quad_segs=256).area
    assert geo.steiner_volume(k, r) == pytest.approx(ref, rel=1e-4)


@given(polygons(), polygons())
def test_minkowski_sum_area_vs_mixed_formula(a, b):
    # V2(A+B) = V2(A) + 2 V(A,B) + V2(B) >= (sqrt V2(A) + sqrt V2(B))^2
    s = geo.minkowski_sum(a, b)
    bm = math.sqrt(geo.area(a)) + math.sqrt(geo.area(b))
    assert geo.area(s) >= bm * bm - 1e-9


def test_translative_formula_small(rng):
    a, b = random_polygon(rng), random_polygon(rng)
    box = geo.minkowski_sum(b, geo.reflect(a))
    x0, y0, x1, y1 = box.bbox()
    n = 20000
    xs = rng.uniform((x0, y0), (x1, y1), (n, 2))
    vals = np.array([geo.area(geo.clip(geo.translate(a, x), b)) for x in xs]) * (x1 - x0) * (y1 - y0)
    se = vals.std(ddof=1) / math.sqrt(n)
    assert abs(vals.mean() - geo.area(a) * geo.area(b)) < 4 * se


def test_json_roundtrip(rng):
    k = random_polygon(rng)
    assert ConvexBody.from_json(k.to_json()) == k
