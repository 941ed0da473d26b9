"""Exact planar convex geometry.

Convex bodies are stored as counterclockwise vertex tuples.  The number of
vertices encodes the dimension: 0 (empty), 1 (point), 2 (segment) or >= 3
(polygon with positive area).  Every operation returns canonical bodies, so
degenerate intersections are kept as segments or points instead of being
dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

EPS = 1e-9

Point = tuple[float, float]


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class HalfPlane:
    """The closed half-plane ``a*x + b*y <= c`` with ``(a, b)`` of unit length."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        norm = math.hypot(self.a, self.b)
        if not (norm > 0.0 and math.isfinite(norm) and math.isfinite(self.c)):
            raise GeometryError(f"degenerate half-plane ({self.a}, {self.b}, {self.c})")
        if abs(norm - 1.0) > 1e-12:
            object.__setattr__(self, "a", self.a / norm)
            object.__setattr__(self, "b", self.b / norm)
            object.__setattr__(self, "c", self.c / norm)

    def signed_distance(self, p: Point) -> float:
        return self.a * p[0] + self.b * p[1] - self.c


@dataclass(frozen=True)
class IntrinsicVolumes:
    v0: float = 0.0
    v1: float = 0.0
    v2: float = 0.0

    def __add__(self, other: "IntrinsicVolumes") -> "IntrinsicVolumes":
        return IntrinsicVolumes(self.v0 + other.v0, self.v1 + other.v1, self.v2 + other.v2)

    def __sub__(self, other: "IntrinsicVolumes") -> "IntrinsicVolumes":
        return IntrinsicVolumes(self.v0 - other.v0, self.v1 - other.v1, self.v2 - other.v2)

    def __mul__(self, k: float) -> "IntrinsicVolumes":
        return IntrinsicVolumes(k * self.v0, k * self.v1, k * self.v2)

    __rmul__ = __mul__

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.v0, self.v1, self.v2)


@dataclass(frozen=True)
class ConvexBody:
    vertices: tuple[Point, ...] = ()

    @property
    def dim(self) -> int | None:
        """0, 1 or 2; ``None`` for the empty body."""
        n = len(self.vertices)
        if n == 0:
            return None
        return min(n - 1, 2)

    @property
    def is_empty(self) -> bool:
        return not self.vertices

    def __bool__(self) -> bool:
        return bool(self.vertices)

    def __len__(self) -> int:
        return len(self.vertices)

    @classmethod
    def from_vertices(cls, pts: Iterable[Sequence[float]]) -> "ConvexBody":
        """Canonical body from vertices already in convex position (any order)."""
        return convex_hull(pts)

    @classmethod
    def box(cls, x0: float, y0: float, x1: float, y1: float) -> "ConvexBody":
        if x1 < x0 or y1 < y0:
            raise GeometryError("box with negative extent")
        return canonicalize([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    def halfplanes(self) -> list[HalfPlane]:
        return halfplanes_of(self)

    def bbox(self) -> tuple[float, float, float, float]:
        if not self.vertices:
            raise GeometryError("bbox of empty body")
        xs = [p[0] for p in self.vertices]
        ys = [p[1] for p in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def to_json(self) -> list[list[float]]:
        return [[x, y] for x, y in self.vertices]

    @classmethod
    def from_json(cls, data: Sequence[Sequence[float]]) -> "ConvexBody":
        stored = cls(tuple((float(x), float(y)) for x, y in data))
        # keep canonical vertex lists verbatim so round trips are exact
        if len(stored.vertices) >= 3 and is_convex_canonical(stored) and all(
                orient2d(stored.vertices[i - 1], stored.vertices[i], stored.vertices[(i + 1) % len(stored.vertices)]) > 0
                for i in range(len(stored.vertices))):
            return stored
        return convex_hull(data)


EMPTY = ConvexBody(())


# -- predicates ---------------------------------------------------------------

def orient2d(p: Point, q: Point, r: Point) -> int:
    """Sign of the turn p -> q -> r, exact for float input."""
    det = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    scale = (abs(q[0] - p[0]) + abs(q[1] - p[1])) * (abs(r[0] - p[0]) + abs(r[1] - p[1]))
    if abs(det) > 1e-12 * scale:
        return 1 if det > 0 else -1
    fp = [Fraction(v) for v in (*p, *q, *r)]
    exact = (fp[2] - fp[0]) * (fp[5] - fp[1]) - (fp[3] - fp[1]) * (fp[4] - fp[0])
    return (exact > 0) - (exact < 0)


def _dist2(p: Point, q: Point) -> float:
    return (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2


def _line_distance(p: Point, q: Point, r: Point) -> float:
    """Distance of r from the line through p and q (p != q)."""
    dx, dy = q[0] - p[0], q[1] - p[1]
    return abs(dx * (r[1] - p[1]) - dy * (r[0] - p[0])) / math.hypot(dx, dy)


# -- canonical form -----------------------------------------------------------

def canonicalize(pts: Sequence[Point], eps: float = EPS) -> ConvexBody:
    """Canonical body from a cyclic vertex list in convex position.

    Near-duplicate vertices are merged, bodies whose vertices lie within
    ``eps`` of a common line become segments, and collinear polygon vertices
    are removed.
    """
    pts = [(float(x), float(y)) for x, y in pts]
    eps2 = eps * eps
    out: list[Point] = []
    for p in pts:
        if not out or _dist2(out[-1], p) > eps2:
            out.append(p)
    while len(out) > 1 and _dist2(out[0], out[-1]) <= eps2:
        out.pop()
    n = len(out)
    if n <= 1:
        return ConvexBody(tuple(out))
    far = max(out, key=lambda p: _dist2(p, out[0]))
    other = max(out, key=lambda p: _dist2(p, far))
    if _dist2(far, other) <= eps2:
        return ConvexBody((out[0],))
    if n == 2 or all(_line_distance(far, other, p) <= eps for p in out):
        return ConvexBody(tuple(sorted((far, other))))
    changed = True
    while changed and len(out) > 3:
        changed = False
        for i in range(len(out)):
            prev, cur, nxt = out[i - 1], out[i], out[(i + 1) % len(out)]
            if _line_distance(prev, nxt, cur) <= eps:
                del out[i]
                changed = True
                break
    if _signed_area(out) < 0:
        out.reverse()
    return ConvexBody(tuple(out))


def _signed_area(pts: Sequence[Point]) -> float:
    s = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def convex_hull(points: Iterable[Sequence[float]], eps: float = EPS) -> ConvexBody:
    """Andrew's monotone chain with the exact orientation predicate."""
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if len(pts) <= 2:
        return canonicalize(pts, eps)
    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and orient2d(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and orient2d(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        return canonicalize([pts[0], pts[-1]], eps)
    return canonicalize(hull, eps)


def halfplanes_of(k: ConvexBody) -> list[HalfPlane]:
    """Half-planes whose intersection is ``k`` (4 for points and segments)."""
    v = k.vertices
    n = len(v)
    if n == 0:
        raise GeometryError("empty body has no half-plane description")
    if n == 1:
        x, y = v[0]
        return [HalfPlane(1.0, 0.0, x), HalfPlane(-1.0, 0.0, -x),
                HalfPlane(0.0, 1.0, y), HalfPlane(0.0, -1.0, -y)]
    if n == 2:
        (px, py), (qx, qy) = v
        length = math.hypot(qx - px, qy - py)
        dx, dy = (qx - px) / length, (qy - py) / length
        nx, ny = -dy, dx
        return [HalfPlane(nx, ny, nx * px + ny * py), HalfPlane(-nx, -ny, -(nx * px + ny * py)),
                HalfPlane(dx, dy, dx * qx + dy * qy), HalfPlane(-dx, -dy, -(dx * px + dy * py))]
    hps = []
    for i in range(n):
        (x0, y0), (x1, y1) = v[i], v[(i + 1) % n]
        a, b = y1 - y0, x0 - x1  # outward normal of a CCW edge
        hps.append(HalfPlane(a, b, a * x0 + b * y0))
    return hps


# -- clipping -----------------------------------------------------------------

def clip_halfplane(k: ConvexBody, hp: HalfPlane, eps: float = EPS) -> ConvexBody:
    """Intersection of ``k`` with one closed half-plane.

    Vertices within ``eps`` of the boundary count as inside; crossing points are
    only inserted where an edge leaves the ``eps`` band.
    """
    v = k.vertices
    n = len(v)
    if n == 0:
        return k
    s = [hp.a * p[0] + hp.b * p[1] - hp.c for p in v]
    if all(si <= eps for si in s):
        return k
    if all(si > eps for si in s):
        return EMPTY
    out: list[Point] = []
    for i in range(n):
        j = (i + 1) % n
        pi, pj, si, sj = v[i], v[j], s[i], s[j]
        if si <= eps:
            out.append(pi)
            if sj > eps and si < -eps:
                t = si / (si - sj)
                out.append((pi[0] + t * (pj[0] - pi[0]), pi[1] + t * (pj[1] - pi[1])))
        elif sj < -eps:
            t = si / (si - sj)
            out.append((pi[0] + t * (pj[0] - pi[0]), pi[1] + t * (pj[1] - pi[1])))
    return canonicalize(out, eps)


def intersect_halfplanes(hps: Iterable[HalfPlane], seed_region: ConvexBody) -> ConvexBody:
    if seed_region.is_empty:
        raise GeometryError("seed region must be nonempty")
    k = seed_region
    for hp in hps:
        k = clip_halfplane(k, hp)
        if k.is_empty:
            break
    return k


def clip(a: ConvexBody, b: ConvexBody) -> ConvexBody:
    """``a`` intersected with ``b``; the lower-dimensional operand is clipped."""
    if a.is_empty or b.is_empty:
        return EMPTY
    if a.dim > b.dim:
        a, b = b, a
    k = a
    for hp in halfplanes_of(b):
        k = clip_halfplane(k, hp)
        if k.is_empty:
            return EMPTY
    return k


def intersects(a: ConvexBody, b: ConvexBody) -> bool:
    return not clip(a, b).is_empty


def contains(k: ConvexBody, p: Sequence[float], eps: float = EPS) -> bool:
    if k.is_empty:
        return False
    pt = (float(p[0]), float(p[1]))
    return all(hp.signed_distance(pt) <= eps for hp in halfplanes_of(k))


def contains_body(outer: ConvexBody, inner: ConvexBody, eps: float = EPS) -> bool:
    """Whether every vertex of ``inner`` lies in ``outer`` (within ``eps``)."""
    if inner.is_empty:
        return True
    if outer.is_empty:
        return False
    hps = halfplanes_of(outer)
    return all(hp.signed_distance(p) <= eps for p in inner.vertices for hp in hps)


# -- measures -----------------------------------------------------------------

def area(k: ConvexBody) -> float:
    if len(k.vertices) < 3:
        return 0.0
    return abs(_signed_area(k.vertices))


def perimeter(k: ConvexBody) -> float:
    v = k.vertices
    n = len(v)
    if n < 2:
        return 0.0
    if n == 2:
        return 2.0 * math.dist(v[0], v[1])
    return math.fsum(math.dist(v[i], v[(i + 1) % n]) for i in range(n))


def intrinsic_volumes(k: ConvexBody) -> IntrinsicVolumes:
    n = len(k.vertices)
    if n == 0:
        return IntrinsicVolumes(0.0, 0.0, 0.0)
    if n == 1:
        return IntrinsicVolumes(1.0, 0.0, 0.0)
    if n == 2:
        return IntrinsicVolumes(1.0, math.dist(*k.vertices), 0.0)
    return IntrinsicVolumes(1.0, 0.5 * perimeter(k), area(k))


def steiner_volume(k: ConvexBody, r: float) -> float:
    """Area of the parallel body ``k + B(0, r)``."""
    if r < 0:
        raise GeometryError("negative parallel radius")
    if k.is_empty:
        raise GeometryError("parallel body of the empty set")
    v = k.vertices
    if len(v) == 1:
        return math.pi * r * r
    if len(v) == 2:
        return 2.0 * r * math.dist(v[0], v[1]) + math.pi * r * r
    # body, one r-wide strip per edge, one circular sector per vertex
    n = len(v)
    strips, sectors = [], []
    for i in range(n):
        p0, p1, p2 = v[i - 1], v[i], v[(i + 1) % n]
        strips.append(r * math.dist(p1, p2))
        t_in = math.atan2(p1[1] - p0[1], p1[0] - p0[0])
        t_out = math.atan2(p2[1] - p1[1], p2[0] - p1[0])
        turn = (t_out - t_in) % (2.0 * math.pi)
        sectors.append(0.5 * turn * r * r)
    return math.fsum([area(k)] + strips + sectors)


def centroid(k: ConvexBody) -> Point:
    v = k.vertices
    if not v:
        raise GeometryError("centroid of empty body")
    if len(v) < 3:
        return (sum(p[0] for p in v) / len(v), sum(p[1] for p in v) / len(v))
    a = _signed_area(v)
    cx = cy = 0.0
    n = len(v)
    for i in range(n):
        x0, y0 = v[i]
        x1, y1 = v[(i + 1) % n]
        w = x0 * y1 - x1 * y0
        cx += (x0 + x1) * w
        cy += (y0 + y1) * w
    return (cx / (6.0 * a), cy / (6.0 * a))


def circumradius(k: ConvexBody) -> float:
    """Largest vertex distance from the centroid (an upper bound on the true value)."""
    if k.is_empty:
        return 0.0
    c = centroid(k)
    return max(math.dist(c, p) for p in k.vertices)


def translate(k: ConvexBody, t: Sequence[float]) -> ConvexBody:
    tx, ty = float(t[0]), float(t[1])
    return ConvexBody(tuple((x + tx, y + ty) for x, y in k.vertices))


def scale(k: ConvexBody, factor: float) -> ConvexBody:
    """Homothety about the origin."""
    if factor < 0:
        raise GeometryError("negative scale factor")
    if factor == 0.0:
        return ConvexBody(((0.0, 0.0),)) if k.vertices else EMPTY
    return canonicalize([(factor * x, factor * y) for x, y in k.vertices])


def reflect(k: ConvexBody) -> ConvexBody:
    """Point reflection ``-k``."""
    return canonicalize([(-x, -y) for x, y in k.vertices])


def minkowski_sum(a: ConvexBody, b: ConvexBody) -> ConvexBody:
    if a.is_empty or b.is_empty:
        return EMPTY
    return convex_hull([(p[0] + q[0], p[1] + q[1]) for p in a.vertices for q in b.vertices])


def is_convex_canonical(k: ConvexBody) -> bool:
    """Hull-equality check: ``k`` coincides with the convex hull of its vertices."""
    if len(k.vertices) < 3:
        return True
    hull = convex_hull(k.vertices)
    return len(hull.vertices) == len(k.vertices) and set(hull.vertices) == set(k.vertices)
