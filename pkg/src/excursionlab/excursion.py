"""Polyconvex decomposition of excursion sets, clusters and the dynamic grid."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .geometry import EPS, ConvexBody
from .process import MarkDistribution, Sample, as_sample, kernel_max

HEIGHT_TOL = 1e-12
COMBO_CAP = 10**6
N_MAX = 14
GRID_MAX_DEPTH = 24
GRID_MAX_CELLS = 2 * 10**5


class ExactEngineOverflow(RuntimeError):
    """The exact engine gave up; evaluate the affected cluster on a raster."""

    def __init__(self, reason: str, cluster: "Cluster | None" = None):
        super().__init__(reason)
        self.reason = reason
        self.cluster = cluster


class GridDepthError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cluster:
    point_indices: tuple[int, ...]
    hull: ConvexBody

    def __len__(self) -> int:
        return len(self.point_indices)


@dataclass(frozen=True)
class ExcursionRegion:
    pieces: tuple[tuple[tuple[int, ...], ConvexBody], ...]
    window: ConvexBody
    u: float

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def bodies(self) -> list[ConvexBody]:
        return [b for _, b in self.pieces]

    def contains(self, y, eps: float = EPS) -> bool:
        return any(geo.contains(b, y, eps) for _, b in self.pieces)

    def to_json(self) -> dict:
        return {"u": self.u, "window": self.window.to_json(),
                "pieces": [{"index_set": list(i), "vertices": b.to_json()} for i, b in self.pieces]}

    @classmethod
    def from_json(cls, data: dict) -> "ExcursionRegion":
        pieces = tuple((tuple(int(i) for i in p["index_set"]), ConvexBody.from_json(p["vertices"]))
                       for p in data["pieces"])
        return cls(pieces, ConvexBody.from_json(data["window"]), float(data["u"]))


@dataclass(frozen=True)
class DynamicGrid:
    cells: tuple[tuple[int, tuple[int, int], int], ...]
    L: int
    parents: dict = field(default_factory=dict, compare=False, repr=False)
    # cells at max depth still above L; they shrink onto boundary crossings
    unresolved: tuple[tuple[int, tuple[int, int], int], ...] = ()

    def residual_area(self) -> float:
        return math.fsum(4.0 ** -level for level, _, _ in self.unresolved)

    def cell_box(self, level: int, z: tuple[int, int]) -> ConvexBody:
        h = 2.0 ** -level
        return ConvexBody.box(z[0] * h, z[1] * h, (z[0] + 1) * h, (z[1] + 1) * h)


def _translated_supports(s: Sample, marks: MarkDistribution) -> list[ConvexBody]:
    return s.supports(marks)


# -- clusters -----------------------------------------------------------------

def clusters(points, marks: MarkDistribution, window: ConvexBody) -> list[Cluster]:
    """Connected components of the overlap graph of supports inside ``window``."""
    s = as_sample(points)
    clipped = [geo.clip(k, window) for k in _translated_supports(s, marks)]
    alive = [i for i, k in enumerate(clipped) if not k.is_empty]
    parent = {i: i for i in alive}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    boxes = {i: clipped[i].bbox() for i in alive}
    for i, j in itertools.combinations(alive, 2):
        bi, bj = boxes[i], boxes[j]
        if bi[0] > bj[2] + EPS or bj[0] > bi[2] + EPS or bi[1] > bj[3] + EPS or bj[1] > bi[3] + EPS:
            continue
        ri, rj = find(i), find(j)
        if ri != rj and geo.intersects(clipped[i], clipped[j]):
            parent[ri] = rj
    groups: dict[int, list[int]] = {}
    for i in alive:
        groups.setdefault(find(i), []).append(i)
    out = []
    for members in sorted(groups.values()):
        hull = geo.convex_hull(v for i in members for v in clipped[i].vertices)
        out.append(Cluster(tuple(members), hull))
    return out


# -- superlevel pieces --------------------------------------------------------

def _translated_pieces(s: Sample, marks: MarkDistribution, j: int) -> list[tuple[float, float, float]]:
    """Affine pieces of point ``j`` in world coordinates."""
    (x, y), m = s[j]
    kernel = marks.kernel(m)
    if not kernel.is_exact:
        raise ValueError("the exact engine needs piecewise-linear kernels")
    return [(p.a, p.b, p.c - p.a * x - p.b * y) for p in kernel.pieces]


def _combo_halfplane(combo, u: float):
    """``{sum of chosen pieces >= u}`` as a HalfPlane, or True/False when constant."""
    a = math.fsum(p[0] for p in combo)
    b = math.fsum(p[1] for p in combo)
    c = math.fsum(p[2] for p in combo)
    if math.hypot(a, b) < 1e-14:
        return c >= u - HEIGHT_TOL * max(1.0, abs(u))
    return geo.HalfPlane(-a, -b, c - u)


def _field_min_combo(piece_lists, y):
    val, combo = 0.0, []
    for pl in piece_lists:
        best = min(pl, key=lambda p: p[0] * y[0] + p[1] * y[1] + p[2])
        val += best[0] * y[0] + best[1] * y[1] + best[2]
        combo.append(best)
    return val, combo


def build_XI(points, marks: MarkDistribution, I, u: float, window: ConvexBody,
             combo_cap: int = COMBO_CAP, method: str = "product") -> ConvexBody:
    """The closed superlevel piece ``X_I`` inside ``window``.

    ``method="product"`` clips by the half-plane of every piece combination.
    ``method="cutting"`` adds only combinations active at a violated vertex;
    both return the same set, and ``combo_cap`` bounds the combinations used.
    """
    I = tuple(I)
    if not I:
        raise ValueError("index set must be nonempty")
    s = as_sample(points)
    region = window
    for j in I:
        region = geo.clip(region, geo.translate(marks.kernel(s.marks[j]).support, s.positions[j]))
        if region.is_empty:
            return geo.EMPTY
    piece_lists = [_translated_pieces(s, marks, j) for j in I]
    if method == "product":
        n_combos = math.prod(len(pl) for pl in piece_lists)
        if n_combos > combo_cap:
            raise ExactEngineOverflow(f"{n_combos} piece combinations exceed cap {combo_cap}")
        for combo in itertools.product(*piece_lists):
            hp = _combo_halfplane(combo, u)
            if hp is True:
                continue
            if hp is False:
                return geo.EMPTY
            region = geo.clip_halfplane(region, hp)
            if region.is_empty:
                return geo.EMPTY
        return region
    if method != "cutting":
        raise ValueError(f"unknown method {method!r}")
    tol = HEIGHT_TOL * max(1.0, abs(u))
    used = 0
    while True:
        worst, worst_combo = EPS, None
        for v in region.vertices:
            val, combo = _field_min_combo(piece_lists, v)
            if val < u - tol:
                hp = _combo_halfplane(combo, u)
                if hp is False:
                    return geo.EMPTY
                if hp is True:
                    continue
                dist = hp.signed_distance(v)
                if dist > worst:
                    worst, worst_combo = dist, hp
        if worst_combo is None:
            return region
        used += 1
        if used > combo_cap:
            raise ExactEngineOverflow(f"more than {combo_cap} cutting planes")
        region = geo.clip_halfplane(region, worst_combo)
        if region.is_empty:
            return geo.EMPTY


def decompose(points, marks: MarkDistribution, u: float, window: ConvexBody, n_max: int = N_MAX,
              combo_cap: int = COMBO_CAP, method: str = "cutting", tight_bound: bool = True,
              drop_redundant: bool = False) -> ExcursionRegion:
    """All nonempty pieces X_I, enumerated per cluster.

    Subsets are grown depth-first.  A branch is cut when the common support
    inside the window is empty, or when even adding every remaining point at
    its maximal height cannot reach ``u``.  The cheap bound uses each kernel's
    global maximum; the tight one its maximum over the current common support.
    With ``drop_redundant`` supersets of an I whose constraint is inactive on
    the whole common support are skipped (they are covered by X_I).
    """
    if not u > 0:
        raise ValueError("threshold must be positive")
    s = as_sample(points)
    pieces: list[tuple[tuple[int, ...], ConvexBody]] = []
    tol = HEIGHT_TOL * max(1.0, abs(u))
    sup = _translated_supports(s, marks)
    for cl in clusters(s, marks, window):
        if len(cl) > n_max:
            raise ExactEngineOverflow(f"cluster of {len(cl)} points exceeds n_max={n_max}", cl)
        idx = list(cl.point_indices)
        hm = [marks.kernel(s.marks[j]).max_height for j in idx]
        suffix = [0.0] * (len(idx) + 1)
        for k in range(len(idx) - 1, -1, -1):
            suffix[k] = suffix[k + 1] + hm[k]

        def grow(I: tuple[int, ...], S: ConvexBody, h: float, start: int):
            for k in range(start, len(idx)):
                if h + suffix[k] < u - tol:
                    return
                j = idx[k]
                S2 = geo.clip(S, sup[j])
                if S2.is_empty:
                    continue
                J = I + (j,)
                h2 = h + hm[k]
                if tight_bound and h2 + suffix[k + 1] >= u - tol:
                    hi = _tight_height(s, marks, J, idx[k + 1:], S2)
                    if hi < u - tol:
                        continue
                full = False
                if h2 >= u - tol:
                    try:
                        X = build_XI(s, marks, J, u, S2, combo_cap=combo_cap, method=method)
                    except ExactEngineOverflow as exc:
                        raise ExactEngineOverflow(exc.reason, cl) from exc
                    if not X.is_empty:
                        pieces.append((J, X))
                        full = X == S2
                if drop_redundant and full:
                    continue
                grow(J, S2, h2, k + 1)

        grow((), window, 0.0, 0)
    return ExcursionRegion(tuple(pieces), window, float(u))


def _tight_height(s: Sample, marks: MarkDistribution, J, rest, S: ConvexBody) -> float:
    """Upper bound on the field of J plus any of ``rest`` over ``S``."""
    total = 0.0
    for j in tuple(J) + tuple(rest):
        local = geo.translate(S, (-s.positions[j][0], -s.positions[j][1]))
        m = kernel_max(marks.kernel(s.marks[j]), local)
        if m is None:
            if j in J:
                return -math.inf
            continue
        total += m
    return total


# -- counts -------------------------------------------------------------------

def count_N_upper(region: ExcursionRegion) -> int:
    return len(region.pieces)


def count_components(region: ExcursionRegion) -> int:
    bodies = region.bodies
    parent = list(range(len(bodies)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in itertools.combinations(range(len(bodies)), 2):
        ri, rj = find(i), find(j)
        if ri != rj and geo.intersects(bodies[i], bodies[j]):
            parent[ri] = rj
    return len({find(i) for i in range(len(bodies))})


# -- dynamic grid -------------------------------------------------------------

def star_count(cell: ConvexBody, supports: list[ConvexBody]) -> int:
    """Number of supports meeting ``cell`` without covering it."""
    n = 0
    cx0, cy0, cx1, cy1 = cell.bbox()
    for k in supports:
        x0, y0, x1, y1 = k.bbox()
        if x0 > cx1 + EPS or cx0 > x1 + EPS or y0 > cy1 + EPS or cy0 > y1 + EPS:
            continue
        if geo.intersects(k, cell) and not geo.contains_body(k, cell):
            n += 1
    return n


def dynamic_grid(body: ConvexBody, points, marks: MarkDistribution, L: int,
                 max_depth: int = GRID_MAX_DEPTH, max_cells: int = GRID_MAX_CELLS) -> DynamicGrid:
    """Adaptive dyadic cover of ``body``: split cells crossed by more than L support boundaries.

    Any cell holding a point where two boundaries cross keeps a star count of
    at least two, so for small L the descent is stopped at ``max_depth`` and
    those cells are returned as ``unresolved``.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    if body.is_empty:
        return DynamicGrid((), L)
    s = as_sample(points)
    sup = _translated_supports(s, marks)
    x0, y0, x1, y1 = body.bbox()

    def meets(box):
        if body.dim == 2:
            return geo.clip(box, body).dim == 2
        return geo.intersects(box, body)

    cells, unresolved = [], []
    parents = {}
    todo = []
    for zx in range(math.floor(x0) - 1, math.floor(x1) + 1):
        for zy in range(math.floor(y0) - 1, math.floor(y1) + 1):
            box = ConvexBody.box(zx, zy, zx + 1, zy + 1)
            if meets(box):
                todo.append((0, (zx, zy), box))
    visited = 0
    while todo:
        level, z, box = todo.pop()
        visited += 1
        if visited > max_cells:
            raise GridDepthError(f"dynamic grid exceeded {max_cells} cells")
        nstar = star_count(box, sup)
        if nstar <= L:
            cells.append((level, z, nstar))
            continue
        if level >= max_depth:
            unresolved.append((level, z, nstar))
            continue
        h = 2.0 ** -(level + 1)
        for ex, ey in ((0, 0), (1, 0), (0, 1), (1, 1)):
            cz = (2 * z[0] + ex, 2 * z[1] + ey)
            child = ConvexBody.box(cz[0] * h, cz[1] * h, (cz[0] + 1) * h, (cz[1] + 1) * h)
            if meets(child):
                parents[(level + 1, cz)] = (level, z, nstar)
                todo.append((level + 1, cz, child))
    cells.sort()
    unresolved.sort()
    return DynamicGrid(tuple(cells), L, parents, tuple(unresolved))


# -- helpers for tests and reports --------------------------------------------

def membership(region: ExcursionRegion, ys: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Vectorized union membership for query points ``ys`` (n, 2)."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    inside = np.zeros(len(ys), dtype=bool)
    for _, b in region.pieces:
        hit = np.ones(len(ys), dtype=bool)
        for hp in b.halfplanes():
            hit &= hp.a * ys[:, 0] + hp.b * ys[:, 1] - hp.c <= eps
        inside |= hit
    return inside


def boundary_distance(region: ExcursionRegion, ys: np.ndarray) -> np.ndarray:
    """Distance from each query point to the nearest piece boundary (lower bound via lines)."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    d = np.full(len(ys), np.inf)
    for _, b in region.pieces:
        for hp in b.halfplanes():
            d = np.minimum(d, np.abs(hp.a * ys[:, 0] + hp.b * ys[:, 1] - hp.c))
    return d
