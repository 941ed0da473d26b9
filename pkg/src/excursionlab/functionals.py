"""Geometric functionals on excursion sets: exact, tiled-exact and raster engines."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _engine as E
from . import geometry as geo
from .excursion import ExactEngineOverflow, ExcursionRegion, decompose
from .geometry import EPS, ConvexBody, IntrinsicVolumes
from .process import MarkDistribution, Sample, as_sample

NERVE_CAP = 10**7
RASTER_MAX_CELLS = 10**9
POLICIES = ("exact_only", "auto", "raster_only", "tiled")


class NerveOverflow(ExactEngineOverflow):
    pass


@dataclass(frozen=True)
class GeometricFunctional:
    """``phi = a0*V0 + a1*V1 + a2*V2``."""

    alpha: tuple[float, float, float]

    def __post_init__(self):
        a = tuple(float(x) for x in self.alpha)
        if len(a) != 3 or not all(math.isfinite(x) for x in a):
            raise ValueError("functional needs three finite coefficients")
        object.__setattr__(self, "alpha", a)

    def __call__(self, iv: IntrinsicVolumes) -> float:
        a0, a1, a2 = self.alpha
        return a0 * iv.v0 + a1 * iv.v1 + a2 * iv.v2

    @property
    def is_zero(self) -> bool:
        return all(a == 0.0 for a in self.alpha)

    def local_bound(self) -> float:
        """Bound on ``|phi(A)|`` for convex A inside a unit square."""
        a0, a1, a2 = self.alpha
        return abs(a0) + 2 * abs(a1) + abs(a2)


EULER = GeometricFunctional((1.0, 0.0, 0.0))
HALF_PERIMETER = GeometricFunctional((0.0, 1.0, 0.0))
AREA = GeometricFunctional((0.0, 0.0, 1.0))


@dataclass(frozen=True)
class RasterConfig:
    resolution: float = 1.0 / 128.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("raster resolution must be positive")


@dataclass(frozen=True)
class EvalResult:
    """Intrinsic volumes of an excursion set and which engines produced them."""

    ivols: IntrinsicVolumes
    engine_used: str
    n_clusters: int = 0


# -- exact inclusion-exclusion (reference path) -------------------------------

def ivols_exact(region: ExcursionRegion, nerve_cap: int = NERVE_CAP) -> IntrinsicVolumes:
    """Intrinsic volumes of the union of pieces over the nerve."""
    bodies = region.bodies
    boxes = [b.bbox() for b in bodies]
    acc = [[], [], []]
    count = 0

    def overlap(p, q):
        return not (p[0] > q[2] + EPS or q[0] > p[2] + EPS or p[1] > q[3] + EPS or q[1] > p[3] + EPS)

    stack = []
    for i, b in enumerate(bodies):
        stack.append((b, i, 1))
    while stack:
        body, last, size = stack.pop()
        count += 1
        if count > nerve_cap:
            raise NerveOverflow(f"nerve exceeds {nerve_cap} intersections")
        iv = geo.intrinsic_volumes(body)
        sign = 1.0 if size % 2 else -1.0
        acc[0].append(sign * iv.v0)
        acc[1].append(sign * iv.v1)
        acc[2].append(sign * iv.v2)
        bb = body.bbox()
        for j in range(last + 1, len(bodies)):
            if not overlap(bb, boxes[j]):
                continue
            c = geo.clip(body, bodies[j])
            if not c.is_empty:
                stack.append((c, j, size + 1))
    return IntrinsicVolumes(math.fsum(acc[0]), math.fsum(acc[1]), math.fsum(acc[2]))


def phi_exact(region: ExcursionRegion, f: GeometricFunctional, nerve_cap: int = NERVE_CAP) -> float:
    return f(ivols_exact(region, nerve_cap))


def _merge_intervals(ints: list[tuple[float, float]]) -> tuple[int, float]:
    if not ints:
        return 0, 0.0
    ints = sorted(ints)
    comps, length = 1, 0.0
    lo, hi = ints[0]
    for a, b in ints[1:]:
        if a <= hi + EPS:
            hi = max(hi, b)
        else:
            length += hi - lo
            comps += 1
            lo, hi = a, b
    return comps, length + (hi - lo)


def upper_edge_ivols(bodies: list[ConvexBody], cell: tuple[float, float, float, float]) -> IntrinsicVolumes:
    """Intrinsic volumes of the union of ``bodies`` on the top and right closed edges of ``cell``."""
    x0, y0, x1, y1 = cell
    v0, v1 = 0, 0.0
    ends = []
    for seg, axis, end in ((ConvexBody(((x0, y1), (x1, y1))), 0, x1),
                           (ConvexBody(((x1, y0), (x1, y1))), 1, y1)):
        ints = []
        for b in bodies:
            t = geo.clip(b, seg)
            if not t.is_empty:
                coords = [v[axis] for v in t.vertices]
                ints.append((min(coords), max(coords)))
        c, ln = _merge_intervals(ints)
        v0 += c
        v1 += ln
        ends.append(any(hi >= end - EPS for _, hi in ints))
    if all(ends):
        v0 -= 1
    return IntrinsicVolumes(float(v0), v1, 0.0)


# -- raster engine ------------------------------------------------------------

def raster_mask(points, marks: MarkDistribution, u: float, window: ConvexBody, cfg: RasterConfig,
                bounds: tuple[float, float, float, float] | None = None):
    """Occupancy of grid cells whose centers lie in the window with field >= u.

    Returns ``(mask, x0, y0)`` where ``mask[i, j]`` is the cell with lower-left
    corner ``(x0 + i*eps, y0 + j*eps)``.
    """
    s = as_sample(points)
    e = cfg.resolution
    ox, oy = cfg.origin
    wx0, wy0, wx1, wy1 = window.bbox() if bounds is None else bounds
    i0 = math.floor((wx0 - ox) / e)
    i1 = math.ceil((wx1 - ox) / e)
    j0 = math.floor((wy0 - oy) / e)
    j1 = math.ceil((wy1 - oy) / e)
    nx, ny = max(i1 - i0, 0), max(j1 - j0, 0)
    if nx * ny > RASTER_MAX_CELLS:
        raise ValueError(f"raster grid of {nx * ny} cells exceeds {RASTER_MAX_CELLS}")
    x0, y0 = ox + i0 * e, oy + j0 * e
    cx = x0 + (np.arange(nx) + 0.5) * e
    cy = y0 + (np.arange(ny) + 0.5) * e
    field = np.zeros((nx, ny))
    for (px, py), m in zip(s.positions, s.marks):
        kernel = marks.kernel(int(m))
        kx0, ky0, kx1, ky1 = kernel.support.bbox()
        a = np.searchsorted(cx, px + kx0 - EPS)
        b = np.searchsorted(cx, px + kx1 + EPS, side="right")
        c = np.searchsorted(cy, py + ky0 - EPS)
        d = np.searchsorted(cy, py + ky1 + EPS, side="right")
        if a >= b or c >= d:
            continue
        gx, gy = np.meshgrid(cx[a:b] - px, cy[c:d] - py, indexing="ij")
        vals = kernel.values(np.column_stack([gx.ravel(), gy.ravel()]))
        field[a:b, c:d] += vals.reshape(gx.shape)
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    inside = np.ones((nx, ny), dtype=bool)
    for hp in window.halfplanes():
        inside &= hp.a * gx + hp.b * gy - hp.c <= EPS
    tol = 1e-12 * max(1.0, abs(u))
    return inside & (field >= u - tol), x0, y0


def mask_ivols(mask: np.ndarray, e: float) -> IntrinsicVolumes:
    """Cubical Euler characteristic, half marching-squares length and cell area."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0 or not mask.any():
        return IntrinsicVolumes(0.0, 0.0, 0.0)
    p = np.pad(mask, 1)
    faces = int(p.sum())
    # grid vertices/edges touched by at least one occupied closed cell
    verts = int((p[:-1, :-1] | p[1:, :-1] | p[:-1, 1:] | p[1:, 1:]).sum())
    edges_x = int((p[:, :-1] | p[:, 1:]).sum())
    edges_y = int((p[:-1, :] | p[1:, :]).sum())
    chi = verts - (edges_x + edges_y) + faces
    a, b, c, d = p[:-1, :-1], p[1:, :-1], p[:-1, 1:], p[1:, 1:]
    cnt = a.astype(np.int8) + b + c + d
    diag = (cnt == 2) & (a == d)
    length = (np.count_nonzero((cnt == 1) | (cnt == 3)) * (math.sqrt(0.5) * e)
              + np.count_nonzero((cnt == 2) & ~diag) * e
              + np.count_nonzero(diag) * (math.sqrt(2.0) * e))
    return IntrinsicVolumes(float(chi), 0.5 * length, faces * e * e)


def ivols_raster(points, marks, u, window, cfg: RasterConfig = RasterConfig(), bounds=None) -> IntrinsicVolumes:
    mask, _, _ = raster_mask(points, marks, u, window, cfg, bounds)
    return mask_ivols(mask, cfg.resolution)


def phi_raster(points, marks: MarkDistribution, u: float, window: ConvexBody, cfg: RasterConfig,
               f: GeometricFunctional) -> float:
    return f(ivols_raster(points, marks, u, window, cfg))


# -- compiled engine wrappers -------------------------------------------------

@dataclass
class EngineOptions:
    n_max: int = 4
    leaf_max: int = 4
    h0: float = 1.0
    max_depth: int = 20
    drop_redundant: bool = True
    cut_cap: int = 4096
    subset_cap: int = 10**6
    nerve_cap: int = NERVE_CAP
    piece_cap: int = 4096


class FastEngine:
    """Compiled exact engine bound to one sample."""

    def __init__(self, points, marks: MarkDistribution, u: float, opts: EngineOptions | None = None):
        self.sample = as_sample(points)
        self.marks = marks
        self.u = float(u)
        self.opts = opts or EngineOptions()
        self.data = E.pack(self.sample.positions, self.sample.marks, marks)
        self.ws = E.Workspace(len(self.sample), self.opts.piece_cap, self.opts.max_depth)

    def labels(self, window: ConvexBody) -> np.ndarray:
        hp_off, hps, _, _, _, bbox = self.data
        wb, nw = E.poly_buffer(window.vertices)
        return E.label_clusters(wb, nw, len(self.sample), hp_off, hps, bbox, EPS,
                                self.ws.S[0], self.ws.tmp, self.ws.hpbuf)

    def exact(self, window: ConvexBody, members: np.ndarray) -> tuple[IntrinsicVolumes, int]:
        o = self.opts
        hp_off, hps, pc_off, pcs, hmax, _ = self.data
        wb, nw = E.poly_buffer(window.vertices)
        w = self.ws
        v0, v1, v2, st = E.eval_region(
            wb, nw, np.asarray(members, dtype=np.int64), len(members), hp_off, hps, pc_off, pcs, hmax,
            self.u, EPS, o.drop_redundant, o.cut_cap, o.subset_cap, o.nerve_cap, False, 0.0, 0.0, 0.0, 0.0,
            w.S, w.X, w.tmp, w.hpbuf, w.pieces, w.pn, w.pbox, w.pmask, w.nerve, w.ints, w.ibuf, w.fbuf)
        return IntrinsicVolumes(v0, v1, v2), st

    def tiled(self, window: ConvexBody, members: np.ndarray,
              cell_range: tuple[int, int, int, int] | None = None) -> tuple[IntrinsicVolumes, int]:
        o = self.opts
        hp_off, hps, pc_off, pcs, hmax, bbox = self.data
        wb, nw = E.poly_buffer(window.vertices)
        rng = np.array(cell_range if cell_range is not None else (1, 0, 1, 0), dtype=np.int64)
        v0, v1, v2, st = E.eval_tiled(
            wb, nw, np.asarray(members, dtype=np.int64), len(members), hp_off, hps, pc_off, pcs, hmax, bbox,
            self.u, EPS, o.drop_redundant, o.cut_cap, o.subset_cap, o.nerve_cap, o.h0, o.leaf_max, o.max_depth,
            rng, *self.ws.args())
        return IntrinsicVolumes(v0, v1, v2), st


def _sum_ivols(parts: list[IntrinsicVolumes]) -> IntrinsicVolumes:
    return IntrinsicVolumes(math.fsum(p.v0 for p in parts), math.fsum(p.v1 for p in parts),
                            math.fsum(p.v2 for p in parts))


def ivols_of_window(points, marks: MarkDistribution, u: float, window: ConvexBody,
                    engine_policy: str = "auto", raster: RasterConfig = RasterConfig(),
                    opts: EngineOptions | None = None) -> EvalResult:
    """Intrinsic volumes of ``Z_u`` inside ``window``, cluster by cluster.

    Policies: ``exact_only`` (direct subset enumeration, then tiling; never
    raster), ``tiled`` (tiling only, no raster), ``auto`` (like ``exact_only``
    with raster fallback), ``raster_only``.
    """
    if engine_policy not in POLICIES:
        raise ValueError(f"unknown engine policy {engine_policy!r}")
    if not u > 0:
        raise ValueError("threshold must be positive")
    s = as_sample(points)
    if len(s) == 0:
        return EvalResult(IntrinsicVolumes(0.0, 0.0, 0.0), "none", 0)
    if engine_policy == "raster_only":
        return EvalResult(ivols_raster(s, marks, u, window, raster), "raster", 0)
    if not marks.is_exact:
        if engine_policy == "auto":
            return EvalResult(ivols_raster(s, marks, u, window, raster), "raster", 0)
        raise ExactEngineOverflow("black-box kernels need the raster engine")
    eng = FastEngine(s, marks, u, opts)
    o = eng.opts
    labels = eng.labels(window)
    nclusters = int(labels.max()) + 1 if len(labels) else 0
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(nclusters + 1))
    parts, used = [], set()
    for c in range(nclusters):
        members = order[bounds[c]:bounds[c + 1]]
        st = E.OVERFLOW
        if engine_policy != "tiled" and len(members) <= o.n_max:
            iv, st = eng.exact(window, members)
            if st == E.OK:
                used.add("exact")
        if st != E.OK:
            iv, st = eng.tiled(window, members)
            if st == E.OK:
                used.add("tiled")
        if st != E.OK:
            if engine_policy != "auto":
                raise ExactEngineOverflow(f"exact engine overflow on a cluster of {len(members)} points")
            sub = s.subset(members)
            x0, y0, x1, y1 = eng.data[5][members].T
            wx0, wy0, wx1, wy1 = window.bbox()
            box = (max(x0.min(), wx0), max(y0.min(), wy0), min(x1.max(), wx1), min(y1.max(), wy1))
            iv = ivols_raster(sub, marks, u, window, raster, bounds=box)
            used.add("raster")
        parts.append(iv)
    tag = "+".join(sorted(used)) if used else "none"
    return EvalResult(_sum_ivols(parts), tag, nclusters)


def phi_of_window(points, marks: MarkDistribution, u: float, window: ConvexBody, f: GeometricFunctional,
                  engine_policy: str = "auto", raster: RasterConfig = RasterConfig(),
                  opts: EngineOptions | None = None) -> float:
    return f(ivols_of_window(points, marks, u, window, engine_policy, raster, opts).ivols)


def ivols_halfopen_cube(points, marks: MarkDistribution, u: float, z: tuple[int, int],
                        engine: str = "fast", opts: EngineOptions | None = None) -> IntrinsicVolumes:
    """Intrinsic volumes of ``Z_u`` on the half-open unit cube ``z + [0,1)^2``."""
    zx, zy = int(z[0]), int(z[1])
    cube = ConvexBody.box(zx, zy, zx + 1, zy + 1)
    s = as_sample(points)
    if len(s) == 0:
        return IntrinsicVolumes(0.0, 0.0, 0.0)
    if engine == "python":
        region = decompose(s, marks, u, cube, n_max=10**9, drop_redundant=True)
        return ivols_exact(region) - upper_edge_ivols(region.bodies, (zx, zy, zx + 1, zy + 1))
    if engine != "fast":
        raise ValueError(f"unknown engine {engine!r}")
    o = opts or EngineOptions()
    if o.h0 != 1.0:
        raise ValueError("the half-open cube evaluation needs unit level-0 cells")
    eng = FastEngine(s, marks, u, o)
    iv, st = eng.tiled(cube, np.arange(len(s)), cell_range=(zx, zx, zy, zy))
    if st != E.OK:
        raise ExactEngineOverflow("exact engine overflow on the unit cube")
    return iv


def phi_halfopen_cube(points, marks: MarkDistribution, u: float, z: tuple[int, int], f: GeometricFunctional,
                      engine: str = "fast", opts: EngineOptions | None = None) -> float:
    return f(ivols_halfopen_cube(points, marks, u, z, engine, opts))
