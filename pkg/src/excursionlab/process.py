"""Kernels, mark distributions and sampling of the marked Poisson process."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

from . import geometry as geo
from .geometry import EPS, ConvexBody

PROB_TOL = 1e-12


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class AffinePiece:
    """Affine function ``a*x + b*y + c`` in kernel coordinates."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c)):
            raise KernelError("affine piece with non-finite coefficient")

    def __call__(self, x: float, y: float) -> float:
        return self.a * x + self.b * y + self.c


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Concave kernel: min of affine pieces on a convex polygon support.

    A kernel with ``evaluator`` set is a black-box concave function (vectorized
    over an ``(n, 2)`` array of kernel-space points); only the raster engine
    accepts those.
    """

    pieces: tuple[AffinePiece, ...]
    support: ConvexBody
    kind: str = "pl"
    params: dict = field(default_factory=dict)
    evaluator: Callable[[np.ndarray], np.ndarray] | None = None
    max_height: float = field(init=False)
    circumradius: float = field(init=False)

    def __post_init__(self):
        if self.support.dim != 2 or geo.area(self.support) <= 0:
            raise KernelError("kernel support must be a polygon of positive area")
        if self.evaluator is None:
            if not self.pieces:
                raise KernelError("kernel needs at least one affine piece")
            for x, y in self.support.vertices:
                v = min(p(x, y) for p in self.pieces)
                if v < -1e-9 * max(1.0, max(abs(p.c) for p in self.pieces)):
                    raise KernelError(f"kernel negative at support vertex ({x}, {y})")
            hmax = _pl_max(self.pieces, self.support)
        else:
            vals = self.evaluator(np.asarray(self.support.vertices, dtype=float))
            if np.any(vals < -1e-12):
                raise KernelError("black-box kernel negative on its support boundary")
            hmax = float(self.params.get("height", np.nan))
            if not math.isfinite(hmax):
                raise KernelError("black-box kernel needs params['height'] as its maximum")
        object.__setattr__(self, "max_height", float(hmax))
        object.__setattr__(self, "circumradius", geo.circumradius(self.support))

    @property
    def is_exact(self) -> bool:
        return self.evaluator is None

    def value(self, x: float, y: float) -> float:
        if not geo.contains(self.support, (x, y)):
            return 0.0
        if self.evaluator is not None:
            return max(0.0, float(self.evaluator(np.array([[x, y]]))[0]))
        return max(0.0, min(p(x, y) for p in self.pieces))

    def values(self, xy: np.ndarray) -> np.ndarray:
        """Vectorized kernel values at kernel-space points ``xy`` of shape (n, 2)."""
        xy = np.asarray(xy, dtype=float)
        inside = np.ones(len(xy), dtype=bool)
        for hp in self.support.halfplanes():
            inside &= hp.a * xy[:, 0] + hp.b * xy[:, 1] - hp.c <= EPS
        if self.evaluator is not None:
            out = np.asarray(self.evaluator(xy), dtype=float)
        else:
            coef = self.piece_array()
            out = np.min(xy @ coef[:, :2].T + coef[:, 2], axis=1)
        return np.where(inside, np.maximum(out, 0.0), 0.0)

    def piece_array(self) -> np.ndarray:
        return np.array([[p.a, p.b, p.c] for p in self.pieces], dtype=float).reshape(-1, 3)

    def to_json(self) -> dict:
        if self.evaluator is not None and self.kind != "parabolic_cap":
            raise KernelError("black-box kernels other than parabolic_cap are not serializable")
        out = {"kind": self.kind,
               "pieces": [[p.a, p.b, p.c] for p in self.pieces],
               "support": self.support.to_json()}
        out.update(self.params)
        return out


def _pl_max(pieces: Sequence[AffinePiece], region: ConvexBody) -> float | None:
    """Max of min-of-affines over a convex region by vertex enumeration."""
    if region.is_empty:
        return None
    lines = [(hp.a, hp.b, hp.c) for hp in region.halfplanes()]
    for p, q in itertools.combinations(pieces, 2):
        a, b, c = p.a - q.a, p.b - q.b, q.c - p.c
        if math.hypot(a, b) > 1e-14:
            lines.append((a, b, c))
    cands = list(region.vertices)
    for (a1, b1, c1), (a2, b2, c2) in itertools.combinations(lines, 2):
        det = a1 * b2 - a2 * b1
        if abs(det) < 1e-14:
            continue
        cands.append(((c1 * b2 - c2 * b1) / det, (a1 * c2 - a2 * c1) / det))
    best = None
    for x, y in cands:
        if geo.contains(region, (x, y)):
            v = min(p(x, y) for p in pieces)
            if best is None or v > best:
                best = v
    return best


def kernel_max(kernel: KernelSpec, region: ConvexBody) -> float | None:
    """Exact maximum of the kernel over ``region`` intersected with its support.

    Returns ``None`` when the intersection is empty.
    """
    if region.is_empty:
        raise KernelError("kernel_max needs a nonempty region")
    if not kernel.is_exact:
        raise KernelError("kernel_max is exact only for piecewise-linear kernels")
    r = geo.clip(region, kernel.support)
    if r.is_empty:
        return None
    return max(0.0, _pl_max(kernel.pieces, r))


# -- builtin kernels ----------------------------------------------------------

def _check_positive(**kw):
    for name, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise KernelError(f"{name} must be positive, got {v}")


def indicator(support: ConvexBody, height: float) -> KernelSpec:
    _check_positive(height=height)
    return KernelSpec((AffinePiece(0.0, 0.0, float(height)),), support, kind="indicator",
                      params={"height": float(height)})


def cone_linf(R: float, h: float) -> KernelSpec:
    """Square pyramid ``h * (1 - max(|x|, |y|) / R)`` on ``[-R, R]^2``."""
    _check_positive(R=R, h=h)
    s = h / R
    pieces = (AffinePiece(-s, 0.0, h), AffinePiece(s, 0.0, h),
              AffinePiece(0.0, -s, h), AffinePiece(0.0, s, h))
    return KernelSpec(pieces, ConvexBody.box(-R, -R, R, R), kind="cone_linf",
                      params={"R": float(R), "height": float(h)})


def pyramid(support: ConvexBody, h: float, apex: Sequence[float] | None = None) -> KernelSpec:
    """Pyramid over a convex polygon: ``h`` at ``apex``, 0 on every edge line."""
    _check_positive(h=h)
    ax, ay = geo.centroid(support) if apex is None else (float(apex[0]), float(apex[1]))
    pieces = []
    for hp in support.halfplanes():
        gap = hp.c - (hp.a * ax + hp.b * ay)
        if gap <= EPS:
            raise KernelError("pyramid apex must lie in the interior of the support")
        pieces.append(AffinePiece(-h * hp.a / gap, -h * hp.b / gap, h * hp.c / gap))
    return KernelSpec(tuple(pieces), support, kind="pl", params={"height": float(h)})


def tent(half_width: float, half_height: float, h: float) -> KernelSpec:
    """Rectangular pyramid ``h * min(1 - |x|/a, 1 - |y|/b)``."""
    _check_positive(half_width=half_width, half_height=half_height, h=h)
    a, b = half_width, half_height
    pieces = (AffinePiece(-h / a, 0.0, h), AffinePiece(h / a, 0.0, h),
              AffinePiece(0.0, -h / b, h), AffinePiece(0.0, h / b, h))
    return KernelSpec(pieces, ConvexBody.box(-a, -b, a, b), kind="pl", params={"height": float(h)})


def parabolic_cap(R: float, h: float) -> KernelSpec:
    """Strictly concave ``h * min(1 - x^2/R^2, 1 - y^2/R^2)`` on ``[-R, R]^2``.

    Black box: raster engine only.
    """
    _check_positive(R=R, h=h)

    def ev(xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return h * np.minimum(1.0 - (xy[:, 0] / R) ** 2, 1.0 - (xy[:, 1] / R) ** 2)

    return KernelSpec((), ConvexBody.box(-R, -R, R, R), kind="parabolic_cap",
                      params={"R": float(R), "height": float(h)}, evaluator=ev)


def example42_supports(j: int) -> tuple[ConvexBody, ConvexBody]:
    """The thin vertical and horizontal rectangles with marks 2j-1 and 2j."""
    if j < 1:
        raise KernelError("example42 index starts at 1")
    w = 1.0 / (4.0 * (2 * j - 1))
    return ConvexBody.box(-w, -1.0, w, 1.0), ConvexBody.box(-1.0, -w, 1.0, w)


def example42(j: int, u: float) -> tuple[KernelSpec, KernelSpec]:
    """Height ``u/2`` indicators on the two rectangles of index ``j``."""
    _check_positive(u=u)
    vert, horiz = example42_supports(j)
    return indicator(vert, u / 2.0), indicator(horiz, u / 2.0)


# -- marks --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarkDistribution:
    atoms: tuple[tuple[KernelSpec, float], ...]

    def __post_init__(self):
        if not self.atoms:
            raise KernelError("mark distribution needs at least one atom")
        probs = [p for _, p in self.atoms]
        if any(not (p > 0) for p in probs):
            raise KernelError("atom probabilities must be positive")
        if abs(math.fsum(probs) - 1.0) > PROB_TOL:
            raise KernelError(f"atom probabilities sum to {math.fsum(probs)!r}, not 1")

    @classmethod
    def single(cls, kernel: KernelSpec) -> "MarkDistribution":
        return cls(((kernel, 1.0),))

    def __len__(self) -> int:
        return len(self.atoms)

    def kernel(self, m: int) -> KernelSpec:
        return self.atoms[m][0]

    @property
    def kernels(self) -> list[KernelSpec]:
        return [k for k, _ in self.atoms]

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms], dtype=float)

    @property
    def is_exact(self) -> bool:
        return all(k.is_exact for k, _ in self.atoms)

    @property
    def max_circumradius(self) -> float:
        return max(k.circumradius for k, _ in self.atoms)

    def mean_area(self) -> float:
        return math.fsum(p * geo.area(k.support) for k, p in self.atoms)

    def to_json(self) -> dict:
        return {"atoms": [{"prob": p, "kernel": k.to_json()} for k, p in self.atoms]}

    @classmethod
    def from_json(cls, data: dict) -> "MarkDistribution":
        return cls(tuple((kernel_from_json(a["kernel"]), float(a["prob"])) for a in data["atoms"]))


def kernel_from_json(d: dict) -> KernelSpec:
    kind = d.get("kind", "pl")
    if kind == "indicator":
        return indicator(ConvexBody.from_json(d["support"]), float(d["height"]))
    if kind == "cone_linf":
        if "R" in d:
            R = float(d["R"])
        else:
            x0, _, x1, _ = ConvexBody.from_json(d["support"]).bbox()
            R = 0.5 * (x1 - x0)
        return cone_linf(R, float(d["height"]))
    if kind == "parabolic_cap":
        return parabolic_cap(float(d["R"]), float(d["height"]))
    if kind == "pl":
        pieces = tuple(AffinePiece(*map(float, p)) for p in d["pieces"])
        params = {"height": float(d["height"])} if "height" in d else {}
        return KernelSpec(pieces, ConvexBody.from_json(d["support"]), kind="pl", params=params)
    raise KernelError(f"unknown kernel kind {kind!r}")


def load_marks(path) -> MarkDistribution:
    with open(path) as fh:
        return MarkDistribution.from_json(json.load(fh))


def geometric_k_max(p: float, tail: float = 1e-3, floor: int = 40) -> int:
    """Smallest truncation level >= ``floor`` whose folded tail mass is below ``tail``."""
    return max(floor, math.ceil(math.log(tail) / math.log(p)))


def example42_marks(p: float, u: float, k_max: int | None = None) -> MarkDistribution:
    """Geometric marks ``Q({k}) = (1-p) p^(k-1)``; mark k uses rectangle K_k.

    Atom index ``k - 1`` holds mark ``k``; the tail beyond ``k_max`` is folded
    into the last atom.
    """
    if not 0.0 < p < 1.0:
        raise KernelError("geometric parameter must lie in (0, 1)")
    if k_max is None:
        k_max = geometric_k_max(p)
    if k_max % 2:
        k_max += 1
    atoms = []
    for j in range(1, k_max // 2 + 1):
        vert, horiz = example42(j, u)
        atoms.append((vert, (1 - p) * p ** (2 * j - 2)))
        atoms.append((horiz, (1 - p) * p ** (2 * j - 1)))
    last_kernel, last_p = atoms[-1]
    atoms[-1] = (last_kernel, last_p + p ** k_max)
    return MarkDistribution(tuple(atoms))


# -- sampling -----------------------------------------------------------------

class MarkedPoint(NamedTuple):
    pos: tuple[float, float]
    mark: int


@dataclass(frozen=True, eq=False)
class Sample:
    """Points of one realization: ``positions`` (n, 2) and atom indices ``marks``."""

    positions: np.ndarray
    marks: np.ndarray

    def __len__(self) -> int:
        return len(self.marks)

    def __iter__(self) -> Iterator[MarkedPoint]:
        for (x, y), m in zip(self.positions, self.marks):
            yield MarkedPoint((float(x), float(y)), int(m))

    def __getitem__(self, i: int) -> MarkedPoint:
        x, y = self.positions[i]
        return MarkedPoint((float(x), float(y)), int(self.marks[i]))

    def subset(self, idx) -> "Sample":
        idx = np.asarray(idx, dtype=np.int64)
        return Sample(self.positions[idx].reshape(-1, 2), self.marks[idx])

    def translated(self, t: Sequence[float]) -> "Sample":
        return Sample(self.positions + np.asarray(t, dtype=float), self.marks.copy())

    def extended(self, points: Sequence[MarkedPoint]) -> "Sample":
        if not points:
            return self
        pos = np.array([p.pos for p in points], dtype=float).reshape(-1, 2)
        mk = np.array([p.mark for p in points], dtype=np.int64)
        return Sample(np.vstack([self.positions, pos]), np.concatenate([self.marks, mk]))

    def supports(self, marks: MarkDistribution) -> list[ConvexBody]:
        return [geo.translate(marks.kernel(m).support, pos) for pos, m in self]

    @classmethod
    def empty(cls) -> "Sample":
        return cls(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))


def as_sample(points) -> Sample:
    if isinstance(points, Sample):
        return points
    points = list(points)
    if not points:
        return Sample.empty()
    pos = np.array([p.pos for p in points], dtype=float)
    mk = np.array([p.mark for p in points], dtype=np.int64)
    return Sample(pos, mk)


@dataclass(frozen=True, eq=False)
class ProcessConfig:
    gamma: float
    marks: MarkDistribution
    window: ConvexBody
    seed: int = 0
    replication_id: int = 0

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise KernelError("intensity must be positive")
        if self.window.dim != 2:
            raise KernelError("window must be full-dimensional")


def rng_for(seed: int, replication_id: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per (seed, replication, stream)."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(replication_id), int(stream)))
    return np.random.default_rng(ss)


def hits_window(kernel_support: ConvexBody, window: ConvexBody, xy: np.ndarray) -> np.ndarray:
    """Whether ``support + x`` meets ``window`` for each row ``x`` of ``xy`` (closed sets)."""
    keep = np.ones(len(xy), dtype=bool)
    kv = np.asarray(kernel_support.vertices, dtype=float)
    wv = np.asarray(window.vertices, dtype=float)
    for hp in kernel_support.halfplanes() + window.halfplanes():
        n = np.array([hp.a, hp.b])
        kp, wp = kv @ n, wv @ n
        shift = xy @ n
        keep &= ~((shift + kp.min() > wp.max() + EPS) | (shift + kp.max() < wp.min() - EPS))
    return keep


def dilation_box(kernel_support: ConvexBody, window: ConvexBody) -> tuple[float, float, float, float]:
    """Bounding box of ``{x : (K + x) meets W}`` = ``W + (-K)``."""
    wx0, wy0, wx1, wy1 = window.bbox()
    kx0, ky0, kx1, ky1 = kernel_support.bbox()
    return wx0 - kx1, wy0 - ky1, wx1 - kx0, wy1 - ky0


def sample_process(config: ProcessConfig, gamma: float | None = None) -> Sample:
    """Points of the marked Poisson process whose supports meet the window."""
    g = config.gamma if gamma is None else gamma
    rng = rng_for(config.seed, config.replication_id)
    pos_parts, mark_parts = [], []
    for m, (kernel, p) in enumerate(config.marks.atoms):
        x0, y0, x1, y1 = dilation_box(kernel.support, config.window)
        n = rng.poisson(g * p * (x1 - x0) * (y1 - y0))
        xy = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
        xy = xy[hits_window(kernel.support, config.window, xy)]
        pos_parts.append(xy)
        mark_parts.append(np.full(len(xy), m, dtype=np.int64))
    if not pos_parts:
        return Sample.empty()
    return Sample(np.vstack(pos_parts).reshape(-1, 2), np.concatenate(mark_parts))


def field_values(points, marks: MarkDistribution, ys: np.ndarray) -> np.ndarray:
    """Shot-noise field at each row of ``ys``."""
    s = as_sample(points)
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    out = np.zeros(len(ys))
    for (x, y), m in zip(s.positions, s.marks):
        kernel = marks.kernel(int(m))
        x0, y0, x1, y1 = kernel.support.bbox()
        rel = ys - (x, y)
        near = (rel[:, 0] >= x0 - EPS) & (rel[:, 0] <= x1 + EPS) & (rel[:, 1] >= y0 - EPS) & (rel[:, 1] <= y1 + EPS)
        if near.any():
            out[near] += kernel.values(rel[near])
    return out


def eval_field(points, marks: MarkDistribution, y: Sequence[float]) -> float:
    return float(field_values(points, marks, np.array([y], dtype=float))[0])
