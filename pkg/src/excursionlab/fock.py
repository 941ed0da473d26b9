"""Difference operators and exact variance identities on finite Poisson toy spaces.

A toy space has finitely many atoms with Poisson multiplicities.  Functionals
are callables on count vectors (one nonnegative integer per atom).
Expectations are exact sums over all count vectors up to the truncation
level, so every identity here is checked to rounding, not to Monte Carlo error.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .functionals import EvalResult, GeometricFunctional, ivols_of_window
from .geometry import ConvexBody, clip, translate
from .process import MarkDistribution, MarkedPoint, as_sample

MAX_ATOMS = 6

Functional = Callable[[tuple[int, ...]], float]


class EnumerationError(ValueError):
    pass


@dataclass(frozen=True)
class ToySpace:
    weights: tuple[float, ...]
    n_max: int = 20

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if not w:
            raise EnumerationError("toy space needs at least one atom")
        if len(w) > MAX_ATOMS:
            raise EnumerationError(f"more than {MAX_ATOMS} atoms")
        if any(not (x > 0 and math.isfinite(x)) for x in w):
            raise EnumerationError("atom weights must be positive and finite")
        if self.n_max < 10:
            raise EnumerationError("truncation level must be at least 10")
        object.__setattr__(self, "weights", w)

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    def probabilities(self) -> np.ndarray:
        """Product Poisson weights of all count vectors with entries <= n_max."""
        axes = []
        for mu in self.weights:
            c = np.arange(self.n_max + 1)
            logp = -mu + c * math.log(mu) - np.array([math.lgamma(k + 1) for k in c])
            axes.append(np.exp(logp))
        p = axes[0]
        for a in axes[1:]:
            p = np.multiply.outer(p, a)
        return p

    def table(self, F: Functional, extent: int) -> np.ndarray:
        """``F`` on every count vector with entries <= ``extent``."""
        shape = (extent + 1,) * self.n_atoms
        out = np.empty(shape)
        for c in itertools.product(range(extent + 1), repeat=self.n_atoms):
            out[c] = F(c)
        return out


def _add(base: Sequence[int], added: Sequence[int], n_atoms: int) -> tuple[int, ...]:
    c = list(base) + [0] * (n_atoms - len(base))
    for x in added:
        c[x] += 1
    return tuple(c)


def difference_operator(F: Functional, base: Sequence[int], added: Sequence[int],
                        n_atoms: int | None = None) -> float:
    """Iterated difference ``D_{x1..xn} F`` at configuration ``base`` (a count vector)."""
    added = list(added)
    if not added:
        raise ValueError("need at least one added atom")
    n_atoms = n_atoms if n_atoms is not None else max(len(base), max(added) + 1)
    n = len(added)
    terms = []
    for r in range(n + 1):
        for S in itertools.combinations(added, r):
            terms.append((-1) ** (n - r) * F(_add(base, S, n_atoms)))
    return math.fsum(terms)


def _multisets(n_atoms: int, n: int):
    """Count vectors with total ``n``."""
    for cut in itertools.combinations(range(n + n_atoms - 1), n_atoms - 1):
        prev, k = -1, []
        for c in cut + (n + n_atoms - 1,):
            k.append(c - prev - 1)
            prev = c
        yield tuple(k)


def _forward_difference(arr: np.ndarray, axis: int, times: int) -> np.ndarray:
    for _ in range(times):
        arr = np.diff(arr, axis=axis)
    return arr


def _multiset_weight(space: ToySpace, k: tuple[int, ...]) -> float:
    """``prod mu^k_i / k_i!``: the Fock weight of all orderings of ``k`` over n!."""
    return math.prod(mu ** ki / math.factorial(ki) for mu, ki in zip(space.weights, k))


@dataclass(frozen=True)
class FockResult:
    variance: float
    series_terms: tuple[float, ...]

    @property
    def series_sum(self) -> float:
        return math.fsum(self.series_terms)


def _expectations(space: ToySpace, F: Functional, extra: int):
    N = space.n_max
    p = space.probabilities()
    T = space.table(F, N + extra)
    return p, T


def _shifted_means(space: ToySpace, p: np.ndarray, T: np.ndarray, extent: int) -> np.ndarray:
    """``G(s) = E F(xi + s)`` for every count vector ``s`` with entries <= extent."""
    N = space.n_max
    a = space.n_atoms
    G = np.empty((extent + 1,) * a)
    for s in itertools.product(range(extent + 1), repeat=a):
        sl = tuple(slice(si, si + N + 1) for si in s)
        G[s] = float(np.sum(p * T[sl]))
    return G


def _direct_variance(space: ToySpace, p: np.ndarray, T: np.ndarray) -> float:
    base = T[(slice(0, space.n_max + 1),) * space.n_atoms]
    mean = math.fsum((p * base).ravel())
    return math.fsum((p * (base - mean) ** 2).ravel())


def fock_variance(space: ToySpace, F: Functional, n_terms: int | None = None) -> FockResult:
    """Direct variance and the chaos-series terms ``1/n! int (E D^n F)^2 dmu^n``."""
    N = space.n_max
    n_terms = N if n_terms is None else int(n_terms)
    p, T = _expectations(space, F, n_terms)
    var = _direct_variance(space, p, T)
    G = _shifted_means(space, p, T, n_terms)
    terms = []
    for n in range(1, n_terms + 1):
        acc = []
        for k in _multisets(space.n_atoms, n):
            arr = G
            for axis, times in enumerate(k):
                arr = _forward_difference(arr, axis, times)
            ed = float(arr[(0,) * space.n_atoms])
            acc.append(_multiset_weight(space, k) * ed * ed)
        terms.append(math.fsum(acc))
    return FockResult(var, tuple(terms))


def c_alpha_k(alpha: float, k: int) -> float:
    """``max_m prod_{i<k} (m - i) * (alpha - m + k + 1)`` over integers m >= 0."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if k < 1:
        raise ValueError("k must be at least 1")
    best = 0.0
    for m in range(0, math.ceil(alpha) + k + 3):
        g = math.prod(m - i for i in range(k)) * (alpha - m + k + 1)
        best = max(best, g)
    return best


def c_alpha_k_terms(alpha: float, k: int) -> list[float]:
    return [math.prod(m - i for i in range(k)) * (alpha - m + k + 1)
            for m in range(0, math.ceil(alpha) + k + 3)]


def derivative_energy(space: ToySpace, F: Functional, k: int) -> float:
    """``E int (D^k F)^2 dmu^k`` by exact enumeration."""
    N = space.n_max
    p, T = _expectations(space, F, k)
    acc = []
    for kappa in _multisets(space.n_atoms, k):
        arr = T
        for axis, times in enumerate(kappa):
            arr = _forward_difference(arr, axis, times)
        arr = arr[(slice(0, N + 1),) * space.n_atoms]
        orderings = math.factorial(k) * _multiset_weight(space, kappa)
        acc.append(orderings * math.fsum((p * arr * arr).ravel()))
    return math.fsum(acc)


@dataclass(frozen=True)
class ReversePoincareReport:
    k: int
    alpha: float
    c: float
    variance: float
    J_k: float
    J_k1: float
    slack: float
    hypothesis_violated: bool

    @property
    def holds(self) -> bool:
        return self.hypothesis_violated or self.slack >= -1e-10


def check_reverse_poincare(space: ToySpace, F: Functional, k: int) -> ReversePoincareReport:
    """Check ``c(alpha, k) Var F >= E int (D^k F)^2`` with the smallest admissible alpha."""
    if k < 1:
        raise ValueError("k must be at least 1")
    p, T = _expectations(space, F, 0)
    var = _direct_variance(space, p, T)
    jk = derivative_energy(space, F, k)
    jk1 = derivative_energy(space, F, k + 1)
    scale = max(1.0, abs(jk), abs(jk1))
    if jk <= 1e-14 * scale:
        if jk1 <= 1e-14 * scale:
            return ReversePoincareReport(k, 0.0, c_alpha_k(0.0, k), var, jk, jk1,
                                         var * c_alpha_k(0.0, k) - jk, False)
        return ReversePoincareReport(k, math.inf, math.inf, var, jk, jk1, math.nan, True)
    alpha = jk1 / jk
    c = c_alpha_k(alpha, k)
    return ReversePoincareReport(k, alpha, c, var, jk, jk1, c * var - jk, False)


# -- difference operators of the excursion functional -------------------------

@dataclass(frozen=True)
class LocalizationReport:
    full: float
    localized: float
    discrepancy: float
    n_added: int


def _phi(points, marks, u, window, f, engine_policy) -> float:
    if window.dim is None:
        return 0.0
    res: EvalResult = ivols_of_window(points, marks, u, window, engine_policy)
    return f(res.ivols)


def excursion_difference(points, marks: MarkDistribution, u: float, window: ConvexBody,
                         added: Sequence[MarkedPoint], f: GeometricFunctional,
                         engine_policy: str = "exact_only") -> float:
    """``D^n phi(Z_u in window)`` for the added marked points."""
    s = as_sample(points)
    n = len(added)
    terms = []
    for r in range(n + 1):
        for S in itertools.combinations(added, r):
            terms.append((-1) ** (n - r) * _phi(s.extended(list(S)), marks, u, window, f, engine_policy))
    return math.fsum(terms)


def check_localization(points, marks: MarkDistribution, u: float, window: ConvexBody,
                       added: Sequence[MarkedPoint], f: GeometricFunctional,
                       engine_policy: str = "exact_only") -> LocalizationReport:
    """Compare the iterated difference on ``window`` and on ``window`` cut to the added supports."""
    added = [MarkedPoint((float(p.pos[0]), float(p.pos[1])), int(p.mark)) for p in added]
    if not 1 <= len(added) <= 3:
        raise ValueError("localization check takes one to three added points")
    local = window
    for p in added:
        local = clip(local, translate(marks.kernel(p.mark).support, p.pos))
        if local.is_empty:
            break
    full = excursion_difference(points, marks, u, window, added, f, engine_policy)
    loc = 0.0 if local.is_empty else excursion_difference(points, marks, u, local, added, f, engine_policy)
    return LocalizationReport(full, loc, abs(full - loc), len(added))


# -- standard battery -----------------------------------------------------------

def _battery_functionals():
    def poly(c):
        return lambda n: sum(ci * n[0] ** i for i, ci in enumerate(c))
    out = [
        ("count", lambda n: float(sum(n))),
        ("count_squared", lambda n: float(sum(n)) ** 2),
        ("count_cubed", lambda n: float(sum(n)) ** 3),
        ("empty", lambda n: float(sum(n) == 0)),
        ("at_most_one", lambda n: float(sum(n) <= 1)),
        ("capped", lambda n: float(min(sum(n), 2))),
        ("exp_decay", lambda n: math.exp(-sum(n))),
        ("sqrt", lambda n: math.sqrt(sum(n))),
        ("log1p", lambda n: math.log1p(sum(n))),
        ("parity", lambda n: float(sum(n) % 2)),
        ("cubic_poly", poly((0.5, -1.0, 0.25, 0.1))),
        ("cosine", lambda n: math.cos(1.3 * sum(n))),
    ]
    multi = [
        ("product", lambda n: float(n[0] * n[1])),
        ("max", lambda n: float(max(n))),
        ("min", lambda n: float(min(n))),
        ("first_present", lambda n: float(n[0] > 0)),
        ("weighted", lambda n: float(sum((i + 1) * x for i, x in enumerate(n)))),
        ("weighted_sq", lambda n: float(sum((i + 1) * x for i, x in enumerate(n))) ** 2),
        ("union_indicator", lambda n: float(any(n))),
        ("pair_count", lambda n: float(sum(a * b for a, b in itertools.combinations(n, 2)))),
        ("distinct", lambda n: float(sum(1 for x in n if x > 0))),
        ("softmin", lambda n: math.exp(-min(n) - 0.5 * max(n))),
    ]
    return out, multi


def standard_battery() -> list[tuple[str, ToySpace, Functional]]:
    """Toy cases with at most three atoms and total mass at most one."""
    single, multi = _battery_functionals()
    spaces1 = [ToySpace((0.3,)), ToySpace((1.0,))]
    spaces = [ToySpace((0.4, 0.6)), ToySpace((0.2, 0.3, 0.5)), ToySpace((0.1, 0.15, 0.25))]
    cases = []
    for sp in spaces1:
        for name, F in single:
            # parity has |D^n F| = 2^(n-1): at unit mass the series tail past n = 20 is not negligible
            if name == "parity" and sum(sp.weights) > 0.5:
                continue
            cases.append((f"{name}@{sp.weights}", sp, F))
    for sp in spaces:
        for name, F in multi:
            cases.append((f"{name}@{sp.weights}", sp, F))
        cases.append((f"count_squared@{sp.weights}", sp, single[1][1]))
    return cases


@dataclass(frozen=True)
class BatteryResult:
    name: str
    variance: float
    series: float
    fock_error: float
    reverse_poincare: tuple[ReversePoincareReport, ...]

    @property
    def ok(self) -> bool:
        return self.fock_error < 1e-10 and all(r.holds for r in self.reverse_poincare)


def run_battery(ks: Sequence[int] = (1, 2, 3),
                cases: list[tuple[str, ToySpace, Functional]] | None = None) -> list[BatteryResult]:
    out = []
    for name, sp, F in cases if cases is not None else standard_battery():
        fr = fock_variance(sp, F)
        rp = tuple(check_reverse_poincare(sp, F, k) for k in ks)
        out.append(BatteryResult(name, fr.variance, fr.series_sum, abs(fr.variance - fr.series_sum), rp))
    return out
