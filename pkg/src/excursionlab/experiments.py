"""Monte Carlo pipelines for growing observation windows.

Every replication is keyed by an integer id and draws its own generator from
``(seed, replication_id)``, so results do not depend on scheduling.  Values
are sorted by id before any aggregation.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import stats

from . import geometry as geo
from .excursion import count_components, count_N_upper, decompose
from .functionals import POLICIES, GeometricFunctional, RasterConfig, ivols_of_window, phi_halfopen_cube
from .geometry import ConvexBody
from .process import (MarkDistribution, MarkedPoint, ProcessConfig, Sample, example42_marks, rng_for,
                      sample_process)

REP_STRIDE = 10**6
CUBE_BASE = 10**9
SIGMA0_BASE = 2 * 10**9
EXAMPLE42_BASE = 3 * 10**9
BOOT_STREAM = 7


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    gamma: float
    marks: MarkDistribution
    u: float
    functional: GeometricFunctional
    r_values: tuple[float, ...]
    replications: int
    base_window: ConvexBody = field(default_factory=lambda: ConvexBody.box(0.0, 0.0, 1.0, 1.0))
    engine_policy: str = "auto"
    raster_eps: float = 1.0 / 128.0
    seed: int = 0
    tag: str = ""
    threads: int = 1
    cube_replications: int = 0
    bootstrap: int = 1000

    def __post_init__(self):
        r = tuple(float(x) for x in self.r_values)
        object.__setattr__(self, "r_values", r)
        if not r or any(x <= 0 for x in r):
            raise ConfigError("window scales must be positive")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ConfigError("window scales must be strictly increasing")
        if self.replications < 2:
            raise ConfigError("need at least two replications")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ConfigError("intensity must be nonnegative and finite")
        if not self.u > 0:
            raise ConfigError("threshold must be positive")
        if self.engine_policy not in POLICIES:
            raise ConfigError(f"unknown engine policy {self.engine_policy!r}")
        if not self.raster_eps > 0:
            raise ConfigError("raster resolution must be positive")
        if self.base_window.dim != 2:
            raise ConfigError("base window must be full-dimensional")
        if self.threads < 1:
            raise ConfigError("threads must be positive")

    def window(self, r: float) -> ConvexBody:
        return geo.scale(self.base_window, r)

    @property
    def raster(self) -> RasterConfig:
        return RasterConfig(self.raster_eps)

    def to_json(self) -> dict:
        return {
            "name": self.name, "gamma": self.gamma, "marks": self.marks.to_json(), "u": self.u,
            "alpha": list(self.functional.alpha), "r_values": list(self.r_values),
            "replications": self.replications, "base_window": self.base_window.to_json(),
            "engine_policy": self.engine_policy, "raster_eps": self.raster_eps, "seed": self.seed,
            "tag": self.tag, "threads": self.threads, "cube_replications": self.cube_replications,
            "bootstrap": self.bootstrap,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        try:
            kw = dict(
                name=str(d.get("name", "experiment")), gamma=float(d["gamma"]),
                marks=MarkDistribution.from_json(d["marks"]), u=float(d["u"]),
                functional=GeometricFunctional(tuple(d["alpha"])), r_values=tuple(d["r_values"]),
                replications=int(d["replications"]))
            if "base_window" in d:
                kw["base_window"] = ConvexBody.from_json(d["base_window"])
            for key, conv in (("engine_policy", str), ("raster_eps", float), ("seed", int), ("tag", str),
                              ("threads", int), ("cube_replications", int), ("bootstrap", int)):
                if key in d:
                    kw[key] = conv(d[key])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed experiment config: {exc!r}") from exc
        return cls(**kw)

    def config_hash(self) -> str:
        """Hash of everything that affects the numbers (thread count excluded)."""
        d = self.to_json()
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "experiment" in data and isinstance(data.get("config"), dict):
        # a report mirror: re-run with its embedded config and seed
        data = data["config"]
    return ExperimentConfig.from_json(data)


# -- replications ---------------------------------------------------------------

@dataclass(frozen=True)
class Replication:
    r: float
    replication_id: int
    phi_value: float
    n_points: int
    engine_used: str
    wall_ms: float


def draw(cfg: ExperimentConfig, window: ConvexBody, replication_id: int) -> Sample:
    if cfg.gamma == 0:
        return Sample.empty()
    pc = ProcessConfig(cfg.gamma, cfg.marks, window, cfg.seed, replication_id)
    return sample_process(pc)


def replicate(cfg: ExperimentConfig, r: float, replication_id: int) -> Replication:
    t0 = time.perf_counter()
    w = cfg.window(r)
    s = draw(cfg, w, replication_id)
    res = ivols_of_window(s, cfg.marks, cfg.u, w, cfg.engine_policy, cfg.raster)
    ms = 1e3 * (time.perf_counter() - t0)
    return Replication(r, replication_id, cfg.functional(res.ivols), len(s), res.engine_used, ms)


def replicate_cube(cfg: ExperimentConfig, replication_id: int) -> Replication:
    """One draw of ``phi`` on the half-open unit cube, away from every window edge."""
    t0 = time.perf_counter()
    half = 0.5 * (1.0 + 2.0 * cfg.marks.max_circumradius + 2.0)
    w = ConvexBody.box(0.5 - half, 0.5 - half, 0.5 + half, 0.5 + half)
    s = draw(cfg, w, replication_id)
    v = phi_halfopen_cube(s, cfg.marks, cfg.u, (0, 0), cfg.functional)
    ms = 1e3 * (time.perf_counter() - t0)
    return Replication(1.0, replication_id, v, len(s), "tiled", ms)


@lru_cache(maxsize=8)
def _cfg_from_blob(blob: str) -> ExperimentConfig:
    return ExperimentConfig.from_json(json.loads(blob))


def _worker(job: tuple[str, str, float, int]) -> Replication:
    kind, blob, r, rid = job
    cfg = _cfg_from_blob(blob)
    return replicate_cube(cfg, rid) if kind == "cube" else replicate(cfg, r, rid)


def _run_jobs(cfg: ExperimentConfig, jobs: list[tuple[str, float, int]]) -> list[Replication]:
    if cfg.threads == 1:
        out = [replicate_cube(cfg, rid) if kind == "cube" else replicate(cfg, r, rid) for kind, r, rid in jobs]
    else:
        blob = json.dumps(cfg.to_json(), sort_keys=True)
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            out = list(ex.map(_worker, [(k, blob, r, rid) for k, r, rid in jobs], chunksize=8))
    return sorted(out, key=lambda rep: rep.replication_id)


def collect(cfg: ExperimentConfig) -> dict[float, list[Replication]]:
    jobs = [("window", r, i * REP_STRIDE + k) for i, r in enumerate(cfg.r_values) for k in range(cfg.replications)]
    reps = _run_jobs(cfg, jobs)
    out = {r: [] for r in cfg.r_values}
    for rep in reps:
        out[rep.r].append(rep)
    return out


# -- statistics -----------------------------------------------------------------

def sample_stats(values: Sequence[float]) -> dict:
    x = np.asarray(values, dtype=float)
    n = len(x)
    mean = math.fsum(x) / n
    dev = x - mean
    var = math.fsum(dev * dev) / (n - 1)
    m4 = math.fsum(dev ** 4) / n
    var_se = math.sqrt(max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n)
    return {"n": n, "mean": mean, "variance": var, "se_mean": math.sqrt(var / n), "se_variance": var_se}


def bootstrap_variance_ci(values: Sequence[float], B: int, rng: np.random.Generator,
                          level: float = 0.95) -> tuple[float, float]:
    x = np.asarray(values, dtype=float)
    idx = rng.integers(0, len(x), size=(B, len(x)))
    v = np.var(x[idx], axis=1, ddof=1)
    lo, hi = np.quantile(v, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def ks_normal(values: Sequence[float]) -> float:
    x = np.asarray(values, dtype=float)
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ValueError("zero variance: cannot standardize")
    return float(stats.kstest((x - x.mean()) / sd, "norm").statistic)


def bootstrap_ks(values: Sequence[float], B: int, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    out = np.empty(B)
    for b in range(B):
        xb = x[rng.integers(0, len(x), len(x))]
        sd = xb.std(ddof=1)
        out[b] = stats.kstest((xb - xb.mean()) / sd, "norm").statistic if sd > 0 else 1.0
    return out


def boolean_reference(cfg: ExperimentConfig) -> float | None:
    """Area density ``1 - exp(-gamma E V2(K))`` of a Boolean model, scaled by the area weight."""
    a0, a1, a2 = cfg.functional.alpha
    if cfg.tag != "boolean" or a0 != 0 or a1 != 0:
        return None
    return a2 * (1.0 - math.exp(-cfg.gamma * cfg.marks.mean_area()))


# -- reports --------------------------------------------------------------------

@dataclass
class EstimateReport:
    experiment: str
    config: ExperimentConfig
    rows: dict[float, dict]
    samples: dict[float, list[Replication]]
    extras: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    def to_json(self) -> dict:
        return {"experiment": self.experiment, "config_hash": self.config_hash, "seed": self.config.seed,
                "config": self.config.to_json(),
                "per_r": [dict(r=r, **row) for r, row in self.rows.items()], "extras": _jsonable(self.extras)}

    def summary_lines(self) -> list[str]:
        lines = []
        for r, row in self.rows.items():
            parts = [f"r={r:g}", f"n={row['n']}"]
            for key in ("mean_density", "mean_density_se", "variance_density", "variance_density_se",
                        "ks", "skewness", "ratio_to_previous"):
                if row.get(key) is not None:
                    parts.append(f"{key}={row[key]:.6g}")
            if self.extras.get("analytic_density") is not None:
                parts.append(f"analytic={self.extras['analytic_density']:.6g}")
            lines.append(f"{self.experiment} " + " ".join(parts))
        return lines

    def write(self, outdir) -> list[str]:
        os.makedirs(outdir, exist_ok=True)
        stem = os.path.join(outdir, f"{self.experiment}-{self.config_hash}")
        cols = ["r", "replication_id", "phi_value", "n_points", "engine_used", "wall_ms", "seed"]
        with open(stem + ".csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for reps in self.samples.values():
                for rep in reps:
                    w.writerow([repr(rep.r), rep.replication_id, repr(rep.phi_value), rep.n_points,
                                rep.engine_used, f"{rep.wall_ms:.3f}", self.config.seed])
        keys = sorted({k for row in self.rows.values() for k in row})
        with open(stem + "-summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r"] + keys)
            for r, row in self.rows.items():
                w.writerow([repr(r)] + [_cell(row.get(k)) for k in keys])
        with open(stem + ".json", "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
        return [stem + ".csv", stem + "-summary.csv", stem + ".json"]


def _cell(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _base_rows(cfg: ExperimentConfig, samples: dict[float, list[Replication]]) -> dict[float, dict]:
    rows = {}
    for r, reps in samples.items():
        st = sample_stats([rep.phi_value for rep in reps])
        area = geo.area(cfg.window(r))
        st.update(window_area=area, mean_density=st["mean"] / area, mean_density_se=st["se_mean"] / area,
                  variance_density=st["variance"] / area, variance_density_se=st["se_variance"] / area)
        rows[r] = st
    return rows


# -- pipelines ------------------------------------------------------------------

def run_expectation_scaling(cfg: ExperimentConfig) -> EstimateReport:
    samples = collect(cfg)
    rows = _base_rows(cfg, samples)
    extras = {"analytic_density": boolean_reference(cfg)}
    if cfg.cube_replications >= 2:
        cube = _run_jobs(cfg, [("cube", 1.0, CUBE_BASE + k) for k in range(cfg.cube_replications)])
        st = sample_stats([rep.phi_value for rep in cube])
        extras["cube"] = {"n": st["n"], "mean": st["mean"], "se_mean": st["se_mean"]}
        samples = dict(samples)
        samples[-1.0] = cube
    return EstimateReport("expectation", cfg, rows, samples, extras)


def run_variance_scaling(cfg: ExperimentConfig) -> EstimateReport:
    samples = collect(cfg)
    rows = _base_rows(cfg, samples)
    prev = None
    for i, (r, reps) in enumerate(samples.items()):
        rng = rng_for(cfg.seed, i, BOOT_STREAM)
        lo, hi = bootstrap_variance_ci([rep.phi_value for rep in reps], cfg.bootstrap, rng)
        area = rows[r]["window_area"]
        rows[r]["variance_density_ci"] = (lo / area, hi / area)
        d = rows[r]["variance_density"]
        rows[r]["ratio_to_previous"] = d / prev if prev not in (None, 0.0) else None
        prev = d
    return EstimateReport("variance", cfg, rows, samples)


def run_clt(cfg: ExperimentConfig, n_boot: int = 200) -> EstimateReport:
    samples = collect(cfg)
    rows = _base_rows(cfg, samples)
    boots = {}
    for i, (r, reps) in enumerate(samples.items()):
        x = [rep.phi_value for rep in reps]
        rows[r]["ks"] = ks_normal(x)
        rows[r]["skewness"] = float(stats.skew(x))
        b = bootstrap_ks(x, n_boot, rng_for(cfg.seed, i, BOOT_STREAM + 1))
        boots[r] = b
        rows[r]["ks_ci"] = tuple(float(q) for q in np.quantile(b, [0.025, 0.975]))
    extras = {"ks_bootstrap": boots}
    if len(cfg.r_values) >= 2:
        slope = np.polyfit(np.log(cfg.r_values), np.log([rows[r]["ks"] for r in cfg.r_values]), 1)[0]
        extras["log_ks_slope"] = float(slope)
    return EstimateReport("clt", cfg, rows, samples, extras)


# -- truncated asymptotic variance ----------------------------------------------

@dataclass(frozen=True)
class Sigma0Estimate:
    value: float
    se: float
    terms: tuple[float, ...]
    term_se: tuple[float, ...]
    n_outer: int
    n_inner: int

    def ci(self, z: float = 3.0) -> tuple[float, float]:
        return self.value - z * self.se, self.value + z * self.se


def _phi(cfg: ExperimentConfig, s: Sample, window: ConvexBody) -> float:
    if window.is_empty or window.dim != 2:
        return 0.0
    return cfg.functional(ivols_of_window(s, cfg.marks, cfg.u, window, cfg.engine_policy, cfg.raster).ivols)


def difference(cfg: ExperimentConfig, s: Sample, added: Sequence[MarkedPoint], window: ConvexBody) -> float:
    """Iterated add-one cost ``D^n phi(Z_u in window)``."""
    n = len(added)
    terms = []
    for k in range(n + 1):
        for sub in itertools.combinations(added, k):
            terms.append((-1) ** (n - k) * _phi(cfg, s.extended(list(sub)), window))
    return math.fsum(terms)


def _debiased_square(d: np.ndarray) -> float:
    """Unbiased estimate of ``(E D)^2``: the mean over ordered pairs i != j of ``D_i D_j``."""
    n = len(d)
    tot = math.fsum(d)
    sq = math.fsum(d * d)
    return (tot * tot - sq) / (n * (n - 1))


def estimate_sigma0_truncated(cfg: ExperimentConfig, n_terms: int = 1, n_outer: int = 40, n_inner: int = 50,
                              inner_gamma: float | None = None) -> Sigma0Estimate:
    """First ``n_terms`` (1 or 2) terms of the chaos series for the limiting variance density.

    Nested Monte Carlo: the outer level draws the marks (and for the second term
    a relative position over the overlap region, weighted by its area); the
    inner level averages the difference operator over fresh realizations of the
    process restricted to the common support.
    """
    if n_terms not in (1, 2):
        raise ValueError("only the first two series terms are supported")
    if n_inner < 2 or n_outer < 2:
        raise ValueError("need at least two outer and two inner samples")
    g = cfg.gamma
    ig = g if inner_gamma is None else float(inner_gamma)
    inner_cfg = replace(cfg, gamma=ig)
    probs = cfg.marks.probs
    terms, term_se = [], []
    for n in range(1, n_terms + 1):
        vals = np.empty(n_outer)
        for i in range(n_outer):
            base = SIGMA0_BASE + n * 10**8 + i * 10**4
            rng = rng_for(cfg.seed, base, 1)
            m = int(rng.choice(len(probs), p=probs))
            Km = cfg.marks.kernel(m).support
            added = [MarkedPoint((0.0, 0.0), m)]
            K, weight = Km, 1.0
            if n == 2:
                m2 = int(rng.choice(len(probs), p=probs))
                K2 = cfg.marks.kernel(m2).support
                M = geo.minkowski_sum(Km, geo.reflect(K2))
                x = _uniform_in(M, rng)
                added.append(MarkedPoint(x, m2))
                K = geo.clip(Km, geo.translate(K2, x))
                weight = g * geo.area(M)
            if K.is_empty or K.dim != 2:
                vals[i] = 0.0
                continue
            d = np.array([difference(inner_cfg, draw(inner_cfg, K, base + j), added, K) for j in range(n_inner)])
            vals[i] = weight * _debiased_square(d)
        c = g / math.factorial(n)
        terms.append(c * math.fsum(vals) / n_outer)
        term_se.append(c * float(np.std(vals, ddof=1)) / math.sqrt(n_outer))
    return Sigma0Estimate(math.fsum(terms), math.sqrt(math.fsum(s * s for s in term_se)), tuple(terms),
                          tuple(term_se), n_outer, n_inner)


def _uniform_in(body: ConvexBody, rng: np.random.Generator) -> tuple[float, float]:
    x0, y0, x1, y1 = body.bbox()
    hps = body.halfplanes()
    while True:
        x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
        if all(h.a * x + h.b * y <= h.c + geo.EPS for h in hps):
            return float(x), float(y)


# -- positivity -----------------------------------------------------------------

@dataclass(frozen=True)
class PositivityCase:
    name: str
    variance_density: float
    se: float
    raster_biased: bool

    @property
    def z(self) -> float:
        return self.variance_density / self.se if self.se > 0 else (math.inf if self.variance_density > 0 else 0.0)

    @property
    def positive(self) -> bool:
        return self.z >= 3.0


@dataclass(frozen=True)
class PositivityReport:
    cases: tuple[PositivityCase, ...]

    @property
    def holds(self) -> bool:
        return all(c.positive for c in self.cases)

    def to_json(self) -> dict:
        return {"holds": self.holds, "cases": [
            {"name": c.name, "variance_density": c.variance_density, "se": c.se, "z": c.z,
             "positive": c.positive, "raster_biased": c.raster_biased} for c in self.cases]}


def run_positivity_probe(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig) -> PositivityReport:
    """Variance density at the largest window for a threshold-reaching and a sub-threshold kernel family."""
    cases = []
    for name, cfg in (("a", cfg_a), ("b", cfg_b)):
        if cfg.functional.is_zero:
            raise ConfigError("the zero functional has zero variance by construction")
        last = replace(cfg, r_values=(cfg.r_values[-1],))
        rep = run_variance_scaling(last)
        row = rep.rows[last.r_values[0]]
        biased = cfg.engine_policy == "raster_only" or not cfg.marks.is_exact
        cases.append(PositivityCase(name, row["variance_density"], row["variance_density_se"], biased))
    return PositivityReport(tuple(cases))


# -- the non-standard example -----------------------------------------------------

@dataclass(frozen=True)
class Example42Report:
    p: float
    u: float
    deterministic: dict
    counts: dict
    partial_sums: list

    def to_json(self) -> dict:
        return {"p": self.p, "u": self.u, "deterministic": {str(k): v for k, v in self.deterministic.items()},
                "counts": {str(k): v for k, v in self.counts.items()}, "partial_sums": self.partial_sums}

    @property
    def holds(self) -> bool:
        det = all(v["components"] == v["expected"] for v in self.deterministic.values())
        mono = all(b >= a for a, b in zip(self.partial_sums, self.partial_sums[1:]))
        return det and mono


def example42_configuration(i: int) -> Sample:
    """``2i`` points, one centred in each strip of index ``i``; atom ``2i-2`` is vertical, ``2i-1`` horizontal."""
    if i < 1:
        raise ValueError("strip index starts at 1")
    cs = [(4 * k - 3) / (2 * (2 * i - 1)) for k in range(1, i + 1)]
    pos = [(c, 0.5) for c in cs] + [(0.5, c) for c in cs]
    marks = [2 * i - 2] * i + [2 * i - 1] * i
    return Sample(np.array(pos, dtype=float), np.array(marks, dtype=np.int64))


def run_example42(p: float, i_list: Sequence[int] = (2, 3), deterministic: bool = True, n_samples: int = 0,
                  u: float = 1.0, seed: int = 0) -> Example42Report:
    if not 0.0 < p < 1.0:
        raise ValueError("geometric parameter must lie in (0, 1)")
    k_max = max(2 * max(i_list, default=1), 2)
    marks = example42_marks(p, u, max(k_max, 40))
    cube = ConvexBody.box(0.0, 0.0, 1.0, 1.0)
    det = {}
    if deterministic:
        for i in i_list:
            region = decompose(example42_configuration(i), marks, u, cube, n_max=10**9)
            det[i] = {"components": count_components(region), "expected": i * i, "pieces": count_N_upper(region)}
    counts: dict[int, int] = {}
    for k in range(n_samples):
        s = sample_process(ProcessConfig(1.0, marks, cube, seed, EXAMPLE42_BASE + k))
        nu = count_N_upper(decompose(s, marks, u, cube, n_max=10**9)) if len(s) else 0
        counts[nu] = counts.get(nu, 0) + 1
    partial, acc = [], []
    for nval in sorted(counts):
        acc.append(2.0 ** nval * counts[nval] / n_samples)
        partial.append(math.fsum(acc))
    return Example42Report(p, u, det, dict(sorted(counts.items())), partial)
