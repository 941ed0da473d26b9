"""Acceptance criteria 1 to 15, each reporting one PASS/FAIL line."""
import math
import os
import subprocess
import sys
import time

import numpy as np

from excursionlab import experiments as ex
from excursionlab import geometry as geo
from excursionlab.excursion import decompose, membership, boundary_distance
from excursionlab.fock import c_alpha_k, check_localization, run_battery
from excursionlab.functionals import (AREA, EULER, GeometricFunctional, RasterConfig, ivols_halfopen_cube,
                                      ivols_of_window)
from excursionlab.geometry import ConvexBody
from excursionlab.process import (MarkDistribution, MarkedPoint, ProcessConfig, cone_linf, field_values,
                                  indicator, sample_process)

from conftest import random_polygon, record

HERE = os.path.dirname(os.path.abspath(__file__))
SQUARE = MarkDistribution.single(indicator(ConvexBody.box(-0.5, -0.5, 0.5, 0.5), 1.0))
CONE = MarkDistribution.single(cone_linf(1.0, 1.0))
BASIS = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
_cache: dict = {}


def boolean_cfg(r_values, reps=200):
    return ex.ExperimentConfig("boolean", 1.0, SQUARE, 1.0, AREA, r_values, reps, tag="boolean")


def baseline_cfg(f, r_values, reps, **kw):
    return ex.ExperimentConfig("baseline", 0.5, CONE, 0.5, f, r_values, reps, **kw)


def boolean_densities(r):
    key = ("boolean", r)
    if key not in _cache:
        t0 = time.perf_counter()
        rep = ex.run_expectation_scaling(boolean_cfg((r,)))
        _cache[key] = (rep.rows[r], time.perf_counter() - t0)
    return _cache[key]


def test_a1_boolean_volume_fraction():
    row, secs = boolean_densities(20.0)
    target = 1 - math.exp(-1.0)
    z = abs(row["mean_density"] - target) / row["mean_density_se"]
    ok = z <= 3 and secs < 60
    record(1, ok, f"mean={row['mean_density']:.5f} target={target:.6f} z={z:.2f} runtime={secs:.1f}s")
    assert ok


def test_a2_r_independence():
    a, _ = boolean_densities(10.0)
    b, _ = boolean_densities(20.0)
    se = math.hypot(a["mean_density_se"], b["mean_density_se"])
    z = abs(a["mean_density"] - b["mean_density"]) / se
    ok = z <= 3
    record(2, ok, f"r=10 {a['mean_density']:.5f} r=20 {b['mean_density']:.5f} z={z:.2f}")
    assert ok


def test_a3_window_vs_cube_estimator():
    cfg = baseline_cfg(AREA, (20.0,), 400, cube_replications=2000)
    w = cfg.window(20.0)
    win = np.array([ivols_of_window(ex.draw(cfg, w, k), CONE, 0.5, w).ivols.as_tuple() for k in range(400)])
    win /= geo.area(w)
    half = 0.5 * (1.0 + 2.0 * CONE.max_circumradius + 2.0)
    box = ConvexBody.box(0.5 - half, 0.5 - half, 0.5 + half, 0.5 + half)
    cube = np.array([ivols_halfopen_cube(ex.draw(cfg, box, ex.CUBE_BASE + k), CONE, 0.5, (0, 0)).as_tuple()
                     for k in range(cfg.cube_replications)])
    parts, ok = [], True
    for alpha in BASIS:
        f = GeometricFunctional(alpha)
        a, b = win @ f.alpha, cube @ f.alpha
        se = math.hypot(a.std(ddof=1) / math.sqrt(len(a)), b.std(ddof=1) / math.sqrt(len(b)))
        z = abs(a.mean() - b.mean()) / se
        ok &= z <= 3
        parts.append(f"alpha={tuple(int(x) for x in alpha)} window={a.mean():.4f} cube={b.mean():.4f} z={z:.1f}")
    record(3, ok, "; ".join(parts))
    assert ok


def test_a4_steiner():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        k = random_polygon(rng)
        iv = geo.intrinsic_volumes(k)
        for r in (0.1, 0.7, 3.0):
            worst = max(worst, abs(geo.steiner_volume(k, r) - (iv.v2 + 2 * iv.v1 * r + math.pi * r * r)))
    ok = worst < 1e-9
    record(4, ok, f"max |delta|={worst:.2e} over 300 cases")
    assert ok


def test_a5_translative_formula():
    rng = np.random.default_rng(5)
    n = 100_000
    worst = 0.0
    for _ in range(10):
        k1, k2 = random_polygon(rng), random_polygon(rng, center=rng.uniform(-0.5, 0.5, 2))
        x0, y0, x1, y1 = geo.minkowski_sum(k2, geo.reflect(k1)).bbox()
        xs = rng.uniform((x0, y0), (x1, y1), (n, 2))
        vals = np.array([geo.area(geo.clip(geo.translate(k1, x), k2)) for x in xs]) * (x1 - x0) * (y1 - y0)
        z = abs(vals.mean() - geo.area(k1) * geo.area(k2)) / (vals.std(ddof=1) / math.sqrt(n))
        worst = max(worst, z)
    ok = worst <= 3
    record(5, ok, f"max z={worst:.2f} over 10 pairs x {n} samples")
    assert ok


def test_a6_pointwise_membership(mixed_marks):
    window = ConvexBody.box(0, 0, 3, 3)
    bad = total = 0
    for k in range(50):
        s = sample_process(ProcessConfig(0.3, mixed_marks, window, 6, k))
        u = (0.2, 0.5, 0.8, 1.1)[k % 4]
        region = decompose(s, mixed_marks, u, window)
        ys = np.random.default_rng(k).uniform(0, 3, (10_000, 2))
        truth = field_values(s, mixed_marks, ys) >= u
        got = membership(region, ys)
        shell = boundary_distance(region, ys) <= geo.EPS
        for b in s.supports(mixed_marks):
            for hp in b.halfplanes():
                shell |= np.abs(hp.a * ys[:, 0] + hp.b * ys[:, 1] - hp.c) <= geo.EPS
        bad += int(np.sum(truth[~shell] != got[~shell]))
        total += int(np.sum(~shell))
    ok = bad == 0
    record(6, ok, f"{bad} disagreements on {total} points outside shells")
    assert ok


def test_a7_exact_vs_raster():
    eps = 1.0 / 128.0
    window = ConvexBody.box(0, 0, 4, 4)
    v0_equal = v1_ok = v2_ok = 0
    worst_v1 = worst_v2 = 0.0
    for k in range(50):
        s = sample_process(ProcessConfig(0.5, CONE, window, 7, k))
        a = ivols_of_window(s, CONE, 0.5, window, "exact_only").ivols
        b = ivols_of_window(s, CONE, 0.5, window, "raster_only", RasterConfig(eps)).ivols
        v0_equal += round(a.v0) == round(b.v0)
        # boundary length is twice V1
        d2 = abs(a.v2 - b.v2) / max(2 * eps * 2 * a.v1, 1e-300) if a.v1 > 0 else abs(b.v2) / eps
        worst_v2 = max(worst_v2, d2)
        v2_ok += d2 <= 1
        d1 = abs(a.v1 - b.v1) / a.v1 if a.v1 > 0 else (0.0 if b.v1 == 0 else math.inf)
        worst_v1 = max(worst_v1, d1)
        v1_ok += d1 <= 0.1
    ok = v0_equal >= 48 and v1_ok == 50 and v2_ok == 50
    record(7, ok, f"V0 equal {v0_equal}/50, V1 within 10% {v1_ok}/50 (worst {worst_v1:.3f}), "
                  f"V2 within bound {v2_ok}/50 (worst {worst_v2:.2f} of bound)")
    assert ok


def test_a8_localization(mixed_marks):
    window = ConvexBody.box(0, 0, 3, 3)
    worst = 0.0
    for k in range(100):
        rng = np.random.default_rng(800 + k)
        s = sample_process(ProcessConfig(0.3, mixed_marks, window, 8, k))
        added = [MarkedPoint(tuple(rng.uniform(0.3, 2.7, 2)), int(rng.integers(0, 3)))
                 for _ in range(1 + k % 3)]
        f = GeometricFunctional(tuple(rng.uniform(-1, 1, 3)))
        worst = max(worst, check_localization(s, mixed_marks, 0.6, window, added, f).discrepancy)
    ok = worst < 1e-9
    record(8, ok, f"max discrepancy={worst:.2e} over 100 configurations")
    assert ok


def battery():
    if "battery" not in _cache:
        _cache["battery"] = run_battery(ks=(1, 2, 3))
    return _cache["battery"]


def test_a9_fock_identity():
    res = battery()
    worst = max(r.fock_error for r in res)
    ok = len(res) >= 20 and worst < 1e-10
    record(9, ok, f"{len(res)} cases, max |direct - series|={worst:.2e}")
    assert ok


def test_a10_reverse_poincare():
    res = battery()
    checked = [rp for r in res for rp in r.reverse_poincare if not rp.hypothesis_violated]
    worst = min(rp.slack for rp in checked)
    spots = c_alpha_k(2, 1) == 4 and c_alpha_k(1, 2) == 6
    ok = worst >= -1e-10 and spots and {rp.k for rp in checked} == {1, 2, 3}
    record(10, ok, f"{len(checked)} checks, min slack={worst:.3e}, c(2,1)={c_alpha_k(2, 1):g} c(1,2)={c_alpha_k(1, 2):g}")
    assert ok


def variance_report():
    if "variance" not in _cache:
        _cache["variance"] = ex.run_variance_scaling(baseline_cfg(AREA, (10.0, 20.0, 40.0), 400))
    return _cache["variance"]


def test_a11_variance_density_stabilizes():
    rows = variance_report().rows
    a, b = rows[20.0], rows[40.0]
    rel = abs(a["variance_density"] - b["variance_density"]) / b["variance_density"]
    (lo_a, hi_a), (lo_b, hi_b) = a["variance_density_ci"], b["variance_density_ci"]
    overlap = lo_a <= hi_b and lo_b <= hi_a
    ok = rel <= 0.15 and overlap
    dens = " ".join(f"r={r:g}:{rows[r]['variance_density']:.4f}" for r in (10.0, 20.0, 40.0))
    record(11, ok, f"{dens} rel(20,40)={rel:.3f} CIs overlap={overlap}")
    assert ok


def test_a12_sigma0_truncation_below_variance_density():
    row = variance_report().rows[40.0]
    cfg = baseline_cfg(AREA, (1.0,), 2)
    est = ex.estimate_sigma0_truncated(cfg, n_terms=1, n_outer=60, n_inner=40)
    vd = row["variance_density"]
    vd_se = row["variance_density_se"]
    bound = vd + 3 * math.hypot(est.se, vd_se)
    ok = est.value <= bound
    record(12, ok, f"sigma0(n=1)={est.value:.4f}+-{est.se:.4f} variance density={vd:.4f}+-{vd_se:.4f}")
    assert ok


def test_a13_clt():
    rep = ex.run_clt(baseline_cfg(EULER, (5.0, 30.0), 2000), n_boot=200)
    ks5, ks30 = rep.rows[5.0]["ks"], rep.rows[30.0]["ks"]
    boots = rep.extras["ks_bootstrap"]
    upper = float(np.quantile(boots[30.0] - boots[5.0], 0.95))
    ok = ks30 < 0.05 and ks30 < ks5 and upper < 0
    record(13, ok, f"KS(r=5)={ks5:.4f} KS(r=30)={ks30:.4f} bootstrap 95% upper bound of the difference={upper:.4f}")
    assert ok


def test_a14_example42():
    rep = ex.run_example42(0.9, (2, 3), deterministic=True, n_samples=200, seed=14)
    comps = {i: v["components"] for i, v in rep.deterministic.items()}
    mono = all(b >= a for a, b in zip(rep.partial_sums, rep.partial_sums[1:]))
    ok = comps == {2: 4, 3: 9} and mono and len(rep.partial_sums) > 1
    record(14, ok, f"components {comps}, {len(rep.partial_sums)} partial sums, monotone={mono}, "
                   f"last={rep.partial_sums[-1]:.3g}")
    assert ok


PROPERTY_TESTS = [
    "test_functionals.py::test_additivity",
    "test_functionals.py::test_translation_invariance",
    "test_geometry.py::test_translation_invariance",
    "test_geometry.py::test_homogeneity",
    "test_geometry.py::test_monotonicity",
    "test_geometry.py::test_clip_commutative_idempotent_dimension_monotone",
    "test_excursion.py::test_monotone_in_u",
    "test_excursion.py::test_dynamic_grid_examples",
    "test_excursion.py::test_dynamic_grid_tiles_and_parents",
]


def test_a15_property_suites():
    cmd = [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_TESTS]
    r = subprocess.run(cmd, cwd=HERE, capture_output=True, text=True)
    tail = r.stdout.strip().splitlines()[-1] if r.stdout.strip() else r.stderr.strip()[-200:]
    ok = r.returncode == 0
    record(15, ok, f"{len(PROPERTY_TESTS)} property suites: {tail}")
    assert ok, r.stdout[-3000:]
