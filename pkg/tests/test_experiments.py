import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from excursionlab import experiments as ex
from excursionlab.experiments import ConfigError, ExperimentConfig
from excursionlab.functionals import AREA, GeometricFunctional
from excursionlab.geometry import ConvexBody
from excursionlab.process import MarkDistribution, parabolic_cap, rng_for


@pytest.fixture(scope="module")
def boolean_cfg(square_marks):
    return ExperimentConfig("boolean", 1.0, square_marks, 1.0, AREA, (3.0, 6.0), 60, tag="boolean")


@pytest.fixture(scope="module")
def cone_cfg(cone_marks):
    return ExperimentConfig("cone", 0.5, cone_marks, 0.5, AREA, (3.0, 5.0), 30)


# -- configuration ------------------------------------------------------------------

def test_config_validation(cone_marks):
    base = dict(name="x", gamma=1.0, marks=cone_marks, u=0.5, functional=AREA, r_values=(1.0, 2.0), replications=5)
    ExperimentConfig(**base)
    for bad in (dict(r_values=(2.0, 1.0)), dict(r_values=(1.0, 1.0)), dict(r_values=(-1.0,)), dict(r_values=()),
                dict(replications=1), dict(gamma=-1.0), dict(gamma=math.inf), dict(u=0.0),
                dict(engine_policy="fast"), dict(raster_eps=0.0), dict(threads=0),
                dict(base_window=ConvexBody.box(0, 0, 1, 0))):
        with pytest.raises(ConfigError):
            ExperimentConfig(**{**base, **bad})


def test_config_json_roundtrip(cone_cfg, tmp_path):
    d = json.loads(json.dumps(cone_cfg.to_json()))
    back = ExperimentConfig.from_json(d)
    assert back.to_json() == cone_cfg.to_json()
    assert back.config_hash() == cone_cfg.config_hash()
    assert replace(cone_cfg, threads=3).config_hash() == cone_cfg.config_hash()
    assert replace(cone_cfg, seed=1).config_hash() != cone_cfg.config_hash()
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    assert ex.load_config(p).config_hash() == cone_cfg.config_hash()
    # a report mirror reloads the same experiment
    p.write_text(json.dumps({"experiment": "variance", "config": d}))
    assert ex.load_config(p).config_hash() == cone_cfg.config_hash()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        ex.load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ex.load_config(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ex.load_config(tmp_path / "list.json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json({"gamma": 1.0})


def test_window_area(cone_cfg):
    for r in (1.0, 2.5, 7.0):
        assert ex.geo.area(cone_cfg.window(r)) == pytest.approx(r * r)


# -- statistics ---------------------------------------------------------------------

def test_sample_stats_examples():
    st_ = ex.sample_stats([1.0, 2.0, 3.0, 4.0])
    assert st_["mean"] == 2.5 and st_["variance"] == pytest.approx(5 / 3) and st_["n"] == 4
    assert st_["se_mean"] == pytest.approx(math.sqrt(5 / 12))


def test_variance_se_calibrated():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 2, (400, 200))
    v = x.var(axis=1, ddof=1)
    se = np.array([ex.sample_stats(row)["se_variance"] for row in x])
    # normal data: SE of the sample variance is about sigma^2 sqrt(2/(n-1))
    assert np.median(se) == pytest.approx(4 * math.sqrt(2 / 199), rel=0.1)
    assert abs(v.mean() - 4) < 3 * v.std() / math.sqrt(len(v))


def test_ks_normal():
    rng = np.random.default_rng(1)
    assert ex.ks_normal(rng.normal(size=2000)) < 0.03
    assert ex.ks_normal(rng.exponential(size=2000)) > 0.05
    with pytest.raises(ValueError):
        ex.ks_normal([1.0, 1.0, 1.0])


def test_bootstrap_ci_covers():
    rng = np.random.default_rng(2)
    x = rng.normal(0, 1, 300)
    lo, hi = ex.bootstrap_variance_ci(x, 500, rng_for(0, 0, 7))
    assert lo < np.var(x, ddof=1) < hi


# -- replications -------------------------------------------------------------------

def test_replication_deterministic(cone_cfg):
    a = ex.replicate(cone_cfg, 3.0, 17)
    b = ex.replicate(cone_cfg, 3.0, 17)
    assert (a.phi_value, a.n_points) == (b.phi_value, b.n_points)
    c = ex.replicate(replace(cone_cfg, seed=5), 3.0, 17)
    assert (c.phi_value, c.n_points) != (a.phi_value, a.n_points)


def test_threads_equivalence(cone_cfg):
    small = replace(cone_cfg, replications=8)
    one = ex.collect(small)
    two = ex.collect(replace(small, threads=2))
    for r in small.r_values:
        assert [x.phi_value for x in one[r]] == [x.phi_value for x in two[r]]
        assert [x.replication_id for x in one[r]] == sorted(x.replication_id for x in one[r])


def test_zero_intensity(cone_cfg):
    z = replace(cone_cfg, gamma=0.0)
    rep = ex.run_variance_scaling(z)
    for row in rep.rows.values():
        assert row["variance"] == 0.0 and row["mean"] == 0.0
    with pytest.raises(ValueError):
        ex.run_clt(z)


def test_expectation_boolean(boolean_cfg):
    rep = ex.run_expectation_scaling(boolean_cfg)
    target = 1 - math.exp(-1.0)
    assert rep.extras["analytic_density"] == pytest.approx(target)
    for r, row in rep.rows.items():
        assert row["n"] == boolean_cfg.replications
        assert row["window_area"] == pytest.approx(r * r)
        assert abs(row["mean_density"] - target) < 3 * row["mean_density_se"]


def test_expectation_small_intensity(square_marks):
    cfg = ExperimentConfig("thin", 1e-3, square_marks, 1.0, AREA, (5.0,), 20, tag="boolean")
    rep = ex.run_expectation_scaling(cfg)
    assert rep.rows[5.0]["mean_density"] < 0.02
    assert rep.extras["analytic_density"] == pytest.approx(1 - math.exp(-1e-3))


def test_cube_estimator(cone_cfg):
    cfg = replace(cone_cfg, cube_replications=200, r_values=(3.0,), replications=2)
    rep = ex.run_expectation_scaling(cfg)
    cube = rep.extras["cube"]
    assert cube["n"] == 200 and 0 <= cube["mean"] <= 1
    assert len(rep.samples[-1.0]) == 200


def test_variance_sensitivity(square_marks):
    # Boolean covariance e^{-2g} (e^{g A(x)} - 1) integrates to about 0.047 at g = 0.05 and 0.17 at g = 1
    lo = ExperimentConfig("b", 0.05, square_marks, 1.0, AREA, (6.0,), 200, tag="boolean", bootstrap=200)
    hi = replace(lo, gamma=1.0)
    a = ex.run_variance_scaling(lo).rows[6.0]
    b = ex.run_variance_scaling(hi).rows[6.0]
    assert a["variance"] >= 0 and b["variance"] >= 0
    assert abs(a["variance_density"] - b["variance_density"]) > 3 * math.hypot(a["variance_density_se"],
                                                                               b["variance_density_se"])
    lo_ci, hi_ci = a["variance_density_ci"]
    assert lo_ci <= a["variance_density"] <= hi_ci


def test_clt_fields(cone_cfg):
    rep = ex.run_clt(replace(cone_cfg, replications=40), n_boot=30)
    for row in rep.rows.values():
        assert 0 < row["ks"] < 1 and len(row["ks_ci"]) == 2
    assert "log_ks_slope" in rep.extras and len(rep.extras["ks_bootstrap"][3.0]) == 30


# -- truncated series ---------------------------------------------------------------

def test_sigma0_oracle(square_marks):
    cfg = ExperimentConfig("b", 0.7, square_marks, 1.0, AREA, (1.0,), 2, tag="boolean")
    est = ex.estimate_sigma0_truncated(cfg, 1, n_outer=5, n_inner=4, inner_gamma=0.0)
    # without interaction D phi = V2(K) = 1 for every draw
    assert est.value == pytest.approx(0.7, abs=1e-12) and est.se == pytest.approx(0.0, abs=1e-12)


def test_sigma0_second_term_oracle(square_marks):
    cfg = ExperimentConfig("b", 0.7, square_marks, 1.0, AREA, (1.0,), 2, tag="boolean")
    est = ex.estimate_sigma0_truncated(cfg, 2, n_outer=400, n_inner=2, inner_gamma=0.0)
    # D^2 V2 = -V2(K cap (K + x)); gamma^2/2 * int (1-|x|)^2 (1-|y|)^2 dx = gamma^2/2 * (2/3)^2
    expect = 0.7 ** 2 / 2 * (2 / 3) ** 2
    assert abs(est.terms[1] - expect) < 3.5 * est.term_se[1]
    assert est.terms[0] == pytest.approx(0.7)


def test_sigma0_errors(cone_cfg):
    with pytest.raises(ValueError):
        ex.estimate_sigma0_truncated(cone_cfg, 3)
    with pytest.raises(ValueError):
        ex.estimate_sigma0_truncated(cone_cfg, 1, n_inner=1)


def test_sigma0_terms_nonnegative(cone_cfg):
    est = ex.estimate_sigma0_truncated(cone_cfg, 2, n_outer=6, n_inner=6)
    lo, hi = est.ci()
    assert lo <= est.value <= hi
    # debiased squares can dip below zero only within their noise
    for t, se in zip(est.terms, est.term_se):
        assert t > -3 * se - 1e-12


def test_debiased_square_unbiased():
    rng = np.random.default_rng(3)
    vals = [ex._debiased_square(rng.normal(0.3, 1.0, 5)) for _ in range(20000)]
    assert abs(np.mean(vals) - 0.09) < 4 * np.std(vals) / math.sqrt(len(vals))


# -- positivity ---------------------------------------------------------------------

def test_positivity(square_marks):
    a = ExperimentConfig("a", 1.0, square_marks, 1.0, AREA, (4.0,), 40, tag="boolean", bootstrap=50)
    b = ExperimentConfig("b", 1.0, MarkDistribution.single(parabolic_cap(1.0, 0.9)), 1.0, AREA, (4.0,), 40,
                         raster_eps=1 / 32, bootstrap=50)
    rep = ex.run_positivity_probe(a, b)
    assert rep.holds
    assert [c.raster_biased for c in rep.cases] == [False, True]
    assert json.loads(json.dumps(rep.to_json()))["holds"] is True
    with pytest.raises(ConfigError):
        ex.run_positivity_probe(replace(a, functional=GeometricFunctional((0, 0, 0))), b)


# -- the non-standard example ---------------------------------------------------------

def test_example42_deterministic():
    rep = ex.run_example42(0.9, (2, 3))
    assert rep.deterministic[2]["components"] == 4
    assert rep.deterministic[3]["components"] == 9
    assert rep.holds


def test_example42_stochastic():
    rep = ex.run_example42(0.9, (2,), deterministic=False, n_samples=40, seed=0)
    assert sum(rep.counts.values()) == 40
    assert all(b >= a for a, b in zip(rep.partial_sums, rep.partial_sums[1:]))
    for p in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            ex.run_example42(p)


def test_example42_configuration_layout():
    s = ex.example42_configuration(3)
    assert len(s) == 6
    assert s.positions[:3, 0] == pytest.approx([(4 * k - 3) / 10 for k in (1, 2, 3)])
    with pytest.raises(ValueError):
        ex.example42_configuration(0)


# -- reports ------------------------------------------------------------------------

def test_report_files(boolean_cfg, tmp_path):
    cfg = replace(boolean_cfg, replications=5)
    rep = ex.run_expectation_scaling(cfg)
    paths = rep.write(tmp_path)
    h = cfg.config_hash()
    assert [p.split("/")[-1] for p in paths] == [f"expectation-{h}.csv", f"expectation-{h}-summary.csv",
                                                 f"expectation-{h}.json"]
    with open(paths[0]) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["r", "replication_id", "phi_value", "n_points", "engine_used", "wall_ms", "seed"]
    assert len(rows) == 10
    assert float(rows[0]["phi_value"]) == rep.samples[3.0][0].phi_value
    mirror = json.load(open(paths[2]))
    assert mirror["config_hash"] == h and mirror["seed"] == cfg.seed
    assert any("analytic=" in line for line in rep.summary_lines())


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50))
@settings(max_examples=50)
def test_variance_nonnegative(xs):
    assert ex.sample_stats(xs)["variance"] >= 0
