"""Command-line entry point: run pipelines from JSON configs and write CSV/JSON reports."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import experiments as ex
from . import geometry as geo
from .excursion import ExactEngineOverflow
from .fock import run_battery
from .functionals import POLICIES

OK, CONFIG_ERROR, OVERFLOW, VERIFY_FAILED = 0, 2, 3, 4


class VerificationFailed(RuntimeError):
    pass


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def _load(args, path=None) -> ex.ExperimentConfig:
    path = path or args.config
    if not path:
        raise ex.ConfigError("--config is required for this subcommand")
    cfg = ex.load_config(path)
    over = {}
    seed = args.seed
    if seed is None and os.environ.get("EXCURSION_SEED"):
        try:
            seed = int(os.environ["EXCURSION_SEED"])
        except ValueError as exc:
            raise ex.ConfigError("EXCURSION_SEED must be an integer") from exc
    if seed is not None:
        over["seed"] = seed
    if args.threads is not None:
        over["threads"] = args.threads
    if args.engine is not None:
        over["engine_policy"] = args.engine
    if args.raster_eps is not None:
        over["raster_eps"] = args.raster_eps
    return replace(cfg, **over) if over else cfg


def _emit(report, outdir) -> None:
    for line in report.summary_lines():
        print(line)
    for path in report.write(outdir):
        print(f"wrote {path}")


def _write_json(outdir, name, payload) -> str:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    with open(path, "w") as fh:
        json.dump(ex._jsonable(payload), fh, indent=2, sort_keys=True)
    return path


# -- verification suites ----------------------------------------------------------

def random_polygon(rng: np.random.Generator, n: int = 8, scale: float = 1.0) -> geo.ConvexBody:
    while True:
        body = geo.convex_hull(rng.uniform(-scale, scale, (n, 2)).tolist())
        if body.dim == 2:
            return body


def verify_geometry(seed: int = 0, n_polys: int = 100, n_mc: int = 20000) -> dict:
    rng = np.random.default_rng(seed)
    worst_steiner = 0.0
    for _ in range(n_polys):
        k = random_polygon(rng)
        iv = geo.intrinsic_volumes(k)
        for r in (0.1, 0.5, 2.0):
            d = abs(geo.steiner_volume(k, r) - (iv.v2 + 2 * iv.v1 * r + math.pi * r * r))
            worst_steiner = max(worst_steiner, d)
    worst_z = 0.0
    for _ in range(5):
        a, b = random_polygon(rng), random_polygon(rng)
        box = geo.minkowski_sum(b, geo.reflect(a))
        x0, y0, x1, y1 = box.bbox()
        xs = rng.uniform((x0, y0), (x1, y1), (n_mc, 2))
        vals = np.array([geo.area(geo.clip(geo.translate(a, x), b)) for x in xs]) * (x1 - x0) * (y1 - y0)
        z = abs(vals.mean() - geo.area(a) * geo.area(b)) / (vals.std(ddof=1) / math.sqrt(n_mc))
        worst_z = max(worst_z, z)
    ok = bool(worst_steiner < 1e-9 and worst_z < 4.0)
    return {"ok": ok, "steiner_max_error": worst_steiner, "translative_max_z": worst_z}


def verify_fock() -> dict:
    res = run_battery()
    bad = [r.name for r in res if not r.ok]
    return {"ok": not bad, "cases": len(res), "failed": bad,
            "max_fock_error": max(r.fock_error for r in res),
            "min_slack": min(rp.slack for r in res for rp in r.reverse_poincare if not rp.hypothesis_violated)}


# -- dispatch ---------------------------------------------------------------------

def _run(args) -> int:
    cmd = args.command
    out = args.out
    if cmd == "verify-fock":
        rep = verify_fock()
        print(f"verify-fock cases={rep['cases']} max_fock_error={rep['max_fock_error']:.3e} "
              f"min_slack={rep['min_slack']:.3e} ok={rep['ok']}")
        print(f"wrote {_write_json(out, 'verify-fock.json', rep)}")
        if not rep["ok"]:
            raise VerificationFailed(f"failed cases: {rep['failed']}")
        return OK
    if cmd == "verify-geometry":
        rep = verify_geometry(args.seed or 0)
        print(f"verify-geometry steiner_max_error={rep['steiner_max_error']:.3e} "
              f"translative_max_z={rep['translative_max_z']:.3f} ok={rep['ok']}")
        print(f"wrote {_write_json(out, 'verify-geometry.json', rep)}")
        if not rep["ok"]:
            raise VerificationFailed("geometry suite failed")
        return OK
    if cmd == "example42":
        rep = ex.run_example42(args.p, tuple(args.i), deterministic=not args.stochastic_only,
                               n_samples=args.samples, seed=args.seed or 0)
        for i, row in rep.deterministic.items():
            print(f"example42 i={i} components={row['components']} expected={row['expected']}")
        if rep.partial_sums:
            print(f"example42 samples={args.samples} max_count={max(rep.counts)} "
                  f"partial_sum={rep.partial_sums[-1]:.6g}")
        print(f"wrote {_write_json(out, 'example42.json', rep.to_json())}")
        if not rep.holds:
            raise VerificationFailed("example42 construction did not reproduce")
        return OK

    cfg = _load(args)
    if cmd == "simulate":
        samples = ex.collect(cfg)
        _emit(ex.EstimateReport("simulate", cfg, ex._base_rows(cfg, samples), samples), out)
    elif cmd == "expectation":
        _emit(ex.run_expectation_scaling(cfg), out)
    elif cmd == "variance":
        _emit(ex.run_variance_scaling(cfg), out)
    elif cmd == "clt":
        _emit(ex.run_clt(cfg), out)
    elif cmd == "sigma0":
        est = ex.estimate_sigma0_truncated(cfg, args.terms, n_outer=args.outer, n_inner=args.inner)
        lo, hi = est.ci()
        print(f"sigma0 terms={args.terms} estimate={est.value:.6g} se={est.se:.3g} ci3=({lo:.6g},{hi:.6g})")
        payload = {"config_hash": cfg.config_hash(), "seed": cfg.seed, "estimate": est.value, "se": est.se,
                   "terms": list(est.terms), "term_se": list(est.term_se),
                   "n_outer": est.n_outer, "n_inner": est.n_inner}
        print(f"wrote {_write_json(out, f'sigma0-{cfg.config_hash()}.json', payload)}")
    elif cmd == "positivity":
        if not args.config_b:
            raise ex.ConfigError("positivity needs --config-b for the sub-threshold case")
        rep = ex.run_positivity_probe(cfg, _load(args, args.config_b))
        for c in rep.cases:
            print(f"positivity case={c.name} variance_density={c.variance_density:.6g} se={c.se:.3g} "
                  f"z={c.z:.2f} raster_biased={c.raster_biased}")
        print(f"wrote {_write_json(out, 'positivity.json', rep.to_json())}")
        if not rep.holds:
            raise VerificationFailed("variance density not positive by 3 standard errors")
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="excursionlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    cmds = ("simulate", "expectation", "variance", "sigma0", "clt", "positivity", "example42",
            "verify-fock", "verify-geometry")
    for name in cmds:
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--out", default="results")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--engine", choices=POLICIES)
        sp.add_argument("--raster-eps", type=float)
        if name == "sigma0":
            sp.add_argument("--terms", type=int, default=1)
            sp.add_argument("--outer", type=int, default=40)
            sp.add_argument("--inner", type=int, default=50)
        if name == "positivity":
            sp.add_argument("--config-b")
        if name == "example42":
            sp.add_argument("--p", type=float, default=0.9)
            sp.add_argument("--i", type=int, nargs="+", default=[2, 3])
            sp.add_argument("--samples", type=int, default=0)
            sp.add_argument("--stochastic-only", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return OK
        return _fail("usage", "invalid command line", CONFIG_ERROR)
    try:
        return _run(args)
    except ex.ConfigError as exc:
        return _fail("config", str(exc), CONFIG_ERROR)
    except ExactEngineOverflow as exc:
        return _fail("overflow", str(exc), OVERFLOW)
    except VerificationFailed as exc:
        return _fail("verification", str(exc), VERIFY_FAILED)
    except (ValueError, geo.GeometryError) as exc:
        return _fail("config", str(exc), CONFIG_ERROR)


if __name__ == "__main__":
    sys.exit(main())
