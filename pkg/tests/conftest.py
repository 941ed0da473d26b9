import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from excursionlab import geometry as geo
from excursionlab.process import MarkDistribution, Sample, cone_linf, indicator, pyramid

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_polygon(rng, n=8, scale=1.0, center=(0.0, 0.0)):
    while True:
        pts = rng.uniform(-scale, scale, (n, 2)) + np.asarray(center)
        body = geo.convex_hull(pts.tolist())
        if body.dim == 2 and geo.area(body) > 1e-3:
            return body


def random_sample(rng, n, lo, hi, n_marks=1):
    pos = rng.uniform(lo, hi, (n, 2))
    return Sample(pos, rng.integers(0, n_marks, n).astype(np.int64))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cone_marks():
    return MarkDistribution.single(cone_linf(1.0, 1.0))


@pytest.fixture(scope="session")
def mixed_marks():
    tri = geo.ConvexBody.from_vertices([(-0.8, -0.6), (0.9, -0.4), (0.1, 0.8)])
    return MarkDistribution(((cone_linf(1.0, 1.0), 0.5), (pyramid(tri, 0.8), 0.3),
                             (indicator(geo.ConvexBody.box(-0.4, -0.3, 0.4, 0.3), 0.7), 0.2)))


@pytest.fixture(scope="session")
def square_marks():
    return MarkDistribution.single(indicator(geo.ConvexBody.box(-0.5, -0.5, 0.5, 0.5), 1.0))


# acceptance criteria report one line each in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record(n, ok, detail):
    line = f"A{n:<2} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
