import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from ricci import measure as ms
from ricci import metrics as mt
from ricci import qform as qf
from ricci.fields import random_plateau
from ricci.geometry import christoffel_from_metric
from ricci.quadrature import DEFAULT_SCHEME
from ricci.runner import cli, report as rp
from ricci.runner.config import load_config
from ricci.runner.scenarios import rotation_field

FEW = settings(max_examples=5, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
seeds = st.integers(0, 2 ** 31 - 1)
coef = st.floats(-2.0, 2.0, allow_nan=False)

SPHERE = mt.sphere_chart()
SPHERE_G = christoffel_from_metric(SPHERE)
CONE = mt.cone(2, 0.5)
CONE_G = christoffel_from_metric(CONE)


def pair(chart, seed):
    rng = np.random.default_rng(seed)
    return random_plateau(chart, rng), random_plateau(chart, rng)


def q(gamma, V, W):
    return qf.q_form(gamma, V, W, split=False)


@FEW
@given(seeds, seeds, coef, coef)
def test_bilinearity(s1, s2, a, b):
    V1, W = pair(SPHERE.chart, s1)
    V2, _ = pair(SPHERE.chart, s2)
    lhs = q(SPHERE_G, V1.combine(V2, a, b), W)
    r1, r2 = q(SPHERE_G, V1, W), q(SPHERE_G, V2, W)
    rhs = a * r1.value + b * r2.value
    tol = 1e-5 * (abs(a * r1.value) + abs(b * r2.value) + abs(lhs.value)) + 1e-9
    assert abs(lhs.value - rhs) <= tol


@FEW
@given(seeds)
def test_symmetry_on_the_cone(seed):
    V, W = pair(CONE.chart, seed)
    a, b = q(CONE_G, V, W), q(CONE_G, W, V)
    assert abs(a.value - b.value) <= 10 * (a.error + b.error) + 1e-9


@FEW
@given(seeds)
def test_flat_form_vanishes(seed):
    m = mt.flat(2)
    V, W = pair(m.chart, seed)
    assert abs(q(christoffel_from_metric(m), V, W).value) <= DEFAULT_SCHEME.abs_tol


@settings(max_examples=3, deadline=None)
@given(st.floats(0.5, 2.0))
def test_killing_field_has_nonnegative_form(r0):
    m = mt.sphere_chart(r0)
    g = christoffel_from_metric(m)
    V = rotation_field(m.chart, r0)
    assert qf.killing_defect(m, g, V, qf.grid_points(m.chart.lo, m.chart.hi, 5)) < 1e-8
    assert q(g, V, V).value >= -DEFAULT_SCHEME.abs_tol


@pytest.fixture(scope="module")
def cone_report():
    return ms.assemble_measure_report(CONE_G, config=ms.MeasureConfig(levels=3, pairs=0), metric=CONE)


@settings(max_examples=3, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(seeds)
def test_measure_pairing_matches_form(cone_report, seed):
    V, W = pair(CONE.chart, seed)
    direct = q(CONE_G, V, W).value
    paired, parts, _ = cone_report.pair(CONE_G, V, W)
    scale = abs(parts["atoms"]) + abs(parts["curves"]) + abs(parts["ac"])
    assert abs(direct - paired) <= 0.02 * max(scale, ms.PAIRING_FLOOR)


@settings(max_examples=2, deadline=None)
@given(st.integers(0, 1000))
def test_reports_are_deterministic(seed):
    cfg = load_config(None, [("seed", str(seed))])
    a, _ = cli.run_scenario("flat-2d", cfg, threads=1)
    b, _ = cli.run_scenario("flat-2d", load_config(None, [("seed", str(seed))]), threads=1)
    assert rp.dumps(rp.without_timing(a)) == rp.dumps(rp.without_timing(b))
