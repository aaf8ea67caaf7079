import math

import numpy as np
import pytest

from ricci import flow as fl
from ricci import metrics as mt
from ricci import qform as qf
from ricci.errors import SliceTamenessError
from ricci.fields import centered_plateau
from ricci.geometry import ChristoffelField, PointStratum, SingularSet, christoffel_from_metric
from ricci.measure import ac_density_grid

TIMES = [0.1, 0.2, 0.4]


def bump(chart, const, center=(0.0, 0.0), hw=0.6, ihw=0.3, linear=None):
    return centered_plateau(chart, center, hw, ihw, const, linear)


def sphere_pair(chart):
    V = bump(chart, (1.0, 0.5), (0.1, 0.0))
    W = bump(chart, (0.3, 1.0), (0.0, 0.2), 0.5, 0.2)
    return fl.static_field(V), fl.static_field(W)


def gated(chart):
    Vg = bump(chart, (0, 0), linear=np.array([[1.0, 0.3], [0.2, -0.5]]))
    Wg = bump(chart, (0, 0), hw=0.5, ihw=0.25, linear=np.array([[0.4, 1.0], [-0.7, 0.1]]))
    return fl.static_field(Vg), fl.static_field(Wg)


def test_time_domain_is_enforced():
    g = fl.shrinking_sphere()
    with pytest.raises(ValueError):
        g.at(0.5)
    with pytest.raises(ValueError):
        fl.TimeDependentMetric(lambda t: None, 0.0)
    V, W = sphere_pair(g.at(0).chart)
    with pytest.raises(ValueError):
        fl.flow_identity_residual(g, V, W, 0.1, start=0.2)


def test_static_flat_residual_vanishes():
    m = mt.flat(2)
    g = fl.static_metric(m, lambda t: 0.0)
    V, W = sphere_pair(m.chart)
    for t in TIMES:
        r = fl.flow_identity_residual(g, V, W, t)
        assert abs(r.residual) < 1e-6
    assert fl.tame_flow_check(g, [(V, W)], TIMES).verdict == "PASS"
    assert fl.cone_preserving_flow_check(g, [(V, W)], TIMES).verdict == "PASS"


def test_shrinking_sphere_is_a_ricci_flow():
    g = fl.shrinking_sphere()
    x = qf.grid_points((-1.2, -1.2), (1.2, 1.2), 5)
    for t in (0.0, 0.2, 0.4):
        ric = ac_density_grid(g.christoffel(t), x)
        assert np.allclose(g.dt_metric(t)(x), -2 * ric, rtol=1e-4, atol=1e-8)


def test_shrinking_sphere_residuals():
    g = fl.shrinking_sphere()
    V, W = sphere_pair(g.at(0).chart)
    for t in TIMES:
        r = fl.flow_identity_residual(g, V, W, t)
        assert abs(r.residual) < 1e-4 * r.scale
        assert r.rhs - r.lhs == pytest.approx(r.residual, abs=1e-14)
        b = r.breakdown
        assert r.residual == b["initial"] + b["dV"] + b["dW"] + b["q"] - b["final"]
    chk = fl.tame_flow_check(g, [(V, W)], TIMES)
    assert chk.passed and chk.notes == []
    assert fl.cone_preserving_flow_check(g, [(V, W)], TIMES).verdict == "PASS"


def test_time_dependent_fields_keep_identity():
    g = fl.shrinking_sphere()
    V0 = bump(g.at(0).chart, (1.0, 0.5), (0.1, 0.0))
    V = fl.TimeDependentField(lambda t: V0.combine(V0, 1.0 + t, 0.0), V0.support, V0.lipschitz * 2,
                              dt_coeffs=lambda t, x: V0(x))
    _, W = sphere_pair(g.at(0).chart)
    r = fl.flow_identity_residual(g, V, W, 0.3)
    assert r.breakdown["dV"] != 0.0
    assert abs(r.residual) < 1e-4 * r.scale


def test_time_order_convergence():
    g = fl.shrinking_sphere()
    V, W = sphere_pair(g.at(0).chart)
    a = fl.flow_identity_residual(g, V, W, 0.4, fl.FlowSchemes(time_order=4))
    b = fl.flow_identity_residual(g, V, W, 0.4, fl.FlowSchemes(time_order=8))
    bar = a.time_error + a.space_error
    assert abs(a.residual - b.residual) < 0.1 * bar + 1e-12


def test_restart_composition():
    g = fl.shrinking_sphere()
    V, W = sphere_pair(g.at(0).chart)
    whole = fl.flow_identity_residual(g, V, W, 0.4)
    first = fl.flow_identity_residual(g, V, W, 0.2)
    later = fl.flow_identity_residual(g, V, W, 0.4, start=0.2)
    assert later.passes
    assert abs(whole.residual - first.residual - later.residual) <= whole.tolerance


def test_static_cone_fails_linearly():
    alpha = 0.5
    m = mt.cone(2, alpha)
    g = fl.static_metric(m, lambda t: 0.0)
    V = fl.static_field(bump(m.chart, (1.0, 0.0)))
    times = [0.05, 0.1, 0.2, 0.4]
    chk = fl.tame_flow_check(g, [(V, V)], times)
    assert chk.verdict == "FAIL"
    res = [r.residual for _, r in chk.entries]
    q = qf.q_form(christoffel_from_metric(m), V.at(0), V.at(0), split=False).value
    slope, _, r2 = fl.linear_in_time_fit(times, res)
    assert r2 > 0.999
    assert slope == pytest.approx(-2 * q, rel=0.02)
    assert res[1] == pytest.approx(-4 * math.pi * alpha * 0.1, rel=0.02)


def test_sobolev_gate():
    flat = christoffel_from_metric(mt.flat(2))
    cone = christoffel_from_metric(mt.cone(2, 0.5))
    ch = mt.cone(2, 0.5).chart
    assert fl.sobolev_gate(flat, bump(ch, (1.0, 0.0))).finite
    bad = fl.sobolev_gate(cone, bump(ch, (1.0, 0.0)))
    assert not bad.finite and bad.as_dict()["value"] == math.inf
    Vg, _ = gated(ch)
    assert fl.sobolev_gate(cone, Vg.at(0)).finite


def test_cone_preserving_check_on_static_cone():
    m = mt.cone(2, 0.5)
    g = fl.static_metric(m, lambda t: 0.0)
    V = fl.static_field(bump(m.chart, (1.0, 0.0)))
    assert fl.cone_preserving_flow_check(g, [(V, V)], TIMES).verdict == "INCONCLUSIVE"
    chk = fl.cone_preserving_flow_check(g, [(V, V), gated(m.chart)], TIMES)
    assert chk.verdict == "PASS"
    assert chk.excluded == [0]
    for _, r in chk.entries:
        assert abs(r.residual) < 1e-5 * r.scale


def test_undeclared_lower_bound_is_flagged():
    m = mt.flat(2)
    g = fl.static_metric(m)
    V, W = sphere_pair(m.chart)
    assert "no lower-bound" in fl.tame_flow_check(g, [(V, W)], [0.1]).notes[0]


def test_non_tame_slice_raises():
    ch = mt.flat(2).chart

    def ev(x):
        a = 1.0 / np.linalg.norm(x, axis=-1)
        G = np.zeros(x.shape[:-1] + (2, 2, 2))
        G[..., 1, 0, 0] = a
        G[..., 0, 0, 1] = G[..., 0, 1, 0] = a
        return G

    gamma = ChristoffelField(ch, ev, SingularSet([PointStratum((0.0, 0.0))]), analytic=True)
    m = mt.flat(2)
    g = fl.TimeDependentMetric(lambda t: m, math.inf, static=True)
    object.__setattr__(g, "christoffel", lambda t: gamma)
    V = fl.static_field(bump(ch, (1.0, 0.0)))
    with pytest.raises(SliceTamenessError):
        fl.flow_identity_residual(g, V, V, 0.1)


def test_pulled_back_flow_is_tame():
    g = fl.pulled_back_flow(fl.shrinking_sphere(), mt.lipschitz_shear(0.3))
    V, W = sphere_pair(g.at(0).chart)
    assert fl.tame_flow_check(g, [(V, W)], [0.2]).verdict == "PASS"


def test_stability_constant_sequence():
    g = fl.shrinking_sphere()
    V, W = sphere_pair(g.at(0).chart)
    rep = fl.lipschitz_limit_stability([g, g], g, [(V, W)], [0.2], grid_count=5)
    assert rep.distances == [0.0, 0.0]
    assert rep.residuals[0] == rep.limit_residuals
    assert rep.passed


def test_stability_under_shear_limit():
    base = fl.shrinking_sphere()
    k = 0.3
    limit = fl.pulled_back_flow(base, mt.lipschitz_shear(k))
    seq = [fl.pulled_back_flow(base, mt.smoothed_shear(k, 1.0 / i), lipschitz_seam=False) for i in (2, 8)]
    V, W = sphere_pair(limit.at(0).chart)
    rep = fl.lipschitz_limit_stability(seq, limit, [(V, W)], [0.2], grid_count=5)
    assert rep.distances[1] < rep.distances[0]
    assert rep.passed and rep.preconditions == ["PASS", "PASS"]


def test_mollified_cone_smoothings_fail_precondition():
    seq = fl.static_smoothings(lambda e: mt.mollified_cone(0.5, e), [0.2, 0.1])
    V = fl.static_field(bump(seq[0].at(0).chart, (1.0, 0.0)))
    verdicts = [fl.tame_flow_check(g, [(V, V)], [0.1]).verdict for g in seq]
    assert verdicts == ["FAIL", "FAIL"]
