import numpy as np
import pytest

from ricci import metrics as mt
from ricci.errors import ChartMismatchError, DegenerateMetricError, SingularEvaluationError
from ricci.fields import affine_field, centered_plateau
from ricci.geometry import (
    EMPTY,
    Chart,
    ConnectionPerturbation,
    CurveStratum,
    MetricField,
    PointStratum,
    SingularSet,
    Transition,
    central_derivative,
    christoffel_from_metric,
    christoffel_transform,
    half_density_covariant_derivative,
    levi_civita_check,
    perturb,
)
from ricci.quadrature import integrability_diagnostic


def polar_transition():
    """Cartesian chart (x) to polar chart (r, theta) on r in [0.5, 1.5], theta in [-1, 1]."""
    target = Chart(2, (0.5, -1.0), (1.5, 1.0), name="polar")

    def forward(x):
        return np.stack([np.hypot(x[..., 0], x[..., 1]), np.arctan2(x[..., 1], x[..., 0])], -1)

    def inverse(y):
        return np.stack([y[..., 0] * np.cos(y[..., 1]), y[..., 0] * np.sin(y[..., 1])], -1)

    def fjac(x):
        r2 = np.sum(x * x, -1)
        r = np.sqrt(r2)
        J = np.empty(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = x[..., 0] / r
        J[..., 0, 1] = x[..., 1] / r
        J[..., 1, 0] = -x[..., 1] / r2
        J[..., 1, 1] = x[..., 0] / r2
        return J

    def ijac(y):
        r, t = y[..., 0], y[..., 1]
        K = np.empty(y.shape[:-1] + (2, 2))
        K[..., 0, 0] = np.cos(t)
        K[..., 0, 1] = -r * np.sin(t)
        K[..., 1, 0] = np.sin(t)
        K[..., 1, 1] = r * np.cos(t)
        return K

    return Transition(forward, inverse, fjac, ijac, None, target)


def polar_flat_metric(chart):
    def ev(y):
        g = np.zeros(y.shape[:-1] + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = y[..., 0] ** 2
        return g

    def d_ev(y):
        d = np.zeros(y.shape[:-1] + (2, 2, 2))
        d[..., 0, 1, 1] = 2 * y[..., 0]
        return d

    return MetricField(chart, ev, d_eval=d_ev, name="polar-flat")


def test_chart_rejects_bad_boxes():
    with pytest.raises(ValueError):
        Chart(0, (), ())
    with pytest.raises(ValueError):
        Chart(2, (0, 0), (1, 0))


def test_exclusion_radius_must_be_positive():
    with pytest.raises(ValueError):
        PointStratum((0, 0), radius=0.0)


def test_strata_must_lie_in_chart():
    ch = Chart(2, (-1, -1), (1, 1))
    with pytest.raises(ValueError):
        MetricField(ch, lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)),
                    SingularSet([PointStratum((3.0, 0.0))]))


def test_central_derivative_is_fourth_order_with_richardson():
    f = lambda x: np.sin(x[..., :1]) * np.exp(x[..., 1:2])
    x = np.array([[0.3, -0.2]])
    exact = np.array([np.cos(0.3) * np.exp(-0.2), np.sin(0.3) * np.exp(-0.2)])
    errs = [np.max(np.abs(central_derivative(f, x, h)[0, :, 0] - exact)) for h in (1e-1, 5e-2)]
    assert errs[1] < errs[0] / 10  # ~16x for fourth order


def test_flat_christoffels_vanish():
    m = mt.flat(2)
    gam = christoffel_from_metric(m)(np.random.default_rng(0).uniform(-1, 1, (50, 2)))
    assert np.max(np.abs(gam)) == 0.0


def test_conformal_christoffels_match_closed_form():
    rng = np.random.default_rng(1)
    m = mt.conformal2d(mt.gaussian_factor(1.0))
    x = rng.uniform(-1, 1, (100, 2))
    dphi = m.factor.grad(x)
    expect = np.zeros((100, 2, 2, 2))
    d = np.eye(2)
    for i in range(2):
        for j in range(2):
            for k in range(2):
                expect[:, i, j, k] = d[i, j] * dphi[:, k] + d[i, k] * dphi[:, j] - d[j, k] * dphi[:, i]
    assert np.allclose(christoffel_from_metric(m)(x), expect, atol=1e-14)


def test_cone_family_fibre_christoffels():
    alpha = 0.5
    m = mt.cone_family_trivial(alpha)
    rng = np.random.default_rng(2)
    x = rng.uniform(0.1, 0.9, (40, 3))
    gam = m.christoffel_eval(x)
    for p, G in zip(x, gam):
        y = p[:2]
        r2 = y @ y
        d = np.eye(2)
        expect = -alpha / r2 * (np.einsum("k,ij->ijk", y, d) + np.einsum("j,ik->ijk", y, d)
                                - np.einsum("i,jk->ijk", y, d))
        assert np.allclose(G[:2, :2, :2], expect, atol=1e-13)
        assert np.max(np.abs(G[2])) == 0 and np.max(np.abs(G[:, 2])) == 0


def test_christoffels_are_torsion_free():
    rng = np.random.default_rng(3)
    for m in (mt.sphere_chart(), mt.edge(1.0), mt.glued_caps()):
        x = m.chart.sample(30, rng, margin=0.05)
        x = x[m.singular.distance(x) > 1e-3] if len(m.singular) else x
        assert christoffel_from_metric(m).torsion(x) == 0.0


def test_metric_compatibility_on_smooth_region():
    rng = np.random.default_rng(4)
    m = mt.sphere_chart()
    x = m.chart.sample(30, rng, margin=0.1)
    assert levi_civita_check(m, christoffel_from_metric(m), x) < 1e-8


def test_fd_christoffels_converge_to_analytic():
    m = mt.conformal2d(mt.gaussian_factor(1.0))
    x = np.random.default_rng(5).uniform(-0.8, 0.8, (20, 2))
    exact = christoffel_from_metric(m)(x)
    errs = [np.max(np.abs(christoffel_from_metric(m, "fd", h, richardson=False)(x) - exact)) for h in (0.02, 0.01)]
    assert 3.0 < errs[0] / errs[1] < 5.0  # second order
    assert np.max(np.abs(christoffel_from_metric(m, "fd")(x) - exact)) < 1e-9


def test_fd_christoffels_refuse_exclusion_zone():
    g = christoffel_from_metric(mt.cone(2, 0.5), "fd")
    with pytest.raises(SingularEvaluationError):
        g(np.zeros((1, 2)))


def test_degenerate_metric_detected():
    ch = Chart(2, (-1, -1), (1, 1))
    m = MetricField(ch, lambda x: np.broadcast_to(np.diag([1.0, 1e-14]), x.shape[:-1] + (2, 2)))
    with pytest.raises(DegenerateMetricError):
        m.check_positive(np.zeros((1, 2)))


def test_identity_transition_leaves_christoffels():
    m = mt.sphere_chart()
    g = christoffel_from_metric(m)
    ident = Transition(lambda x: x, lambda y: y, lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)),
                       lambda y: np.broadcast_to(np.eye(2), y.shape[:-1] + (2, 2)),
                       lambda y: np.zeros(y.shape[:-1] + (2, 2, 2)), m.chart)
    x = m.chart.sample(20, np.random.default_rng(6))
    assert np.allclose(christoffel_transform(g, ident)(x), g(x), atol=1e-15)


def test_linear_transition_of_flat_stays_flat():
    A = np.array([[2.0, 1.0], [0.5, 1.0]])
    Ai = np.linalg.inv(A)
    t = Transition(lambda x: x @ A.T, lambda y: y @ Ai.T, lambda x: np.broadcast_to(A, x.shape[:-1] + (2, 2)),
                   target=Chart(2, (-5, -5), (5, 5)))
    g = christoffel_transform(christoffel_from_metric(mt.flat(2)), t)
    assert np.max(np.abs(g(np.random.default_rng(7).uniform(-2, 2, (20, 2))))) < 1e-6


def test_polar_transition_matches_polar_metric():
    t = polar_transition()
    flat = christoffel_from_metric(mt.flat(2, half=2.0))
    g_polar = christoffel_transform(flat, t)
    direct = christoffel_from_metric(polar_flat_metric(t.target))
    y = t.target.sample(50, np.random.default_rng(8))
    assert np.max(np.abs(g_polar(y) - direct(y))) < 1e-6
    # closed form: Gamma^r_tt = -r, Gamma^t_rt = 1/r
    assert np.allclose(direct(y)[:, 0, 1, 1], -y[:, 0])
    assert np.allclose(direct(y)[:, 1, 0, 1], 1 / y[:, 0])


def test_transform_agrees_with_pullback_metric():
    """Transporting the sphere connection equals the Levi-Civita connection of the pulled-back metric."""
    phi = mt.lipschitz_shear(0.3)
    h = mt.sphere_chart()
    pulled = mt.pullback(h, phi, lipschitz_seam=False)
    x = np.random.default_rng(9).uniform(-0.8, 0.8, (30, 2))
    x = x[np.abs(x[:, 1]) > 0.05]
    fd = christoffel_from_metric(pulled, "fd")
    assert np.max(np.abs(pulled.christoffel_eval(x) - fd(x))) < 1e-6


def test_covariant_derivative_examples():
    ch = Chart(2, (-1, -1), (1, 1))
    flat = christoffel_from_metric(mt.flat(2))
    x = np.random.default_rng(10).uniform(-1, 1, (10, 2))
    const = affine_field(ch, (1.0, 2.0))
    lin = affine_field(ch, (0.0, 0.0), np.eye(2))
    assert np.max(np.abs(half_density_covariant_derivative(flat, const, x))) == 0.0
    assert np.allclose(half_density_covariant_derivative(flat, lin, x), np.eye(2))

    cone = christoffel_from_metric(mt.cone(2, 0.5))
    c = np.array([0.3, -0.7])
    nv = half_density_covariant_derivative(cone, affine_field(cone.chart, c), np.array([[1.0, 0.0]]))[0]
    # hand evaluation at x = (1, 0): d phi = (-0.5, 0)
    dphi = np.array([-0.5, 0.0])
    G = np.zeros((2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                G[i, j, k] = (i == j) * dphi[k] + (i == k) * dphi[j] - (j == k) * dphi[i]
    tau = np.einsum("kki->i", G)
    expect = np.einsum("jki,k->ij", G, c) - 0.5 * np.outer(tau, c)
    assert np.allclose(nv, expect, atol=1e-14)


def test_perturbation_examples():
    ch = mt.flat(2).chart
    flat = christoffel_from_metric(mt.flat(2))
    T0 = np.zeros((2, 2, 2))
    T0[0, 0, 1] = T0[0, 1, 0] = 0.1
    T = ConnectionPerturbation(ch, lambda x: np.broadcast_to(T0, x.shape[:-1] + (2, 2, 2)), 0.1)
    zero = ConnectionPerturbation(ch, lambda x: np.zeros(x.shape[:-1] + (2, 2, 2)), 0.0)
    x = ch.sample(10, np.random.default_rng(11))
    assert np.array_equal(perturb(flat, zero)(x), flat(x))
    assert np.allclose(perturb(flat, T)(x), T0)
    cone = christoffel_from_metric(mt.cone(2, 0.5))
    Tc = ConnectionPerturbation(cone.chart, T.eval, 0.1)
    v = integrability_diagnostic(perturb(cone, Tc), box=((-0.5, -0.5), (0.5, 0.5)))
    assert v.l1 == "converges"
    with pytest.raises(ChartMismatchError):
        perturb(cone, ConnectionPerturbation(Chart(2, (0, 0), (1, 1)), T.eval, 0.1))


def test_half_density_field_invariants():
    ch = Chart(2, (-1, -1), (1, 1))
    V = centered_plateau(ch, (0.1, 0.0), 0.5, 0.25, (1.0, -0.5), np.array([[0.2, 0.0], [0.3, 0.1]]))
    assert V.boundary_max() < 1e-12
    assert V.lipschitz_violation() <= 0.0
    x = ch.sample(20, np.random.default_rng(12))
    fd = central_derivative(V, x, 1e-5)
    assert np.allclose(V.derivative(x), fd, atol=1e-7)


def test_curve_stratum_axis_and_distance():
    s = CurveStratum(((0.0, -1.0), (0.0, 1.0)))
    assert s.axis() == 1
    assert np.allclose(s.distance(np.array([[0.3, 0.2], [-0.5, 0.0]])), [0.3, 0.5])
    assert EMPTY.distance(np.zeros((3, 2))).shape == (3,)
