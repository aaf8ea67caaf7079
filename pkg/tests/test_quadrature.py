import math

import numpy as np
import pytest
from scipy import integrate as sp_integrate

from ricci import metrics as mt
from ricci.geometry import EMPTY, PointStratum, SingularSet, christoffel_from_metric
from ricci.quadrature import (
    DEFAULT_SCHEME,
    QuadratureScheme,
    box_rule,
    integrability_diagnostic,
    integrate,
    tensor_rule,
)

ORIGIN2 = SingularSet([PointStratum((0.0, 0.0))])


def radial_power(beta):
    return lambda x: np.linalg.norm(x, axis=-1) ** (-beta)


def test_defaults():
    s = QuadratureScheme()
    assert (s.order, s.rel_tol, s.abs_tol, s.shell_ratio, s.max_depth) == (5, 1e-6, 1e-10, 0.5, 30)
    assert s.innermost(2.0) == pytest.approx(2e-8)


@pytest.mark.parametrize("p", [2, 3, 5, 7])
def test_tensor_rule_exact_to_degree_2p_minus_1(p):
    nodes, w = tensor_rule(p, 2)
    rng = np.random.default_rng(p)
    for _ in range(5):
        a, b = rng.integers(0, 2 * p, size=2)
        exact = 1.0 / ((a + 1) * (b + 1))
        assert np.dot(w, nodes[:, 0] ** a * nodes[:, 1] ** b) == pytest.approx(exact, rel=1e-13)
    # degree 2p is not integrated exactly
    assert abs(np.dot(w, nodes[:, 0] ** (2 * p)) - 1 / (2 * p + 1)) > 1e-12


def test_box_rule_on_several_boxes():
    lo = np.array([[0.0, 0.0], [1.0, -1.0]])
    hi = np.array([[1.0, 2.0], [3.0, 1.0]])
    vals = box_rule(lambda x: x[:, 0] * x[:, 1] ** 2, lo, hi, 5)
    assert vals == pytest.approx([0.5 * 8 / 3, 4.0 * 2 / 3], rel=1e-13)


def test_unit_square_constant():
    r = integrate(lambda x: np.ones(len(x)), ((0, 0), (1, 1)))
    assert r.value == pytest.approx(1.0, abs=1e-12)
    assert r.converged


def test_inverse_radius_on_square_matches_closed_form():
    # independent oracle: the closed form 8 asinh(1), checked against scipy's adaptive quadrature
    oracle = 8 * math.asinh(1.0)
    sp = 8 * sp_integrate.dblquad(lambda y, x: 1 / math.hypot(x, y), 0, 1, 0, lambda x: x)[0]
    assert sp == pytest.approx(oracle, rel=1e-9)
    r = integrate(radial_power(1.0), ((-1, -1), (1, 1)), singular=ORIGIN2)
    assert r.value == pytest.approx(oracle, rel=1e-6)
    assert r.verdict == "converges"
    sums = np.abs(r.shells[0].sums[2:12])
    assert np.all(sums[1:] < sums[:-1])  # geometric decay


def test_inverse_radius_on_disk():
    R = 0.5
    disk = lambda x: np.where(np.linalg.norm(x, axis=-1) <= R, radial_power(1.0)(x), 0.0)
    r = integrate(disk, ((-R, -R), (R, R)), DEFAULT_SCHEME.with_(rel_tol=1e-4), ORIGIN2)
    # the indicator is discontinuous, so only a loose match with 2 pi R
    assert r.value == pytest.approx(2 * math.pi * R, rel=2e-3)


def test_inverse_square_diverges_with_flat_shell_sums():
    r = integrate(radial_power(2.0), ((-1, -1), (1, 1)), singular=ORIGIN2)
    assert r.verdict == "diverges"
    assert abs(r.shells[0].exponent) < 0.05


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("beta", [0.5, 1.0, 1.5, 2.0, 2.5])
def test_shell_verdict_table(n, beta):
    sing = SingularSet([PointStratum(tuple([0.0] * n))])
    scheme = DEFAULT_SCHEME.with_(rel_tol=1e-3, r_min_factor=1e-6) if n == 3 else DEFAULT_SCHEME
    r = integrate(radial_power(beta), ([-1] * n, [1] * n), scheme, sing)
    assert r.verdict == ("converges" if beta < n else "diverges")


def test_error_estimate_shrinks_with_tolerance():
    f = lambda x: np.exp(np.sin(3 * x[:, 0]) * x[:, 1])
    errs = [integrate(f, ((0, 0), (2, 1)), DEFAULT_SCHEME.with_(rel_tol=t)).error for t in (1e-3, 1e-6, 1e-9)]
    assert errs[0] >= errs[1] >= errs[2]


def test_breakpoints_handle_kinks():
    f = lambda x: np.abs(x[:, 0] - 0.3)
    r = integrate(f, ((0,), (1,)), breakpoints={0: [0.3]})
    assert r.value == pytest.approx(0.5 * 0.3 ** 2 + 0.5 * 0.7 ** 2, abs=1e-14)


def test_empty_box():
    assert integrate(lambda x: np.ones(len(x)), ((0, 0), (0, 1))).value == 0.0


def test_integrability_flat():
    v = integrability_diagnostic(christoffel_from_metric(mt.flat(2)))
    assert (v.l1, v.l2, v.quadratic) == ("converges", "converges", "converges")
    assert v.tame


def test_integrability_cone():
    v = integrability_diagnostic(christoffel_from_metric(mt.cone(2, 0.5)), box=((-0.5, -0.5), (0.5, 0.5)))
    assert v.l1 == "converges"
    assert v.l2 == "diverges"
    assert v.quadratic == "converges"
    assert abs(v.quadratic_value) <= DEFAULT_SCHEME.abs_tol


def test_integrability_edge():
    v = integrability_diagnostic(christoffel_from_metric(mt.edge(1.0)), box=((-0.5, -0.5), (0.5, 0.5)))
    assert v.l2 == "converges"
    assert v.as_dict()["L2"] == "converges"


def test_empty_singular_set_has_no_shells():
    r = integrate(lambda x: x[:, 0] ** 2, ((0, 0), (1, 1)), singular=EMPTY)
    assert r.shells == []
    assert r.value == pytest.approx(1 / 3)
