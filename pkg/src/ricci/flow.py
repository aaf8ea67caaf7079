"""Weak Ricci flow identity checks for time-dependent metric families.

For a family ``g(t)`` and test half-densities ``V(t), W(t)`` the identity is

    int g_ij(t) V^i W^j = int g_ij(0) V^i W^j
        + int_0^t int [g_ij dV^i W^j + g_ij V^i dW^j - 2 q(V, W)] ds

with ``q`` the quadratic-form integrand. The residual reported here is
``RHS - LHS``, so a static metric with time-independent fields gives
``-2 t Q(V, W)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import SliceTamenessError, TamenessViolationError
from .geometry import (
    ChristoffelField,
    HalfDensityField,
    MetricField,
    central_derivative,
    christoffel_from_metric,
    covariant_from_parts,
    merge_breakpoints,
)
from .metrics import conformal_metric, pullback, sphere_factor, unit_box
from .qform import integration_box, q_form
from .quadrature import DEFAULT_SCHEME, QuadratureScheme, integrate


# --------------------------------------------------------------------------- families


@dataclass(frozen=True)
class TimeDependentMetric:
    """``t -> MetricField`` on ``[0, T)``.

    ``lower_bound`` is the declared slice-wise bound ``c(t)`` of the
    lower-bound assumption; ``certified`` says whether it was derived
    analytically (built-ins) or merely declared.
    """

    slice: Callable
    T: float
    dt_metric: Optional[Callable] = None
    time_regularity: str = "smooth"
    lower_bound: Optional[Callable] = None
    certified: bool = False
    static: bool = False
    name: str = "g(t)"

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("flow interval must have T > 0")

    def at(self, t) -> MetricField:
        if not 0.0 <= t < self.T:
            raise ValueError(f"time {t} outside [0, {self.T})")
        return self.slice(0.0 if self.static else float(t))

    def christoffel(self, t) -> ChristoffelField:
        g = self.at(t)
        scheme = "analytic" if (g.christoffel_eval is not None or g.d_eval is not None) else "fd"
        return christoffel_from_metric(g, scheme)


@dataclass(frozen=True)
class TimeDependentField:
    """``t -> HalfDensityField`` with a fixed support box and optional ``d/dt`` of the coefficients."""

    field_at: Callable
    support: tuple
    lipschitz: float = 0.0
    dt_coeffs: Optional[Callable] = None
    static: bool = False
    name: str = "V(t)"

    def at(self, t) -> HalfDensityField:
        return self.field_at(0.0 if self.static else float(t))

    def time_derivative(self, t, x, h=1e-5):
        if self.static:
            return np.zeros(x.shape)
        if self.dt_coeffs is not None:
            return self.dt_coeffs(t, x)
        lo = max(t - h, 0.0)
        return (self.field_at(t + h)(x) - self.field_at(lo)(x)) / (t + h - lo)


def static_field(V: HalfDensityField) -> TimeDependentField:
    return TimeDependentField(lambda t: V, V.support, V.lipschitz, None, True, V.name)


def static_metric(g: MetricField, lower_bound=None) -> TimeDependentMetric:
    return TimeDependentMetric(lambda t: g, math.inf, lambda t: (lambda x: np.zeros(x.shape[:-1] + (g.chart.n,) * 2)),
                               "smooth", lower_bound, lower_bound is not None, True, f"static[{g.name}]")


def shrinking_sphere(r0=1.0, half=1.5) -> TimeDependentMetric:
    """``g(t) = (1 - 2t) g_1`` with ``g_1`` the round sphere of radius ``r0`` in a stereographic chart.

    ``Ric(g_1) = g_1 / r0^2``; for ``r0 = 1`` this is an exact Ricci flow on ``[0, 1/2)``.
    """
    chart = unit_box(2, half)
    T = 0.5 * r0 * r0

    def slc(t):
        return conformal_metric(chart, sphere_factor(r0 * math.sqrt(1.0 - t / T)), "smooth", f"sphere(t={t})")

    g1 = conformal_metric(chart, sphere_factor(r0))

    def dt(t):
        return lambda x: -g1.eval(x) / T

    return TimeDependentMetric(slc, T, dt, "smooth", lambda t: 0.0, True, False, f"shrinking_sphere(r0={r0})")


def pulled_back_flow(flow: TimeDependentMetric, phi, lipschitz_seam=True) -> TimeDependentMetric:
    """Pull every slice back by a fixed map; a Ricci flow stays a Ricci flow."""
    return TimeDependentMetric(lambda t: pullback(flow.at(t), phi, lipschitz_seam), flow.T, None,
                               "lipschitz" if lipschitz_seam else flow.time_regularity,
                               flow.lower_bound, flow.certified, flow.static, f"{phi.name}^*{flow.name}")


# --------------------------------------------------------------------------- residual


@dataclass(frozen=True)
class FlowSchemes:
    space: QuadratureScheme = DEFAULT_SCHEME
    time_order: int = 4
    time_rel_tol: float = 1e-6
    time_abs_tol: float = 1e-10
    time_max_depth: int = 10

    def with_(self, **kw):
        from dataclasses import replace
        return replace(self, **kw)


@dataclass
class FlowResidual:
    time: float
    start: float
    lhs: float
    rhs: float
    breakdown: dict
    time_error: float
    space_error: float
    nodes: int

    @property
    def residual(self) -> float:
        b = self.breakdown
        return b["initial"] + b["dV"] + b["dW"] + b["q"] - b["final"]

    @property
    def scale(self) -> float:
        return max(abs(self.lhs), abs(self.rhs))

    @property
    def tolerance(self) -> float:
        return max(1e-6, 1e-3 * self.scale)

    @property
    def passes(self) -> bool:
        return abs(self.residual) <= self.tolerance

    def as_dict(self):
        return {"t": self.time, "start": self.start, "lhs": self.lhs, "rhs": self.rhs, "residual": self.residual,
                "breakdown": dict(self.breakdown), "time_error": self.time_error, "space_error": self.space_error,
                "scale": self.scale, "tolerance": self.tolerance, "pass": self.passes}


def _pairing(g: MetricField, V: HalfDensityField, W: HalfDensityField, box, scheme, t):
    """``int g_ij v^i w^j dx`` over ``box``."""
    def f(x):
        return np.einsum("...ij,...i,...j->...", g.eval(x), V(x), W(x))

    res = integrate(f, box, scheme, g.singular, merge_breakpoints(V.breakpoints, W.breakpoints))
    if res.diverges:
        raise SliceTamenessError(t, res.verdict)
    return res


class _SliceCache:
    """Per-time-node spatial integrals of the time integrand."""

    def __init__(self, g, V, W, box, scheme):
        self.g, self.V, self.W, self.box, self.scheme = g, V, W, box, scheme
        self.store = {}

    def __call__(self, s):
        key = 0.0 if (self.g.static and self.V.static and self.W.static) else float(s)
        if key not in self.store:
            self.store[key] = self._compute(s)
        return self.store[key]

    def _compute(self, s):
        g, sch = self.g, self.scheme
        Vs, Ws = self.V.at(s), self.W.at(s)
        gamma = g.christoffel(s)
        try:
            q = q_form(gamma, Vs, Ws, sch, split=False, box=self.box)
        except TamenessViolationError as exc:
            raise SliceTamenessError(s, exc.verdict) from exc
        dv = dw = 0.0
        err = q.error
        gs = g.at(s)
        bps = merge_breakpoints(Vs.breakpoints, Ws.breakpoints)
        if not self.V.static:
            r = integrate(lambda x: np.einsum("...ij,...i,...j->...", gs.eval(x), self.V.time_derivative(s, x), Ws(x)),
                          self.box, sch, gs.singular, bps)
            dv, err = r.value, err + r.error
        if not self.W.static:
            r = integrate(lambda x: np.einsum("...ij,...i,...j->...", gs.eval(x), Vs(x), self.W.time_derivative(s, x)),
                          self.box, sch, gs.singular, bps)
            dw, err = r.value, err + r.error
        return np.array([dv, dw, -2.0 * q.value]), err


def _gauss_legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _time_integral(fun, a, b, schemes: FlowSchemes):
    """Adaptive Gauss-Legendre in time of a vector-valued ``fun(s) -> (values, space_error)``."""
    nodes, weights = _gauss_legendre(schemes.time_order)
    count = [0]
    space_err = [0.0]

    def rule(lo, hi):
        tot = np.zeros(3)
        for u, w in zip(nodes, weights):
            val, e = fun(lo + (hi - lo) * u)
            count[0] += 1
            tot += w * (hi - lo) * val
            space_err[0] = max(space_err[0], e * (hi - lo))
        return tot

    def rec(lo, hi, whole, depth):
        mid = 0.5 * (lo + hi)
        left, right = rule(lo, mid), rule(mid, hi)
        diff = float(np.max(np.abs(left + right - whole)))
        scale = float(np.max(np.abs(left + right)))
        if diff <= max(schemes.time_abs_tol, schemes.time_rel_tol * scale) or depth >= schemes.time_max_depth:
            return left + right, diff
        l, el = rec(lo, mid, left, depth + 1)
        r, er = rec(mid, hi, right, depth + 1)
        return l + r, el + er

    if b <= a:
        return np.zeros(3), 0.0, 0.0, 0
    total, err = rec(a, b, rule(a, b), 0)
    return total, err, space_err[0], count[0]


def flow_identity_residual(g: TimeDependentMetric, V: TimeDependentField, W: TimeDependentField, t: float,
                           schemes: FlowSchemes = FlowSchemes(), start: float = 0.0, cache=None) -> FlowResidual:
    """Both sides of the weak identity on ``[start, t]`` and their difference ``RHS - LHS``."""
    if not 0.0 <= start <= t < g.T:
        raise ValueError(f"need 0 <= start <= t < T, got start={start}, t={t}")
    sch = schemes.space
    box = _common_box(g, V, W)
    cache = cache if cache is not None else _SliceCache(g, V, W, box, sch)
    init = _pairing(g.at(start), V.at(start), W.at(start), box, sch, start)
    final = _pairing(g.at(t), V.at(t), W.at(t), box, sch, t)
    integral, terr, serr, count = _time_integral(cache, start, t, schemes)
    breakdown = {"initial": init.value, "final": final.value, "dV": float(integral[0]),
                 "dW": float(integral[1]), "q": float(integral[2])}
    rhs = init.value + float(integral.sum())
    return FlowResidual(float(t), float(start), final.value, rhs, breakdown, terr,
                        init.error + final.error + serr, count)


def _common_box(g, V, W):
    chart = g.at(0.0).chart
    lo, hi = np.array(chart.lo), np.array(chart.hi)
    for F in (V, W):
        lo = np.maximum(lo, F.support[0])
        hi = np.minimum(hi, F.support[1])
    return lo, hi


# --------------------------------------------------------------------------- checks


@dataclass
class FlowCheck:
    verdict: str
    entries: list
    excluded: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def as_dict(self):
        return {"verdict": self.verdict,
                "entries": [{"pair": p, **r.as_dict()} for p, r in self.entries],
                "excluded": self.excluded, "notes": self.notes}


def tame_flow_check(g: TimeDependentMetric, suite: Sequence, times: Sequence[float],
                    schemes: FlowSchemes = FlowSchemes()) -> FlowCheck:
    """PASS iff the identity residual is within tolerance for every pair and time."""
    entries = []
    notes = []
    if g.lower_bound is None:
        notes.append("no lower-bound function c(t) declared")
    elif not g.certified:
        notes.append("lower-bound function c(t) declared but not certified")
    for p, (V, W) in enumerate(suite):
        box = _common_box(g, V, W)
        cache = _SliceCache(g, V, W, box, schemes.space)
        for t in times:
            entries.append((p, flow_identity_residual(g, V, W, t, schemes, cache=cache)))
    ok = all(r.passes for _, r in entries)
    return FlowCheck("PASS" if ok else "FAIL", entries, notes=notes)


@dataclass
class SobolevGateResult:
    finite: bool
    value: float
    verdict: str
    exponent: Optional[float]

    def as_dict(self):
        return {"finite": self.finite, "value": self.value if self.finite else math.inf,
                "verdict": self.verdict, "exponent": self.exponent}


def sobolev_gate(gamma: ChristoffelField, V: HalfDensityField, g: Optional[MetricField] = None,
                 scheme: QuadratureScheme = DEFAULT_SCHEME) -> SobolevGateResult:
    """``int sum_ij (nabla_i v^j)^2 dx`` with its integrability verdict.

    ``g`` is accepted for interface symmetry; the gate uses the coordinate sum.
    """
    box = integration_box(gamma, V)

    def f(x):
        nv = covariant_from_parts(gamma(x), V(x), V.derivative(x))
        return (nv * nv).sum(axis=(-2, -1))

    res = integrate(f, box, scheme, gamma.singular, V.breakpoints)
    exps = [s.exponent for s in res.shells if s.exponent is not None]
    finite = res.verdict == "converges"
    return SobolevGateResult(finite, res.value, res.verdict, max(exps) if exps else None)


def cone_preserving_flow_check(g: TimeDependentMetric, suite: Sequence, times: Sequence[float],
                               schemes: FlowSchemes = FlowSchemes()) -> FlowCheck:
    """Like ``tame_flow_check`` but only on pairs whose fields pass the Sobolev gate at every time."""
    kept, excluded = [], []
    slice_times = [0.0] if g.static else sorted({0.0, *times})
    for p, (V, W) in enumerate(suite):
        ok = True
        for t in slice_times:
            gamma = g.christoffel(t)
            for F in (V, W):
                if not sobolev_gate(gamma, F.at(t), g.at(t), schemes.space).finite:
                    ok = False
        (kept if ok else excluded).append(p)
    if not kept:
        return FlowCheck("INCONCLUSIVE", [], excluded, ["no test pair passed the Sobolev gate"])
    res = tame_flow_check(g, [suite[p] for p in kept], times, schemes)
    entries = [(kept[p], r) for p, r in res.entries]
    return FlowCheck(res.verdict, entries, excluded, res.notes)


def linear_in_time_fit(times, residuals):
    """Least-squares ``r = a t + b`` and R^2."""
    t = np.asarray(times, float)
    r = np.asarray(residuals, float)
    a, b = np.polyfit(t, r, 1)
    pred = a * t + b
    ss_res = float(np.sum((r - pred) ** 2))
    ss_tot = float(np.sum((r - r.mean()) ** 2))
    return float(a), float(b), (1.0 - ss_res / ss_tot) if ss_tot > 0 else 1.0


# --------------------------------------------------------------------------- Lipschitz limits


def lipschitz_distance(g1: MetricField, g2: MetricField, grid, h=1e-4) -> float:
    """``sup |g1 - g2| + sup |d(g1 - g2)|`` over ``grid`` (a proxy for the Lipschitz-norm distance)."""
    def diff(x):
        return g1.eval(x) - g2.eval(x)

    x = np.asarray(grid, float)
    d0 = float(np.max(np.abs(diff(x))))
    d1 = float(np.max(np.abs(central_derivative(diff, x, h, richardson=False))))
    return d0 + d1


@dataclass
class StabilityReport:
    distances: list
    residuals: list
    preconditions: list
    limit_residuals: list
    constant: float
    passed: bool

    def as_dict(self):
        return {"distances": self.distances, "residuals": self.residuals, "preconditions": self.preconditions,
                "limit_residuals": self.limit_residuals, "constant": self.constant, "pass": self.passed}


def lipschitz_limit_stability(sequence: Sequence[TimeDependentMetric], limit: TimeDependentMetric, suite,
                              times, schemes: FlowSchemes = FlowSchemes(), grid_count=9) -> StabilityReport:
    """Residuals along a sequence converging in Lipschitz norm, and of its limit.

    Each member's tame check is recorded as a precondition: a failing member
    (e.g. a smoothing that is not a Ricci flow) is a precondition failure, not
    a counterexample. The fitted constant is ``max |res_i - res_inf| / d_i``.
    """
    chart = limit.at(0.0).chart
    axes = [np.linspace(a, b, grid_count) for a, b in zip(chart.lo, chart.hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, chart.n)
    grid = grid[limit.at(0.0).singular.distance(grid) > 1e-3 * chart.diagonal]
    lim = tame_flow_check(limit, suite, times, schemes)
    lim_res = [r.residual for _, r in lim.entries]
    dists, res, pre = [], [], []
    C = 0.0
    for gi in sequence:
        d = max(lipschitz_distance(gi.at(t), limit.at(t), grid) for t in times)
        chk = tame_flow_check(gi, suite, times, schemes)
        ri = [r.residual for _, r in chk.entries]
        dists.append(d)
        res.append(ri)
        pre.append(chk.verdict)
        if d > 0:
            C = max(C, max(abs(a - b) for a, b in zip(ri, lim_res)) / d)
    return StabilityReport(dists, res, pre, lim_res, C, lim.passed)


def static_smoothings(builder, scales) -> list:
    """Static families of smoothed metrics ``builder(eps)``; these are not Ricci flows."""
    return [static_metric(builder(e)) for e in scales]
