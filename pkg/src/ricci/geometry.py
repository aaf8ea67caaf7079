"""Chart-local metrics, Christoffel symbols and half-density test fields.

Array conventions (all evaluations are vectorised over a leading point axis):

* points ``x`` have shape ``(N, n)``;
* metrics ``g[..., i, j] = g_ij``;
* metric derivatives ``dg[..., k, i, j] = d_k g_ij``;
* Christoffel symbols ``gamma[..., i, j, k] = Gamma^i_{jk}``;
* half-density coefficients ``v[..., j] = v^j`` in the trivialisation
  ``sqrt(dx^1 ... dx^n)``;
* coefficient derivatives ``dv[..., i, j] = d_i v^j`` (row = differentiation index).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ChartDegeneracyError,
    ChartMismatchError,
    DegenerateMetricError,
    SingularEvaluationError,
)

DEGENERACY_RATIO = 1e-12
INTEGRABILITY_ORDER = {"Linf": 0, "L2": 1, "L1": 2}


def as_points(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, n)
    if x.shape[-1] != n:
        raise ValueError(f"expected points of dimension {n}, got shape {x.shape}")
    return x


def central_derivative(fun, x, h, richardson=True):
    """Central differences of a vectorised map, batched over all shifts.

    ``fun`` maps ``(N, n)`` to ``(N, *shape)``; the result has shape
    ``(N, n, *shape)`` with the differentiation index first. ``h`` is a scalar
    or a per-point array of steps.
    """
    x = np.asarray(x, dtype=float)
    N, n = x.shape
    h = np.broadcast_to(np.asarray(h, dtype=float), (N,))

    def one(step):
        shifts = np.zeros((2 * n, N, n))
        for k in range(n):
            shifts[2 * k, :, k] = step
            shifts[2 * k + 1, :, k] = -step
        vals = fun((x[None] + shifts).reshape(2 * n * N, n))
        vals = np.asarray(vals).reshape(2 * n, N, *np.shape(vals)[1:])
        diff = (vals[0::2] - vals[1::2]) / (2 * step).reshape((1, N) + (1,) * (vals.ndim - 2))
        return np.moveaxis(diff, 0, 1)

    d1 = one(h)
    if not richardson:
        return d1
    d2 = one(h / 2)
    return (4.0 * d2 - d1) / 3.0


# --------------------------------------------------------------------------- charts


@dataclass(frozen=True)
class Transition:
    """Coordinate change from this chart (``x``) to a target chart (``y``).

    ``inverse_jacobian`` returns ``dx/dy`` at ``y`` and ``inverse_hessian``
    returns ``d^2 x^a / dy^j dy^k`` at ``y`` with shape ``(N, a, j, k)``;
    either falls back to finite differences of ``inverse`` when absent.
    """

    forward: Callable
    inverse: Callable
    forward_jacobian: Callable
    inverse_jacobian: Optional[Callable] = None
    inverse_hessian: Optional[Callable] = None
    target: Optional["Chart"] = None
    fd_step: float = 1e-4

    def dx_dy(self, y):
        if self.inverse_jacobian is not None:
            return self.inverse_jacobian(y)
        return np.swapaxes(central_derivative(self.inverse, y, self.fd_step), 1, 2)

    def d2x_dy2(self, y):
        if self.inverse_hessian is not None:
            return self.inverse_hessian(y)
        # d_j (dx^a/dy^k) -> (N, j, a, k)
        d = central_derivative(self.dx_dy, y, self.fd_step)
        return np.transpose(d, (0, 2, 1, 3))


@dataclass(frozen=True)
class Chart:
    n: int
    lo: tuple
    hi: tuple
    transition: Optional[Transition] = None
    name: str = "chart"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("chart dimension must be positive")
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != self.n or len(hi) != self.n:
            raise ValueError("box bounds do not match the chart dimension")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("chart box must have positive volume")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def box(cls, lo, hi, **kw):
        return cls(len(lo), tuple(lo), tuple(hi), **kw)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    def contains(self, x, tol=1e-12) -> np.ndarray:
        x = as_points(x, self.n)
        return np.all((x >= np.array(self.lo) - tol) & (x <= np.array(self.hi) + tol), axis=-1)

    def sample(self, count, rng, margin=0.0):
        lo = np.array(self.lo) + margin
        hi = np.array(self.hi) - margin
        return rng.uniform(lo, hi, size=(count, self.n))

    def round_trip_error(self, count=64, seed=0) -> float:
        if self.transition is None:
            return 0.0
        x = self.sample(count, np.random.default_rng(seed))
        t = self.transition
        return float(np.max(np.abs(t.inverse(t.forward(x)) - x)))

    def check_round_trip(self, tol=1e-9, count=64, seed=0):
        err = self.round_trip_error(count, seed)
        if err > tol:
            raise ChartDegeneracyError(f"round trip error {err:.3e} exceeds {tol:.1e}")
        return err


# --------------------------------------------------------------------------- strata


@dataclass(frozen=True)
class PointStratum:
    point: tuple
    radius: float = 1e-6

    kind = "point"

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("exclusion radius must be positive")
        object.__setattr__(self, "point", tuple(float(v) for v in self.point))

    def distance(self, x):
        return np.linalg.norm(np.asarray(x) - np.asarray(self.point), axis=-1)

    def shell_frame(self, n):
        return np.asarray(self.point), np.ones(n, dtype=bool)

    def breakpoints(self):
        return {}

    def inside(self, chart: Chart) -> bool:
        return bool(chart.contains(self.point)[0])


@dataclass(frozen=True)
class CurveStratum:
    """Polyline curve stratum, parametrised by arc length.

    Tangent frames are stored per vertex (the tangent of the outgoing segment,
    the last vertex reuses the incoming one).
    """

    vertices: tuple
    radius: float = 1e-6

    kind = "curve"

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("exclusion radius must be positive")
        verts = tuple(tuple(float(c) for c in v) for v in self.vertices)
        if len(verts) < 2:
            raise ValueError("a curve needs at least two vertices")
        object.__setattr__(self, "vertices", verts)

    @property
    def array(self):
        return np.asarray(self.vertices)

    @property
    def arclength(self):
        seg = np.linalg.norm(np.diff(self.array, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def tangents(self):
        d = np.diff(self.array, axis=0)
        t = d / np.linalg.norm(d, axis=1, keepdims=True)
        return np.vstack([t, t[-1:]])

    def at(self, s):
        """Point on the polyline at arc length ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        arc = self.arclength
        return np.stack([np.interp(s, arc, self.array[:, a]) for a in range(self.array.shape[1])], -1)

    def tangent_at(self, s):
        arc = self.arclength
        idx = np.clip(np.searchsorted(arc, np.atleast_1d(s), side="right") - 1, 0, len(arc) - 2)
        return self.tangents[idx]

    def axis(self):
        """Index of the coordinate axis the curve runs along, or None."""
        d = np.diff(self.array, axis=0)
        nz = np.abs(d) > 1e-14
        cols = np.flatnonzero(nz.any(axis=0))
        if len(cols) == 1:
            return int(cols[0])
        return None

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        best = np.full(x.shape[:-1], np.inf)
        v = self.array
        for a, b in zip(v[:-1], v[1:]):
            ab = b - a
            t = np.clip(((x - a) @ ab) / (ab @ ab), 0.0, 1.0)
            best = np.minimum(best, np.linalg.norm(x - (a + t[..., None] * ab), axis=-1))
        return best

    def shell_frame(self, n):
        ax = self.axis()
        if ax is None:
            raise NotImplementedError("tube shells are only available for axis-aligned curve strata")
        mask = np.ones(n, dtype=bool)
        mask[ax] = False
        return self.array[0], mask

    def breakpoints(self):
        ax = self.axis()
        if ax is None:
            return {}
        n = self.array.shape[1]
        return {a: [self.array[0, a]] for a in range(n) if a != ax}

    def inside(self, chart: Chart) -> bool:
        return bool(np.all(chart.contains(self.array)))


@dataclass(frozen=True)
class HyperplanePiece:
    """Axis-aligned hyperplane piece ``{x_axis = offset}`` inside the chart."""

    axis: int
    offset: float
    radius: float = 1e-6

    kind = "hyperplane"

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("exclusion radius must be positive")

    def distance(self, x):
        return np.abs(np.asarray(x)[..., self.axis] - self.offset)

    def shell_frame(self, n):
        c = np.zeros(n)
        c[self.axis] = self.offset
        mask = np.zeros(n, dtype=bool)
        mask[self.axis] = True
        return c, mask

    def breakpoints(self):
        return {self.axis: [self.offset]}

    def inside(self, chart: Chart) -> bool:
        return chart.lo[self.axis] <= self.offset <= chart.hi[self.axis]


@dataclass(frozen=True)
class SingularSet:
    strata: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "strata", tuple(self.strata))

    def __iter__(self):
        return iter(self.strata)

    def __len__(self):
        return len(self.strata)

    def validate(self, chart: Chart):
        for s in self.strata:
            if not s.inside(chart):
                raise ValueError(f"stratum {s!r} lies outside the chart domain")
        return self

    def distance(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.strata:
            return np.full(x.shape[:-1], np.inf)
        return np.min([s.distance(x) for s in self.strata], axis=0)

    def inside_exclusion(self, x) -> Optional[tuple]:
        """Return (point, stratum) of the first point inside an exclusion radius."""
        x = np.asarray(x, dtype=float)
        for s in self.strata:
            bad = s.distance(x) < s.radius
            if np.any(bad):
                return x[np.flatnonzero(bad)[0]], s
        return None

    def breakpoints(self, n):
        out = {a: [] for a in range(n)}
        for s in self.strata:
            for a, vals in s.breakpoints().items():
                out[a].extend(vals)
        return out


EMPTY = SingularSet()


# --------------------------------------------------------------------------- fields


@dataclass(frozen=True)
class MetricField:
    chart: Chart
    eval: Callable
    singular: SingularSet = EMPTY
    d_eval: Optional[Callable] = None
    christoffel_eval: Optional[Callable] = None
    regularity: str = "smooth"
    name: str = "metric"
    tags: tuple = ()

    def __post_init__(self):
        if self.regularity not in ("smooth", "lipschitz", "W11loc"):
            raise ValueError(f"unknown regularity tag {self.regularity!r}")
        self.singular.validate(self.chart)

    def __call__(self, x):
        return self.eval(as_points(x, self.chart.n))

    def check_positive(self, x):
        g = self(x)
        w = np.linalg.eigvalsh(g)
        ratio = w[..., 0] / np.maximum(np.abs(w[..., -1]), 1e-300)
        bad = ratio < DEGENERACY_RATIO
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise DegenerateMetricError(as_points(x, self.chart.n)[i], float(ratio[i]))
        return w

    def check_derivative(self, x, h=1e-4):
        """Max abs deviation between ``d_eval`` and central differences."""
        if self.d_eval is None:
            return 0.0
        x = as_points(x, self.chart.n)
        fd = central_derivative(self.eval, x, h, richardson=True)
        return float(np.max(np.abs(fd - self.d_eval(x))))


@dataclass(frozen=True)
class ChristoffelField:
    chart: Chart
    eval: Callable
    singular: SingularSet = EMPTY
    integrability: dict = field(default_factory=dict)
    symmetric: bool = True
    analytic: bool = False
    name: str = "christoffel"

    def __call__(self, x):
        x = as_points(x, self.chart.n)
        if not self.analytic:
            hit = self.singular.inside_exclusion(x)
            if hit is not None:
                raise SingularEvaluationError(hit[0], hit[1])
        return self.eval(x)

    def trace(self, x):
        """``tau_i = sum_k Gamma^k_{ki}``."""
        return np.einsum("...kki->...i", self(x))

    def torsion(self, x) -> float:
        gam = self(x)
        return float(np.max(np.abs(gam - np.swapaxes(gam, -1, -2))))

    @property
    def weakest_class(self) -> str:
        if not self.integrability:
            return "Linf"
        return max(self.integrability.values(), key=INTEGRABILITY_ORDER.__getitem__)


@dataclass(frozen=True)
class HalfDensityField:
    """Vector-valued half-density ``v^j sqrt(dx^1...dx^n)``.

    ``jac`` returns ``d_i v^j``; when missing, central differences with
    ``fd_step`` are used. ``breakpoints`` lists per-axis coordinates where
    the coefficients stop being smooth, used to align quadrature cells.
    """

    chart: Chart
    coeffs: Callable
    support: tuple
    lipschitz: float = 0.0
    compact: bool = True
    jac: Optional[Callable] = None
    breakpoints: Optional[dict] = None
    fd_step: float = 1e-5
    name: str = "V"

    def __post_init__(self):
        lo, hi = self.support
        object.__setattr__(self, "support", (tuple(map(float, lo)), tuple(map(float, hi))))
        if self.lipschitz < 0:
            raise ValueError("Lipschitz constant must be non-negative")

    @property
    def n(self):
        return self.chart.n

    def __call__(self, x):
        return self.coeffs(as_points(x, self.n))

    def derivative(self, x):
        x = as_points(x, self.n)
        if self.jac is not None:
            return self.jac(x)
        return central_derivative(self.coeffs, x, self.fd_step)

    @property
    def uses_fd(self) -> bool:
        return self.jac is None

    def support_box(self):
        return np.array(self.support[0]), np.array(self.support[1])

    def boundary_samples(self, per_face=16, seed=0):
        rng = np.random.default_rng(seed)
        lo, hi = self.support_box()
        pts = []
        for a in range(self.n):
            for side in (lo[a], hi[a]):
                p = rng.uniform(lo, hi, size=(per_face, self.n))
                p[:, a] = side
                pts.append(p)
        return np.vstack(pts)

    def boundary_max(self, per_face=16, seed=0) -> float:
        return float(np.max(np.abs(self(self.boundary_samples(per_face, seed)))))

    def lipschitz_violation(self, pairs=256, seed=0) -> float:
        """Largest ``|v(x)-v(y)| - L|x-y|`` over random pairs in the support."""
        rng = np.random.default_rng(seed)
        lo, hi = self.support_box()
        x = rng.uniform(lo, hi, size=(pairs, self.n))
        y = x + rng.normal(scale=0.05 * np.linalg.norm(hi - lo), size=x.shape)
        y = np.clip(y, lo, hi)
        lhs = np.linalg.norm(self(x) - self(y), axis=-1)
        return float(np.max(lhs - self.lipschitz * np.linalg.norm(x - y, axis=-1)))

    def scaled(self, other: "ScalarField", name=None) -> "HalfDensityField":
        """Product ``chi * V`` with a scalar cutoff."""
        f = self

        def coeffs(x):
            return other.value(x)[..., None] * f.coeffs(x)

        def jac(x):
            return other.grad(x)[..., :, None] * f.coeffs(x)[..., None, :] + other.value(x)[..., None, None] * f.derivative(x)

        lo = np.maximum(self.support_box()[0], other.support[0])
        hi = np.minimum(self.support_box()[1], other.support[1])
        bps = merge_breakpoints(self.breakpoints, other.breakpoints)
        lip = other.sup * self.lipschitz + other.lipschitz * self.sup_estimate()
        return HalfDensityField(self.chart, coeffs, (tuple(lo), tuple(hi)), lip, True, jac, bps, self.fd_step, name or f"chi*{self.name}")

    def sup_estimate(self, count=512, seed=1) -> float:
        rng = np.random.default_rng(seed)
        lo, hi = self.support_box()
        return float(np.max(np.linalg.norm(self(rng.uniform(lo, hi, size=(count, self.n))), axis=-1)))

    def combine(self, other: "HalfDensityField", a=1.0, b=1.0) -> "HalfDensityField":
        """Linear combination ``a V + b W``."""
        f, g = self, other

        def coeffs(x):
            return a * f.coeffs(x) + b * g.coeffs(x)

        def jac(x):
            return a * f.derivative(x) + b * g.derivative(x)

        lo = np.minimum(f.support_box()[0], g.support_box()[0])
        hi = np.maximum(f.support_box()[1], g.support_box()[1])
        return HalfDensityField(
            self.chart, coeffs, (tuple(lo), tuple(hi)), abs(a) * f.lipschitz + abs(b) * g.lipschitz,
            f.compact and g.compact, jac, merge_breakpoints(f.breakpoints, g.breakpoints), f.fd_step,
        )


@dataclass(frozen=True)
class ScalarField:
    """Scalar function with gradient, used for cutoffs and weights."""

    value: Callable
    grad: Callable
    support: tuple
    sup: float = 1.0
    lipschitz: float = 0.0
    breakpoints: Optional[dict] = None

    def __post_init__(self):
        lo, hi = self.support
        object.__setattr__(self, "support", (np.asarray(lo, float), np.asarray(hi, float)))


@dataclass(frozen=True)
class ConnectionPerturbation:
    chart: Chart
    eval: Callable
    sup_norm: float

    def __call__(self, x):
        return self.eval(as_points(x, self.chart.n))


def merge_breakpoints(*items):
    out = {}
    for bp in items:
        if not bp:
            continue
        for a, vals in bp.items():
            out.setdefault(a, []).extend(vals)
    return {a: sorted(set(v)) for a, v in out.items()} or None


# --------------------------------------------------------------------------- operations


def christoffel_from_dg(g, dg):
    """Levi-Civita symbols from metric values and first derivatives."""
    ginv = np.linalg.inv(g)
    # lower[..., i, j, k] = 1/2 (d_j g_ik + d_k g_ij - d_i g_jk)
    lower = 0.5 * (
        np.einsum("...jik->...ijk", dg) + np.einsum("...kij->...ijk", dg) - dg
    )
    return np.einsum("...li,...ijk->...ljk", ginv, lower)


def christoffel_from_metric(g: MetricField, scheme="analytic", step=None, richardson=True) -> ChristoffelField:
    """Levi-Civita connection of ``g``.

    ``scheme`` is ``"analytic"`` (uses ``christoffel_eval`` or ``d_eval``) or
    ``"fd"`` (central differences with step ``step``, default ``1e-4`` times
    the chart diagonal). The finite-difference route refuses points inside a
    stratum's exclusion radius.
    """
    n = g.chart.n
    integ = {i: _claimed_class(g) for i, _ in enumerate(g.singular)}
    if scheme == "analytic":
        if g.christoffel_eval is not None:
            ev = g.christoffel_eval
        elif g.d_eval is not None:
            def ev(x):
                gx = g.eval(x)
                _check_degenerate(gx, x)
                return christoffel_from_dg(gx, g.d_eval(x))
        else:
            raise ValueError("analytic scheme needs d_eval or christoffel_eval on the metric")

        def sym(x):
            gam = ev(x)
            return 0.5 * (gam + np.swapaxes(gam, -1, -2))

        return ChristoffelField(g.chart, sym, g.singular, integ, True, True, f"LC({g.name})")
    if scheme != "fd":
        raise ValueError(f"unknown scheme {scheme!r}")
    h = step if step is not None else 1e-4 * g.chart.diagonal

    def ev_fd(x):
        gx = g.eval(x)
        _check_degenerate(gx, x)
        dg = central_derivative(g.eval, x, h, richardson)
        gam = christoffel_from_dg(gx, dg)
        return 0.5 * (gam + np.swapaxes(gam, -1, -2))

    return ChristoffelField(g.chart, ev_fd, g.singular, integ, True, False, f"LC_fd({g.name})")


def _claimed_class(g: MetricField) -> str:
    return {"smooth": "Linf", "lipschitz": "Linf", "W11loc": "L1"}[g.regularity]


def _check_degenerate(gx, x):
    w = np.linalg.eigvalsh(gx)
    ratio = w[..., 0] / np.maximum(np.abs(w[..., -1]), 1e-300)
    bad = ratio < DEGENERACY_RATIO
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateMetricError(np.asarray(x)[i], float(ratio[i]))


def christoffel_transform(gamma: ChristoffelField, transition: Optional[Transition] = None) -> ChristoffelField:
    """Christoffel symbols in the target chart of ``transition``.

    Evaluated at target points ``y`` with ``x = inverse(y)``:
    ``G~^i_jk = dy^i/dx^a dx^b/dy^j dx^c/dy^k G^a_bc + dy^i/dx^a d2x^a/dy^j dy^k``.
    """
    t = transition if transition is not None else gamma.chart.transition
    if t is None:
        raise ValueError("chart has no transition")
    n = gamma.chart.n
    target = t.target if t.target is not None else gamma.chart

    def ev(y):
        y = as_points(y, n)
        x = t.inverse(y)
        K = t.dx_dy(y)  # K[a, j] = dx^a/dy^j
        det = np.linalg.det(K)
        bad = np.abs(det) < 1e-14
        if np.any(bad):
            raise ChartDegeneracyError(y[np.flatnonzero(bad)[0]])
        J = np.linalg.inv(K)  # J[i, a] = dy^i/dx^a
        G = gamma.eval(x)
        H = t.d2x_dy2(y)
        out = np.einsum("...ia,...abc,...bj,...ck->...ijk", J, G, K, K)
        out = out + np.einsum("...ia,...ajk->...ijk", J, H)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    sing = _transport_singular(gamma.singular, t)
    return ChristoffelField(target, ev, sing, dict(gamma.integrability), True, gamma.analytic, f"{gamma.name}~")


def _transport_singular(sing: SingularSet, t: Transition) -> SingularSet:
    out = []
    for s in sing:
        if s.kind == "point":
            out.append(PointStratum(tuple(t.forward(np.asarray(s.point)[None])[0]), s.radius))
    return SingularSet(tuple(out))


def transport_field(V: HalfDensityField, transition: Transition, support, name=None) -> HalfDensityField:
    """Push a half-density field into the target chart.

    ``v_y^i(y) = dy^i/dx^a v_x^a(x(y)) |det dx/dy|^{1/2}``; derivatives by
    central differences. ``support`` is a target-chart box containing the image.
    """
    n = V.n
    t = transition

    def coeffs(y):
        y = as_points(y, n)
        K = t.dx_dy(y)
        J = np.linalg.inv(K)
        w = np.sqrt(np.abs(np.linalg.det(K)))
        return np.einsum("...ia,...a->...i", J, V.coeffs(t.inverse(y))) * w[..., None]

    target = t.target if t.target is not None else V.chart
    return HalfDensityField(target, coeffs, support, V.lipschitz, V.compact, None, None, V.fd_step, name or f"{V.name}~")


def half_density_covariant_derivative(gamma: ChristoffelField, V: HalfDensityField, x) -> np.ndarray:
    """``(nabla_i v^j)(x) = d_i v^j + Gamma^j_{ki} v^k - 1/2 tau_i v^j``."""
    x = as_points(x, V.n)
    gam = gamma(x)
    return covariant_from_parts(gam, V(x), V.derivative(x))


def covariant_from_parts(gam, v, dv):
    n = v.shape[-1]
    # loops over the (small) contracted index beat einsum on large point batches
    tau = gam[..., 0, 0, :].copy()
    gv = gam[..., :, 0, :] * v[..., 0, None, None]
    for k in range(1, n):
        tau += gam[..., k, k, :]
        gv += gam[..., :, k, :] * v[..., k, None, None]
    return dv + np.swapaxes(gv, -1, -2) - 0.5 * tau[..., :, None] * v[..., None, :]


def perturb(gamma: ChristoffelField, T: ConnectionPerturbation) -> ChristoffelField:
    """Pointwise sum ``Gamma + T``."""
    if gamma.chart.n != T.chart.n or gamma.chart.lo != T.chart.lo or gamma.chart.hi != T.chart.hi:
        raise ChartMismatchError("perturbation lives on a different chart")

    def ev(x):
        return gamma.eval(x) + T.eval(x)

    integ = {k: max(v, "Linf", key=INTEGRABILITY_ORDER.__getitem__) for k, v in gamma.integrability.items()}
    return replace(gamma, eval=ev, integrability=integ, name=f"{gamma.name}+T")


def levi_civita_check(g: MetricField, gamma: ChristoffelField, x, h=1e-4) -> float:
    """Residual of metric compatibility ``d_k g_ij - G^l_ik g_lj - G^l_jk g_il``."""
    x = as_points(x, g.chart.n)
    gx = g.eval(x)
    dg = central_derivative(g.eval, x, h)
    gam = gamma(x)
    res = dg - np.einsum("...lik,...lj->...kij", gam, gx) - np.einsum("...ljk,...il->...kij", gam, gx)
    return float(np.max(np.abs(res)))
