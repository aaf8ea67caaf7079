"""Built-in metric constructors addressable by name from the runner."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import (
    Chart,
    CurveStratum,
    EMPTY,
    HyperplanePiece,
    MetricField,
    PointStratum,
    SingularSet,
    Transition,
    central_derivative,
    christoffel_from_metric,
    christoffel_transform,
)


# --------------------------------------------------------------------------- conformal factors


@dataclass(frozen=True)
class ConformalFactor:
    """``phi`` with gradient, optional Hessian/Laplacian and the curvature measure's singular part.

    ``atoms`` lists ``(point, mass)`` of ``-Laplacian(phi)``; ``lines`` lists
    ``(axis, offset, density)`` for line densities supported on
    ``{x_axis = offset}``.
    """

    phi: Callable
    grad: Callable
    hess: Optional[Callable] = None
    laplacian: Optional[Callable] = None
    atoms: tuple = ()
    lines: tuple = ()
    singular: SingularSet = EMPTY
    harmonic: bool = False
    name: str = "phi"

    def laplacian_at(self, x, h=1e-4):
        if self.laplacian is not None:
            return self.laplacian(x)
        if self.hess is not None:
            return np.trace(self.hess(x), axis1=-2, axis2=-1)
        d = central_derivative(self.grad, x, h)
        return np.trace(d, axis1=-2, axis2=-1)

    def hessian_at(self, x, h=1e-4):
        if self.hess is not None:
            return self.hess(x)
        return central_derivative(self.grad, x, h)


def _r2(x):
    return np.sum(x * x, axis=-1)


def gaussian_factor(amplitude=1.0, width=1.0):
    """``phi = A exp(-|x|^2 / w^2)``."""
    a, w2 = float(amplitude), float(width) ** 2

    def phi(x):
        return a * np.exp(-_r2(x) / w2)

    def grad(x):
        return (-2.0 / w2) * x * phi(x)[..., None]

    def hess(x):
        n = x.shape[-1]
        p = phi(x)[..., None, None]
        return p * (4.0 / w2 ** 2 * x[..., :, None] * x[..., None, :] - 2.0 / w2 * np.eye(n))

    return ConformalFactor(phi, grad, hess, None, name=f"gaussian({a},{width})")


def harmonic_factor(a=0.3, b=0.2):
    """``phi = a (x1^2 - x2^2) + b x1`` (harmonic in the plane)."""

    def phi(x):
        return a * (x[..., 0] ** 2 - x[..., 1] ** 2) + b * x[..., 0]

    def grad(x):
        return np.stack([2 * a * x[..., 0] + b, -2 * a * x[..., 1]], -1)

    def hess(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 2 * a
        out[..., 1, 1] = -2 * a
        return out

    return ConformalFactor(phi, grad, hess, lambda x: np.zeros(x.shape[:-1]), harmonic=True, name=f"harmonic({a},{b})")


def cone_factor(alpha, n=2, radius=1e-6):
    """``phi = -alpha ln|x|``; for ``n = 2`` the curvature measure is an atom ``2 pi alpha``."""
    alpha = float(alpha)

    def phi(x):
        return -0.5 * alpha * np.log(_r2(x))

    def grad(x):
        return -alpha * x / _r2(x)[..., None]

    def hess(x):
        r2 = _r2(x)[..., None, None]
        return -alpha * (np.eye(x.shape[-1]) / r2 - 2.0 * x[..., :, None] * x[..., None, :] / r2 ** 2)

    atoms = (((0.0,) * n, 2 * np.pi * alpha),) if n == 2 else ()
    sing = SingularSet((PointStratum((0.0,) * n, radius),))
    return ConformalFactor(phi, grad, hess, None, atoms, (), sing, harmonic=(n == 2), name=f"cone({alpha})")


def mollified_cone_factor(alpha, eps, n=2):
    """``phi = -alpha/2 ln(|x|^2 + eps^2)``: a smooth stand-in for the cone."""
    alpha, e2 = float(alpha), float(eps) ** 2

    def phi(x):
        return -0.5 * alpha * np.log(_r2(x) + e2)

    def grad(x):
        return -alpha * x / (_r2(x) + e2)[..., None]

    def hess(x):
        q = (_r2(x) + e2)[..., None, None]
        return -alpha * (np.eye(x.shape[-1]) / q - 2.0 * x[..., :, None] * x[..., None, :] / q ** 2)

    return ConformalFactor(phi, grad, hess, None, name=f"mollified_cone({alpha},{eps})")


def edge_factor(c, radius=1e-6):
    """``phi = -c |x1|``: curvature measure is the line density ``2c`` on ``{x1 = 0}``."""
    c = float(c)

    def phi(x):
        return -c * np.abs(x[..., 0])

    def grad(x):
        out = np.zeros(x.shape)
        out[..., 0] = -c * np.sign(x[..., 0])
        return out

    def hess(x):
        return np.zeros(x.shape + (x.shape[-1],))

    sing = SingularSet((HyperplanePiece(0, 0.0, radius),))
    return ConformalFactor(phi, grad, hess, None, (), ((0, 0.0, 2 * c),), sing, harmonic=True, name=f"edge({c})")


def sphere_factor(r0=1.0):
    """Stereographic round sphere of radius ``r0``: ``e^{2 phi} = 4 r0^2 / (1 + |x|^2)^2``."""
    r0 = float(r0)

    def phi(x):
        return np.log(2 * r0) - np.log1p(_r2(x))

    def grad(x):
        return -2.0 * x / (1.0 + _r2(x))[..., None]

    def hess(x):
        q = (1.0 + _r2(x))[..., None, None]
        return -2.0 * np.eye(x.shape[-1]) / q + 4.0 * x[..., :, None] * x[..., None, :] / q ** 2

    return ConformalFactor(phi, grad, hess, None, name=f"sphere({r0})")


FACTORS = {
    "gaussian": gaussian_factor,
    "harmonic": harmonic_factor,
    "cone": cone_factor,
    "edge": edge_factor,
    "sphere": sphere_factor,
    "mollified_cone": mollified_cone_factor,
}


def factor_from_spec(spec) -> ConformalFactor:
    if isinstance(spec, ConformalFactor):
        return spec
    spec = dict(spec)
    kind = spec.pop("kind")
    return FACTORS[kind](**spec)


# --------------------------------------------------------------------------- metrics


def conformal_christoffel(grad_phi):
    """``Gamma^i_jk = delta_ij d_k phi + delta_ik d_j phi - delta_jk d_i phi``."""
    n = grad_phi.shape[-1]
    out = np.zeros(grad_phi.shape + (n, n))
    for a in range(n):
        out[..., a, a, :] += grad_phi
        out[..., a, :, a] += grad_phi
        out[..., :, a, a] -= grad_phi
    return out


def conformal_metric(chart: Chart, factor: ConformalFactor, regularity="smooth", name=None, tags=()) -> MetricField:
    n = chart.n

    def ev(x):
        return np.exp(2.0 * factor.phi(x))[..., None, None] * np.eye(n)

    def dev(x):
        e = np.exp(2.0 * factor.phi(x))
        return 2.0 * (e[..., None] * factor.grad(x))[..., :, None, None] * np.eye(n)

    def chris(x):
        return conformal_christoffel(factor.grad(x))

    m = MetricField(chart, ev, factor.singular, dev, chris, regularity, name or f"conformal[{factor.name}]", tuple(tags))
    object.__setattr__(m, "factor", factor)
    return m


def unit_box(n, half=1.0):
    return Chart(n, (-half,) * n, (half,) * n)


def flat(n=2, half=1.0):
    chart = unit_box(n, half)

    def ev(x):
        return np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()

    def dev(x):
        return np.zeros(x.shape[:-1] + (n, n, n))

    def chris(x):
        return np.zeros(x.shape[:-1] + (n, n, n))

    m = MetricField(chart, ev, EMPTY, dev, chris, "smooth", f"flat({n})")
    zero = ConformalFactor(lambda x: np.zeros(x.shape[:-1]), lambda x: np.zeros(x.shape),
                           lambda x: np.zeros(x.shape + (n,)), None, harmonic=True, name="zero")
    object.__setattr__(m, "factor", zero)
    return m


def conformal2d(phi_spec, half=1.0):
    return conformal_metric(unit_box(2, half), factor_from_spec(phi_spec))


def cone(n=2, alpha=0.5, half=1.0, radius=1e-6):
    if alpha >= 1:
        raise ValueError("cone parameter alpha must be < 1")
    f = cone_factor(alpha, n, radius)
    return conformal_metric(unit_box(n, half), f, "W11loc", f"cone(n={n}, alpha={alpha})")


def edge(c=1.0, half=1.0):
    if c <= 0:
        raise ValueError("edge parameter c must be positive")
    return conformal_metric(unit_box(2, half), edge_factor(c), "lipschitz", f"edge(c={c})")


def sphere_chart(r0=1.0, half=1.5):
    return conformal_metric(unit_box(2, half), sphere_factor(r0), "smooth", f"sphere_chart(r0={r0})")


def kahler1d(phi_spec, half=1.0):
    f = factor_from_spec(phi_spec)
    return conformal_metric(unit_box(2, half), f, "smooth", f"kahler1d[{f.name}]", tags=("kahler",))


def mollified_cone(alpha, eps, half=1.0):
    return conformal_metric(unit_box(2, half), mollified_cone_factor(alpha, eps), "smooth",
                            f"mollified_cone(alpha={alpha}, eps={eps})")


# --------------------------------------------------------------------------- surfaces of revolution


@dataclass(frozen=True)
class Profile:
    """Radius function ``rho(s)`` of a surface of revolution, glued at ``s = 0``."""

    rho: Callable
    drho: Callable
    curvature: Callable  # Gaussian curvature -rho''/rho as a function of s
    jump_normal: float  # singular density of R_(ss) per unit length
    jump_tangential: float  # singular density for unit tangential vectors per unit length
    name: str = "profile"


def revolution_metric(profile: Profile, s_half, radius=1e-6, name=None) -> MetricField:
    """``g = ds^2 + rho(s)^2 dtheta^2`` on ``[-s_half, s_half] x [-pi, pi]``."""
    chart = Chart(2, (-s_half, -np.pi), (s_half, np.pi))
    sing = SingularSet((CurveStratum(((0.0, -np.pi), (0.0, np.pi)), radius),))

    def ev(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = profile.rho(x[..., 0]) ** 2
        return out

    def dev(x):
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = 2.0 * profile.rho(x[..., 0]) * profile.drho(x[..., 0])
        return out

    def chris(x):
        s = x[..., 0]
        r, dr = profile.rho(s), profile.drho(s)
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = -r * dr
        out[..., 1, 0, 1] = dr / r
        out[..., 1, 1, 0] = dr / r
        return out

    m = MetricField(chart, ev, sing, dev, chris, "lipschitz", name or profile.name)
    object.__setattr__(m, "profile", profile)
    return m


def glued_cones(c=0.8, L=2.0):
    """Two cones of total angle ``2 pi c`` truncated at distance ``L`` and glued along the circle."""
    if c <= 0 or L <= 0:
        raise ValueError("glued cones need c > 0 and L > 0")

    def rho(s):
        return c * (L - np.abs(s))

    def drho(s):
        return -c * np.sign(s)

    prof = Profile(rho, drho, lambda s: np.zeros_like(s), 2.0 / L, 2.0 / L, f"glued_cones(c={c}, L={L})")
    return revolution_metric(prof, 0.5 * L)


def glued_caps(R1=1.0, beta1=np.pi / 3, R2=2.0):
    """Spherical cap of radius ``R1`` (s > 0) glued to a spherical zone of radius ``R2`` (s < 0)."""
    rho0 = R1 * np.sin(beta1)
    beta2 = np.arcsin(rho0 / R2)

    def rho(s):
        return np.where(s >= 0, R1 * np.sin(beta1 - s / R1), R2 * np.sin(beta2 + s / R2))

    def drho(s):
        return np.where(s >= 0, -np.cos(beta1 - s / R1), np.cos(beta2 + s / R2))

    def curvature(s):
        return np.where(s >= 0, 1.0 / R1 ** 2, 1.0 / R2 ** 2)

    jump = (np.cos(beta1) + np.cos(beta2)) / rho0
    prof = Profile(rho, drho, curvature, jump, jump, f"glued_caps(R1={R1}, R2={R2})")
    s_half = 0.6 * min(R1 * beta1, R2 * beta2)
    return revolution_metric(prof, s_half)


# --------------------------------------------------------------------------- cone families


def cone_family_trivial(alpha=0.5, base_length=1.0, half=1.0, radius=1e-6):
    """Trivial plane bundle over a circle of length ``base_length``, fibres coned off at the zero section.

    Coordinates ``(x1, x2, theta)``; ``g = |x|^{-2 alpha} (dx1^2 + dx2^2) + dtheta^2``.
    """
    chart = Chart(3, (-half, -half, 0.0), (half, half, float(base_length)))
    sing = SingularSet((CurveStratum(((0.0, 0.0, 0.0), (0.0, 0.0, float(base_length))), radius),))
    f = cone_factor(alpha, 2)

    def ev(x):
        out = np.zeros(x.shape[:-1] + (3, 3))
        w = np.exp(2 * f.phi(x[..., :2]))
        out[..., 0, 0] = w
        out[..., 1, 1] = w
        out[..., 2, 2] = 1.0
        return out

    def chris(x):
        out = np.zeros(x.shape[:-1] + (3, 3, 3))
        out[..., :2, :2, :2] = conformal_christoffel(f.grad(x[..., :2]))
        return out

    def background(x):
        return np.broadcast_to(np.eye(3), x.shape[:-1] + (3, 3)).copy()

    m = MetricField(chart, ev, sing, None, chris, "W11loc", f"cone_family(alpha={alpha}, l={base_length})")
    object.__setattr__(m, "background", background)
    object.__setattr__(m, "alpha", float(alpha))
    return m


# --------------------------------------------------------------------------- pullbacks


@dataclass(frozen=True)
class ShearMap:
    """``Phi(x) = (x1 + k sigma(x2), x2)`` with ``sigma`` C^{1,1}."""

    k: float
    sigma: Callable
    dsigma: Callable
    d2sigma: Callable
    name: str = "shear"

    def __call__(self, x):
        y = np.array(x, dtype=float, copy=True)
        y[..., 0] += self.k * self.sigma(x[..., 1])
        return y

    def inverse(self, y):
        x = np.array(y, dtype=float, copy=True)
        x[..., 0] -= self.k * self.sigma(y[..., 1])
        return x

    def jacobian(self, x):
        J = np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()
        J[..., 0, 1] = self.k * self.dsigma(x[..., 1])
        return J

    def hessian(self, x):
        H = np.zeros(x.shape[:-1] + (2, 2, 2))
        H[..., 0, 1, 1] = self.k * self.d2sigma(x[..., 1])
        return H


def lipschitz_shear(k=0.3):
    return ShearMap(k, lambda t: t * np.abs(t), lambda t: 2 * np.abs(t), lambda t: 2 * np.sign(t), f"shear(k={k})")


def smoothed_shear(k=0.3, delta=0.1):
    d2 = delta * delta

    def sigma(t):
        return t * np.sqrt(t * t + d2)

    def dsigma(t):
        q = np.sqrt(t * t + d2)
        return q + t * t / q

    def d2sigma(t):
        q = np.sqrt(t * t + d2)
        return 3 * t / q - t ** 3 / q ** 3

    return ShearMap(k, sigma, dsigma, d2sigma, f"shear(k={k}, delta={delta})")


def pullback(h: MetricField, phi: ShearMap, lipschitz_seam: bool = True) -> MetricField:
    """``g = Phi^* h`` on the same coordinate box, Christoffels via the transformation rule."""
    chart = h.chart

    def ev(x):
        J = phi.jacobian(x)
        return np.einsum("...ai,...ab,...bj->...ij", J, h.eval(phi(x)), J)

    trans = Transition(forward=phi.inverse, inverse=phi, forward_jacobian=lambda y: np.linalg.inv(phi.jacobian(phi.inverse(y))),
                       inverse_jacobian=phi.jacobian, inverse_hessian=phi.hessian, target=chart)
    gam_h = christoffel_from_metric(h, "analytic")
    gam_g = christoffel_transform(gam_h, trans)
    sing = SingularSet((HyperplanePiece(1, 0.0),)) if lipschitz_seam else EMPTY
    reg = "lipschitz" if lipschitz_seam else "smooth"
    m = MetricField(chart, ev, sing, None, gam_g.eval, reg, f"{phi.name}^*{h.name}")
    return m


CONSTRUCTORS = {
    "flat": flat,
    "conformal2d": conformal2d,
    "cone": cone,
    "edge": edge,
    "glued_cones": glued_cones,
    "glued_caps": glued_caps,
    "cone_family_trivial": cone_family_trivial,
    "kahler1d": kahler1d,
    "sphere_chart": sphere_chart,
    "mollified_cone": mollified_cone,
}


def build(name, **params) -> MetricField:
    try:
        ctor = CONSTRUCTORS[name]
    except KeyError:
        raise KeyError(f"unknown metric constructor {name!r}") from None
    return ctor(**params)
