"""Test-field families: plateau bumps, radial cutoffs and their products.

All profiles use the quintic smoothstep ``S(u) = 6u^5 - 15u^4 + 10u^3``,
which is C^2 at both ends, so the resulting fields are Lipschitz with
analytic first derivatives.
"""

from __future__ import annotations

import numpy as np

from .geometry import Chart, HalfDensityField, ScalarField, merge_breakpoints

SMOOTHSTEP_SLOPE = 1.875  # max of S'


def smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def smoothstep_prime(u):
    inside = (u > 0.0) & (u < 1.0)
    u = np.clip(u, 0.0, 1.0)
    return np.where(inside, 30.0 * u * u * (u - 1.0) ** 2, 0.0)


def plateau_1d(t, a, c, d, b):
    """Value and derivative of the 1-D plateau: 0 outside [a, b], 1 on [c, d]."""
    t = np.asarray(t, dtype=float)
    val = np.zeros_like(t)
    der = np.zeros_like(t)
    up = (t > a) & (t < c)
    flat = (t >= c) & (t <= d)
    down = (t > d) & (t < b)
    if c > a:
        u = (t[up] - a) / (c - a)
        val[up] = smoothstep(u)
        der[up] = smoothstep_prime(u) / (c - a)
    val[flat] = 1.0
    if b > d:
        u = (b - t[down]) / (b - d)
        val[down] = smoothstep(u)
        der[down] = -smoothstep_prime(u) / (b - d)
    return val, der


def plateau_scalar(lo, hi, inner_lo, inner_hi, axes=None):
    """Tensor-product plateau bump on the box ``[lo, hi]``, equal to 1 on the inner box.

    ``axes`` restricts the bump to a subset of coordinates (others are
    constant 1); the support is then unbounded along the free axes.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    ilo, ihi = np.asarray(inner_lo, float), np.asarray(inner_hi, float)
    n = len(lo)
    axes = list(range(n)) if axes is None else list(axes)
    if np.any(ilo[axes] < lo[axes]) or np.any(ihi[axes] > hi[axes]) or np.any(ilo[axes] > ihi[axes]):
        raise ValueError("inner plateau box must sit inside the support box")

    def parts(x):
        vals = np.ones(x.shape)
        ders = np.zeros(x.shape)
        for a in axes:
            vals[..., a], ders[..., a] = plateau_1d(x[..., a], lo[a], ilo[a], ihi[a], hi[a])
        return vals, ders

    def value(x):
        return np.prod(parts(x)[0], axis=-1)

    def grad(x):
        vals, ders = parts(x)
        out = np.empty(x.shape)
        for a in range(n):
            others = np.prod(np.delete(vals, a, axis=-1), axis=-1)
            out[..., a] = ders[..., a] * others
        return out

    slope = 0.0
    for a in axes:
        w = min(ilo[a] - lo[a], hi[a] - ihi[a])
        slope = max(slope, SMOOTHSTEP_SLOPE / w if w > 0 else np.inf)
    lipschitz = slope * np.sqrt(len(axes))
    sup_lo = np.where(np.isin(np.arange(n), axes), lo, -np.inf)
    sup_hi = np.where(np.isin(np.arange(n), axes), hi, np.inf)
    bps = {a: sorted({lo[a], ilo[a], ihi[a], hi[a]}) for a in axes}
    return ScalarField(value, grad, (sup_lo, sup_hi), 1.0, lipschitz, bps)


def radial_cutoff(center, eps, mask=None, inner_fraction=0.5):
    """Radial smoothstep: 1 for ``r <= inner_fraction*eps``, 0 for ``r >= eps``.

    ``r`` is measured in the coordinates selected by ``mask`` (all by
    default), so a mask that drops the curve's axis gives a tube cutoff.
    """
    center = np.asarray(center, float)
    n = len(center)
    mask = np.ones(n, bool) if mask is None else np.asarray(mask, bool)
    r_in = inner_fraction * eps
    width = eps - r_in

    def radius(x):
        d = (x - center) * mask
        return d, np.linalg.norm(d, axis=-1)

    def value(x):
        _, r = radius(x)
        return smoothstep((eps - r) / width)

    def grad(x):
        d, r = radius(x)
        u = (eps - r) / width
        s = -smoothstep_prime(u) / width
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, d / r[..., None], 0.0)
        return s[..., None] * unit

    lo = np.where(mask, center - eps, -np.inf)
    hi = np.where(mask, center + eps, np.inf)
    return ScalarField(value, grad, (lo, hi), 1.0, SMOOTHSTEP_SLOPE / width, None)


def product(f: ScalarField, g: ScalarField) -> ScalarField:
    def value(x):
        return f.value(x) * g.value(x)

    def grad(x):
        return f.grad(x) * g.value(x)[..., None] + f.value(x)[..., None] * g.grad(x)

    lo = np.maximum(f.support[0], g.support[0])
    hi = np.minimum(f.support[1], g.support[1])
    return ScalarField(value, grad, (lo, hi), f.sup * g.sup, f.lipschitz * g.sup + g.lipschitz * f.sup,
                       merge_breakpoints(f.breakpoints, g.breakpoints))


def affine_field(chart: Chart, const, linear=None, origin=None, name="V") -> HalfDensityField:
    """Coefficients ``c + A (x - origin)`` on the whole chart (not compactly supported)."""
    n = chart.n
    c = np.asarray(const, float).reshape(n)
    A = np.zeros((n, n)) if linear is None else np.asarray(linear, float)
    o = np.zeros(n) if origin is None else np.asarray(origin, float)

    def coeffs(x):
        return c + (x - o) @ A.T

    def jac(x):
        # d_i v^j = A[j, i]
        return np.broadcast_to(A.T, x.shape[:-1] + (n, n)).copy()

    return HalfDensityField(chart, coeffs, (chart.lo, chart.hi), float(np.linalg.norm(A, 2)), False, jac, None, name=name)


def cutoff_field(chi: ScalarField, chart: Chart, const, linear=None, origin=None, name="V") -> HalfDensityField:
    """Compactly supported field ``chi(x) (c + A (x - origin))``."""
    base = affine_field(chart, const, linear, origin, name)
    lo = np.maximum(np.asarray(chart.lo), chi.support[0])
    hi = np.minimum(np.asarray(chart.hi), chi.support[1])
    base = HalfDensityField(chart, base.coeffs, (tuple(lo), tuple(hi)), base.lipschitz, True, base.jac, None, name=name)
    out = base.scaled(chi, name=name)
    # product rule bound: sup|chi'| * sup|c + A x| + sup|A|
    corner = np.array(np.meshgrid(*[[l, h] for l, h in zip(lo, hi)])).reshape(chart.n, -1).T
    sup = max(np.linalg.norm(base.coeffs(corner), axis=-1).max(), np.linalg.norm(base.coeffs(0.5 * (lo + hi))[None]))
    lip = chi.lipschitz * sup + chi.sup * base.lipschitz
    return HalfDensityField(chart, out.coeffs, out.support, float(lip), True, out.jac, out.breakpoints, name=name)


def plateau_field(chart: Chart, lo, hi, inner_lo, inner_hi, const, linear=None, origin=None, name="V"):
    """The default test field: tensor plateau bump times affine coefficients."""
    chi = plateau_scalar(lo, hi, inner_lo, inner_hi)
    return cutoff_field(chi, chart, const, linear, origin, name)


def centered_plateau(chart: Chart, center, half_width, inner_half_width, const, linear=None, name="V"):
    center = np.asarray(center, float)
    hw = np.broadcast_to(np.asarray(half_width, float), center.shape)
    ihw = np.broadcast_to(np.asarray(inner_half_width, float), center.shape)
    return plateau_field(chart, center - hw, center + hw, center - ihw, center + ihw, const, linear, center, name)


def random_plateau(chart: Chart, rng, margin=0.05, linear=True, avoid=None, name="V"):
    """Random plateau field inside the chart (used by property suites).

    ``avoid`` is a callable ``box -> bool`` rejecting boxes (e.g. ones that
    meet a singular stratum).
    """
    lo = np.asarray(chart.lo)
    hi = np.asarray(chart.hi)
    span = hi - lo
    for _ in range(1000):
        c = rng.uniform(lo + 0.3 * span, hi - 0.3 * span)
        hw = rng.uniform(0.12, 0.28) * span
        blo, bhi = np.maximum(c - hw, lo + margin * span), np.minimum(c + hw, hi - margin * span)
        if avoid is not None and avoid((blo, bhi)):
            continue
        frac = rng.uniform(0.3, 0.6)
        mid = 0.5 * (blo + bhi)
        ilo, ihi = mid - frac * 0.5 * (bhi - blo), mid + frac * 0.5 * (bhi - blo)
        const = rng.uniform(-1, 1, size=chart.n)
        A = rng.uniform(-1, 1, size=(chart.n, chart.n)) if linear else None
        return plateau_field(chart, blo, bhi, ilo, ihi, const, A, mid, name)
    raise RuntimeError("could not place a random plateau field")
