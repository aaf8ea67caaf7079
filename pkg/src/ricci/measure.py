"""Extract the Ricci measure (atoms, curve densities, absolutely continuous part) by localized pairings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import SingularEvaluationError
from .fields import cutoff_field, plateau_field, plateau_scalar, product, radial_cutoff, random_plateau
from .geometry import ChristoffelField, CurveStratum, HalfDensityField, HyperplanePiece, MetricField, SingularSet, as_points
from .qform import q_form, ricci_symmetrized
from .quadrature import DEFAULT_SCHEME, QuadratureScheme, integrate


# --------------------------------------------------------------------------- ladders

# Ladder rungs only need the atom to ~1e-4, and the shell tail below 1e-5 of the
# diagonal is covered by the geometric tail estimate.
MEASURE_SCHEME = DEFAULT_SCHEME.with_(rel_tol=1e-5, r_min_factor=1e-5)


@dataclass(frozen=True)
class BumpFamily:
    """Cutoffs at scales ``eps_k = eps0 2^-k``, ``k = 0..levels``, with direction pair ``(a, b)``."""

    center: tuple
    eps0: float
    levels: int = 4
    a: Optional[tuple] = None
    b: Optional[tuple] = None
    inner_fraction: float = 0.5
    shape: str = "box"

    def __post_init__(self):
        if self.eps0 <= 0 or self.levels < 1:
            raise ValueError("need eps0 > 0 and at least two ladder rungs")
        if self.shape not in ("box", "radial"):
            raise ValueError(f"unknown cutoff shape {self.shape!r}")

    def cutoff(self, eps, mask=None, along=None):
        """Cutoff at scale ``eps``: 1 within ``inner_fraction*eps`` of the center, 0 beyond ``eps``.

        ``box`` measures distance in the max-norm (a tensor plateau whose
        kinks align with the quadrature shells); ``radial`` uses the
        Euclidean norm. ``mask`` selects the transverse axes and ``along``
        ``(axis, lo, hi, inner_lo, inner_hi)`` adds a plateau along the remaining one.
        """
        c = np.asarray(self.center, float)
        n = len(c)
        mask = np.ones(n, bool) if mask is None else np.asarray(mask, bool)
        if self.shape == "radial":
            chi = radial_cutoff(c, eps, mask=mask, inner_fraction=self.inner_fraction)
            if along is None:
                return chi
            ax, lo, hi, ilo, ihi = along
            return product(chi, plateau_scalar([lo] * n, [hi] * n, [ilo] * n, [ihi] * n, axes=[ax]))
        r = self.inner_fraction * eps
        lo, hi, ilo, ihi = c - eps, c + eps, c - r, c + r
        axes = list(np.flatnonzero(mask))
        if along is not None:
            ax, lo[ax], hi[ax], ilo[ax], ihi[ax] = along
            axes.append(ax)
        return plateau_scalar(lo, hi, ilo, ihi, axes=sorted(axes))

    @property
    def ladder(self):
        return self.eps0 * 0.5 ** np.arange(self.levels + 1)

    def lipschitz(self, k):
        """Lipschitz constant of the k-th cutoff (grows like 1/eps_k)."""
        return 1.875 / ((1.0 - self.inner_fraction) * self.ladder[k])

    def fits(self, chart, mask=None) -> bool:
        c = np.asarray(self.center, float)
        mask = np.ones(len(c), bool) if mask is None else mask
        lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
        return bool(np.all(((c - self.eps0 > lo) & (c + self.eps0 < hi)) | ~mask))


@dataclass
class LadderEstimate:
    """Extrapolated limit of a scale ladder."""

    values: np.ndarray
    errors: np.ndarray
    eps: np.ndarray
    limit: float
    ci: float
    cauchy: bool

    @property
    def detected(self) -> bool:
        return self.cauchy and abs(self.limit) > self.ci

    def rows(self):
        return [(k, float(v), float(e)) for k, (v, e) in enumerate(zip(self.values, self.errors))]


def extrapolate_ladder(values, errors, eps, noise=1e-9) -> LadderEstimate:
    """Fit ``value(k) = m + C rho^k`` through the last three rungs (Aitken's delta-squared)."""
    q = np.asarray(values, float)
    e = np.asarray(errors, float)
    floor = noise + 10.0 * float(np.max(e)) if len(e) else noise
    d = np.diff(q)
    cauchy = bool(np.all(np.abs(d[1:]) <= 1.05 * np.abs(d[:-1]) + floor)) if len(d) > 1 else True

    def aitken(q3):
        d1, d2 = q3[1] - q3[0], q3[2] - q3[1]
        den = d2 - d1
        if abs(d2) <= floor or abs(den) <= floor:
            return q3[2]
        ratio = d2 / d1 if d1 != 0 else np.inf
        if not abs(ratio) < 1.0:
            return q3[2]
        return q3[2] - d2 * d2 / den

    if len(q) < 3:
        limit = float(q[-1])
        ci = float(abs(d[-1]) + floor) if len(d) else floor
    else:
        limit = float(aitken(q[-3:]))
        prev = float(aitken(q[-4:-1])) if len(q) >= 4 else float(q[-2])
        ci = abs(limit - prev) + floor
        if abs(d[-1]) <= floor:
            ci = min(ci, abs(d[-1]) + floor)
    return LadderEstimate(q, e, np.asarray(eps, float), limit, float(ci), cauchy)


# --------------------------------------------------------------------------- atoms


def _default_eps0(chart, center, mask=None, fraction=0.5):
    c = np.asarray(center, float)
    lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
    room = np.minimum(c - lo, hi - c)
    if mask is not None:
        room = room[mask]
    return fraction * float(np.min(room))


def _constant_plateau(chart, center, half, const, mask=None, along=None):
    """Field equal to ``const`` on the box ``center +- half`` (transverse) and ``along`` (tangential)."""
    c = np.asarray(center, float)
    lo, hi = np.array(chart.lo), np.array(chart.hi)
    ilo, ihi = c - half, c + half
    if along is not None:
        ax, alo, ahi = along
        ilo[ax], ihi[ax] = alo, ahi
    olo = ilo - 0.5 * (ihi - ilo)
    ohi = ihi + 0.5 * (ihi - ilo)
    olo = np.maximum(olo, lo + 1e-9 * (hi - lo))
    ohi = np.minimum(ohi, hi - 1e-9 * (hi - lo))
    ilo = np.maximum(ilo, olo + 1e-3 * (ohi - olo))
    ihi = np.minimum(ihi, ohi - 1e-3 * (ohi - olo))
    return plateau_field(chart, olo, ohi, ilo, ihi, const, name="W")


def singular_mass_at(gamma: ChristoffelField, x0, a, b, family: Optional[BumpFamily] = None,
                     scheme: QuadratureScheme = MEASURE_SCHEME) -> LadderEstimate:
    """Extrapolated ``a^k m_kl b^l`` of the measure at ``x0`` from ``Q(chi_k a, W_b)``."""
    chart = gamma.chart
    x0 = np.asarray(x0, float)
    if family is None:
        family = BumpFamily(tuple(x0), _default_eps0(chart, x0))
    if not family.fits(chart):
        raise ValueError("bump ladder leaves the chart")
    W = _constant_plateau(chart, x0, family.eps0, b)
    vals, errs = [], []
    for eps in family.ladder:
        V = cutoff_field(family.cutoff(eps), chart, a, name="chiV")
        r = q_form(gamma, V, W, scheme, split=False)
        vals.append(r.value)
        errs.append(r.error)
    return extrapolate_ladder(vals, errs, family.ladder, noise=10 * scheme.abs_tol)


def mass_matrix(gamma, x0, family=None, scheme=MEASURE_SCHEME):
    """Symmetric atom mass matrix from the ``n(n+1)/2`` coordinate direction pairs."""
    n = gamma.chart.n
    I = np.eye(n)
    m = np.zeros((n, n))
    ci = np.zeros((n, n))
    traces = {}
    for k in range(n):
        for l in range(k, n):
            est = singular_mass_at(gamma, x0, I[k], I[l], family, scheme)
            m[k, l] = m[l, k] = est.limit
            ci[k, l] = ci[l, k] = est.ci
            traces[(k, l)] = est
    return m, ci, traces


# --------------------------------------------------------------------------- curves


def curve_frame(stratum, n):
    """``(along_axis, base_point)`` of an axis-aligned curve or a 2-D hyperplane piece."""
    if isinstance(stratum, CurveStratum):
        ax = stratum.axis()
        if ax is None:
            raise NotImplementedError("curve densities need an axis-aligned curve stratum")
        return ax, stratum.array[0].copy()
    if isinstance(stratum, HyperplanePiece) and n == 2:
        base = np.zeros(2)
        base[stratum.axis] = stratum.offset
        return 1 - stratum.axis, base
    raise ValueError(f"stratum {stratum!r} is not a curve")


@dataclass
class CurveSample:
    s: float
    point: np.ndarray
    estimate: LadderEstimate


def curve_density_along(gamma: ChristoffelField, stratum, samples, a, b, eps0=None, levels=3,
                        along_half_width=None, scheme: QuadratureScheme = MEASURE_SCHEME, shape="box"):
    """Coordinate density ``a^k M_kl(s) b^l`` per unit curve parameter at each sample.

    Uses ``V = chi_eps(transverse) psi(along) a`` and a plateau ``W = b`` on
    the whole tube; the value ``Q(V, W) / int psi`` tends to the psi-weighted
    average of the density as the tube shrinks.
    """
    chart = gamma.chart
    n = chart.n
    ax, base = curve_frame(stratum, n)
    mask = np.ones(n, bool)
    mask[ax] = False
    lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
    span = hi[ax] - lo[ax]
    hw = along_half_width if along_half_width is not None else 0.15 * span
    out = []
    for s in np.atleast_1d(samples):
        p = base.copy()
        p[ax] = s
        if s - hw <= lo[ax] or s + hw >= hi[ax]:
            raise ValueError(f"curve sample {s} is too close to the chart edge")
        e0 = eps0 if eps0 is not None else _default_eps0(chart, p, mask)
        fam = BumpFamily(tuple(p), e0, levels, shape=shape)
        along = (ax, s - hw, s + hw, s - 0.5 * hw, s + 0.5 * hw)
        mass = integrate(lambda t: plateau_scalar([s - hw], [s + hw], [s - 0.5 * hw], [s + 0.5 * hw]).value(t),
                         ([s - hw], [s + hw]), breakpoints={0: [s - 0.5 * hw, s + 0.5 * hw]}).value
        W = _constant_plateau(chart, p, e0, b, along=(ax, s - hw, s + hw))
        vals, errs = [], []
        for eps in fam.ladder:
            V = cutoff_field(fam.cutoff(eps, mask, along), chart, a, name="chiV")
            r = q_form(gamma, V, W, scheme, split=False)
            vals.append(r.value / mass)
            errs.append(r.error / mass)
        out.append(CurveSample(float(s), p, extrapolate_ladder(vals, errs, fam.ladder, noise=10 * scheme.abs_tol)))
    return out


def unit_length_density(M, u, w, g0, along):
    """Convert a coordinate density matrix to the density for ``g0``-unit vectors per unit length.

    Coefficients of a half-density with vector part ``u`` are ``u (det g0)^{1/4}``;
    arc length along the coordinate curve is ``sqrt(g0_aa)`` per unit parameter.
    """
    det = np.linalg.det(g0)
    return float(np.asarray(u) @ M @ np.asarray(w) * np.sqrt(det) / np.sqrt(g0[along, along]))


def density_matrix_along(gamma, stratum, samples, scheme=MEASURE_SCHEME, **kw):
    """Full coordinate density matrices ``M(s)`` at the samples, with ladder traces."""
    n = gamma.chart.n
    I = np.eye(n)
    mats = np.zeros((len(samples), n, n))
    cis = np.zeros((len(samples), n, n))
    traces = {}
    for k in range(n):
        for l in range(k, n):
            res = curve_density_along(gamma, stratum, samples, I[k], I[l], scheme=scheme, **kw)
            for j, cs in enumerate(res):
                mats[j, k, l] = mats[j, l, k] = cs.estimate.limit
                cis[j, k, l] = cis[j, l, k] = cs.estimate.ci
            traces[(k, l)] = res
    return mats, cis, traces


def background_metric(metric: Optional[MetricField], point):
    n = len(point)
    if metric is None:
        return np.eye(n)
    bg = getattr(metric, "background", None)
    if bg is not None:
        return bg(np.asarray(point, float)[None])[0]
    return metric.eval(np.asarray(point, float)[None])[0]


def split_directions(g0, along):
    """``g0``-unit tangential vector and ``g0``-orthonormal normal vectors."""
    n = g0.shape[0]
    t = np.zeros(n)
    t[along] = 1.0
    t /= np.sqrt(t @ g0 @ t)
    normals = []
    for k in range(n):
        if k == along:
            continue
        v = np.zeros(n)
        v[k] = 1.0
        for u in [t] + normals:
            v = v - (u @ g0 @ v) * u
        normals.append(v / np.sqrt(v @ g0 @ v))
    return t, normals


# --------------------------------------------------------------------------- smooth part


def ac_density_grid(gamma: ChristoffelField, grid, step=None):
    """``R_(kl)`` by finite differences of Gamma at grid points outside the exclusion radii."""
    x = as_points(grid, gamma.chart.n)
    hit = gamma.singular.inside_exclusion(x)
    if hit is not None:
        raise SingularEvaluationError(hit[0], hit[1])
    h = step if step is not None else 1e-4 * gamma.chart.diagonal
    return ricci_symmetrized(gamma.eval, x, h)


def ac_density_adaptive(gamma: ChristoffelField, x, step=None):
    """Like ``ac_density_grid`` but shrinks the step near strata so stencils stay on one side."""
    h0 = step if step is not None else 1e-4 * gamma.chart.diagonal
    d = gamma.singular.distance(x)
    h = np.minimum(h0, 0.25 * d)
    h = np.where(h > 0, h, h0)
    return ricci_symmetrized(gamma.eval, x, h)


# --------------------------------------------------------------------------- report


@dataclass(frozen=True)
class MeasureConfig:
    levels: int = 4
    curve_levels: int = 3
    curve_samples: int = 3
    grid_count: int = 5
    pairs: int = 1
    seed: int = 0
    eps0: Optional[float] = None


@dataclass
class MeasureReport:
    atoms: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    ac_grid: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    def pair(self, gamma, V, W, scheme=DEFAULT_SCHEME):
        """Pair the extracted measure with ``(V, W)``: atoms + curve integrals + smooth part."""
        return measure_pairing(self, gamma, V, W, scheme)

    def as_dict(self):
        return {
            "atoms": [{"point": list(map(float, a["point"])), "mass_matrix": a["mass"].tolist(),
                       "ci": a["ci"].tolist()} for a in self.atoms],
            "curves": [{"polyline": c["polyline"], "along_axis": c["along"],
                        "samples": list(map(float, c["s"])), "densities": c["M"].tolist(),
                        "ci": c["ci"].tolist(), "tangential": c["tangential"], "normal": c["normal"]}
                       for c in self.curves],
            "ac_grid": {"points": self.ac_grid.get("points", np.zeros((0,))).tolist(),
                        "values": self.ac_grid.get("values", np.zeros((0,))).tolist()},
            "checks": self.checks,
        }


def _interp_matrix(s_samples, mats, s):
    s = np.atleast_1d(s)
    if len(s_samples) == 1:
        return np.broadcast_to(mats[0], s.shape + mats.shape[1:])
    out = np.empty(s.shape + mats.shape[1:])
    for idx in np.ndindex(*mats.shape[1:]):
        out[(...,) + idx] = np.interp(s, s_samples, mats[(slice(None),) + idx])
    return out


def measure_pairing(report: MeasureReport, gamma, V, W, scheme=DEFAULT_SCHEME):
    n = gamma.chart.n
    lo = np.maximum(np.asarray(gamma.chart.lo), np.maximum(V.support_box()[0], W.support_box()[0]))
    hi = np.minimum(np.asarray(gamma.chart.hi), np.minimum(V.support_box()[1], W.support_box()[1]))
    parts = {"atoms": 0.0, "curves": 0.0, "ac": 0.0}
    parts_abs = {"atoms": 0.0, "curves": 0.0, "ac": 0.0}
    if np.any(hi <= lo):
        return 0.0, parts, parts_abs
    for atom in report.atoms:
        p = np.asarray(atom["point"], float)
        if np.all((p >= lo) & (p <= hi)):
            t = float(V(p[None])[0] @ atom["mass"] @ W(p[None])[0])
            parts["atoms"] += t
            parts_abs["atoms"] += abs(t)
    for c in report.curves:
        ax, base = c["along"], np.asarray(c["base"], float)
        others = [k for k in range(n) if k != ax]
        if not all(lo[k] <= base[k] <= hi[k] for k in others):
            continue
        s_samp, mats = np.asarray(c["s"]), c["M"]

        def line(t, ax=ax, base=base, s_samp=s_samp, mats=mats):
            x = np.repeat(base[None], len(t), axis=0)
            x[:, ax] = t[:, 0]
            M = _interp_matrix(s_samp, mats, t[:, 0])
            return np.einsum("...k,...kl,...l->...", V(x), M, W(x))

        bps = [v for F in (V, W) for v in ((F.breakpoints or {}).get(ax, []))] + list(s_samp)
        r = integrate(line, ([lo[ax]], [hi[ax]]), scheme, breakpoints={0: bps})
        r_abs = integrate(lambda t: np.abs(line(t)), ([lo[ax]], [hi[ax]]), scheme, breakpoints={0: bps})
        parts["curves"] += r.value
        parts_abs["curves"] += r_abs.value

    def ac(x):
        return np.einsum("...k,...kl,...l->...", V(x), ac_density_adaptive(gamma, x), W(x))

    bps = {}
    for F in (V, W):
        for a, vals in (F.breakpoints or {}).items():
            bps.setdefault(a, []).extend(vals)
    # stay off the exclusion radii: FD stencils there are meaningless
    sch = scheme.with_(r_min=max(s.radius for s in gamma.singular)) if len(gamma.singular) else scheme
    # the pairing is compared at percent level; resolving FD noise of a near-zero density to 1e-10 is wasted work
    sch = sch.with_(rel_tol=max(sch.rel_tol, 1e-4),
                    abs_tol=max(sch.abs_tol, 1e-6 * (1.0 + parts_abs["atoms"] + parts_abs["curves"])))
    r = integrate(ac, (lo, hi), sch, gamma.singular, bps)
    r_abs = integrate(lambda x: np.abs(ac(x)), (lo, hi), sch, gamma.singular, bps)
    parts["ac"] = r.value
    parts_abs["ac"] = r_abs.value
    return sum(parts.values()), parts, parts_abs


def _grid_away(chart, singular: SingularSet, count):
    lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
    axes = [np.linspace(a, b, count + 2)[1:-1] for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, chart.n)
    keep = singular.distance(pts) > 0.05 * chart.diagonal
    return pts[keep]


def _curve_samples(chart, ax, count):
    lo, hi = chart.lo[ax], chart.hi[ax]
    mid = 0.5 * (lo + hi)
    if count == 1:
        return np.array([mid])
    return np.linspace(lo + 0.3 * (hi - lo), hi - 0.3 * (hi - lo), count)


PAIRING_FLOOR = 5e-5


def assemble_measure_report(gamma: ChristoffelField, singular: Optional[SingularSet] = None,
                            config: MeasureConfig = MeasureConfig(), scheme: QuadratureScheme = MEASURE_SCHEME,
                            metric: Optional[MetricField] = None) -> MeasureReport:
    singular = gamma.singular if singular is None else singular
    chart = gamma.chart
    n = chart.n
    report = MeasureReport()
    for i, s in enumerate(singular):
        if s.kind == "point":
            fam = BumpFamily(s.point, config.eps0 or _default_eps0(chart, s.point), config.levels)
            m, ci, traces = mass_matrix(gamma, s.point, fam, scheme)
            report.atoms.append({"point": s.point, "mass": m, "ci": ci})
            for key, est in traces.items():
                report.traces[f"atom{i}_{key[0]}{key[1]}"] = est.rows()
        else:
            ax, base = curve_frame(s, n)
            samples = _curve_samples(chart, ax, config.curve_samples)
            mats, cis, traces = density_matrix_along(gamma, s, samples, scheme, levels=config.curve_levels,
                                                     eps0=config.eps0)
            tang, norm = [], []
            for j, sj in enumerate(samples):
                p = base.copy()
                p[ax] = sj
                g0 = background_metric(metric, p)
                t, normals = split_directions(g0, ax)
                tang.append(unit_length_density(mats[j], t, t, g0, ax))
                norm.append([unit_length_density(mats[j], u, u, g0, ax) for u in normals])
            poly = s.vertices if isinstance(s, CurveStratum) else [list(base), list(base + np.eye(n)[ax])]
            report.curves.append({"polyline": [list(map(float, v)) for v in poly], "along": ax, "base": base,
                                  "s": samples, "M": mats, "ci": cis, "tangential": tang, "normal": norm})
            for key, res in traces.items():
                for j, cs in enumerate(res):
                    report.traces[f"curve{i}_s{j}_{key[0]}{key[1]}"] = cs.estimate.rows()
    pts = _grid_away(chart, singular, config.grid_count)
    report.ac_grid = {"points": pts, "values": ac_density_grid(gamma, pts) if len(pts) else np.zeros((0, n, n))}

    rng = np.random.default_rng(config.seed)
    residuals = []
    for _ in range(config.pairs):
        V = random_plateau(chart, rng, name="V")
        W = random_plateau(chart, rng, name="W")
        q = q_form(gamma, V, W, scheme, split=False).value
        paired, parts, parts_abs = measure_pairing(report, gamma, V, W, scheme)
        scale = abs(q) + sum(parts_abs.values())
        # absolute floor: 2% of PAIRING_FLOOR is 1e-6, so pairs missing every stratum are not judged on noise
        residuals.append({"q": q, "paired": paired, "parts": parts, "scale": scale,
                          "relative": abs(q - paired) / max(scale, PAIRING_FLOOR)})
    worst = max((r["relative"] for r in residuals), default=0.0)
    report.checks = {"pairing": residuals, "pairing_residual": worst, "pairing_ok": bool(worst <= 0.02)}
    return report
