"""Adaptive tensor Gauss-Legendre cubature with geometric shells around strata.

Boxes away from singular strata are refined by bisection, comparing a box's
rule value with the sum over its ``2^n`` children. Boxes touching a stratum
are split into nested shells ``r_m = R_0 rho^m`` (cubes around points, slabs
around hyperplanes, square tubes around axis-aligned curves); each shell is
integrated adaptively and the sequence of shell sums decides integrability.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import IntegrandFailureError
from .geometry import EMPTY, ChristoffelField, SingularSet

CHUNK_POINTS = 1 << 16


@dataclass(frozen=True)
class QuadratureScheme:
    order: int = 5
    rel_tol: float = 1e-6
    abs_tol: float = 1e-10
    max_depth: int = 30
    shell_ratio: float = 0.5
    r_min: Optional[float] = None
    r_min_factor: float = 1e-8
    fit_window: int = 8
    fit_dead_zone: float = 0.05
    max_cells: int = 400_000

    def __post_init__(self):
        if self.order < 2:
            raise ValueError("Gauss-Legendre order must be at least 2")
        if not 0.0 < self.shell_ratio < 1.0:
            raise ValueError("shell ratio must lie in (0, 1)")
        if self.r_min is not None and self.r_min <= 0:
            raise ValueError("r_min must be positive")
        if self.max_depth < 1:
            raise ValueError("max depth must be at least 1")

    def with_(self, **kw) -> "QuadratureScheme":
        return replace(self, **kw)

    def innermost(self, diagonal: float) -> float:
        return self.r_min if self.r_min is not None else self.r_min_factor * diagonal


DEFAULT_SCHEME = QuadratureScheme()


@dataclass
class ShellTrace:
    stratum: int
    radii: np.ndarray
    sums: np.ndarray
    errors: np.ndarray
    slope: Optional[float]
    verdict: str
    tail: float

    @property
    def exponent(self) -> Optional[float]:
        """Growth exponent of the shell sums per unit ``log(1/r)``."""
        if self.slope is None:
            return None
        return self.slope / math.log(1.0 / (self.radii[1] / self.radii[0])) if len(self.radii) > 1 else None

    def rows(self):
        return [(i, float(s), float(e)) for i, (s, e) in enumerate(zip(self.sums, self.errors))]


@dataclass
class IntegralResult:
    value: float
    error: float
    cells: int
    converged: bool
    shells: list = field(default_factory=list)

    @property
    def diverges(self) -> bool:
        return any(s.verdict == "diverges" for s in self.shells)

    @property
    def verdict(self) -> str:
        verdicts = {s.verdict for s in self.shells}
        if "diverges" in verdicts:
            return "diverges"
        if "inconclusive" in verdicts:
            return "inconclusive"
        return "converges"


# --------------------------------------------------------------------------- base rule

_RULES: dict = {}


def tensor_rule(order: int, n: int):
    """Nodes in ``[0,1]^n`` (shape ``(order^n, n)``) and weights summing to 1."""
    key = (order, n)
    if key not in _RULES:
        x, w = np.polynomial.legendre.leggauss(order)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        nodes = np.array(list(itertools.product(x, repeat=n)))
        weights = np.prod(np.array(list(itertools.product(w, repeat=n))), axis=1)
        _RULES[key] = (nodes, weights)
    return _RULES[key]


def box_rule(f: Callable, lo: np.ndarray, hi: np.ndarray, order: int) -> np.ndarray:
    """Apply the tensor rule to each of the boxes ``[lo[b], hi[b]]``."""
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    B, n = lo.shape
    nodes, weights = tensor_rule(order, n)
    P = len(weights)
    out = np.empty(B)
    step = max(1, CHUNK_POINTS // P)
    for s in range(0, B, step):
        l, h = lo[s:s + step], hi[s:s + step]
        pts = l[:, None, :] + (h - l)[:, None, :] * nodes[None]
        vals = np.asarray(f(pts.reshape(-1, n)), dtype=float).reshape(len(l), P)
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise IntegrandFailureError(pts[bad[0], bad[1]])
        out[s:s + step] = (vals @ weights) * np.prod(h - l, axis=1)
    return out


def _children(lo, hi):
    B, n = lo.shape
    mid = 0.5 * (lo + hi)
    corners = np.array(list(itertools.product((0, 1), repeat=n)), dtype=bool)  # (2^n, n)
    clo = np.where(corners[None], mid[:, None, :], lo[:, None, :])
    chi = np.where(corners[None], hi[:, None, :], mid[:, None, :])
    return clo.reshape(-1, n), chi.reshape(-1, n)


def adaptive_boxes(f, lo, hi, tol, groups, ngroups, scheme: QuadratureScheme):
    """Bisection refinement of a batch of boxes with per-box absolute tolerances.

    Returns per-group value and error sums, the cell count and a converged flag.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    n = lo.shape[1]
    k = 2 ** n
    vals = box_rule(f, lo, hi, scheme.order)
    value = np.zeros(ngroups)
    error = np.zeros(ngroups)
    cells = len(lo)
    converged = True
    tol = np.asarray(tol, float)
    groups = np.asarray(groups)
    for depth in range(scheme.max_depth):
        if len(lo) == 0:
            break
        clo, chi = _children(lo, hi)
        cvals = box_rule(f, clo, chi, scheme.order).reshape(-1, k)
        cells += len(clo)
        csum = cvals.sum(axis=1)
        err = np.abs(vals - csum)
        ok = err <= tol
        last = depth == scheme.max_depth - 1 or cells > scheme.max_cells
        if last:
            ok[:] = True
            if np.any(err > tol):
                converged = False
        np.add.at(value, groups[ok], csum[ok])
        np.add.at(error, groups[ok], err[ok])
        keep = ~ok
        lo = clo.reshape(-1, k, n)[keep].reshape(-1, n)
        hi = chi.reshape(-1, k, n)[keep].reshape(-1, n)
        vals = cvals[keep].reshape(-1)
        tol = np.repeat(tol[keep] / k, k)
        groups = np.repeat(groups[keep], k)
        if last:
            break
    if len(lo):
        np.add.at(value, groups, vals)
        error += 0.0
        converged = False
    return value, error, cells, converged


# --------------------------------------------------------------------------- geometry of shells


def _grid_boxes(lo, hi, cuts):
    axes = []
    for a in range(len(lo)):
        pts = sorted({lo[a], hi[a], *[c for c in cuts.get(a, []) if lo[a] < c < hi[a]]})
        axes.append(list(zip(pts[:-1], pts[1:])))
    boxes = []
    for combo in itertools.product(*axes):
        boxes.append((np.array([c[0] for c in combo]), np.array([c[1] for c in combo])))
    return boxes


def _touches(blo, bhi, center, mask, tol=1e-12):
    return bool(np.all(((center >= blo - tol) & (center <= bhi + tol)) | ~mask))


def shell_pieces(blo, bhi, center, mask, r_out, r_in):
    """Boxes tiling ``cube(r_out) \\ cube(r_in)`` clipped to ``[blo, bhi]``."""
    per_axis = []
    for a in range(len(blo)):
        if not mask[a]:
            per_axis.append([(blo[a], bhi[a], True)])
            continue
        olo, ohi = max(blo[a], center[a] - r_out), min(bhi[a], center[a] + r_out)
        ilo, ihi = max(blo[a], center[a] - r_in), min(bhi[a], center[a] + r_in)
        opts = []
        if ilo > olo:
            opts.append((olo, ilo, False))
        if ihi > ilo:
            opts.append((ilo, ihi, True))
        if ohi > ihi:
            opts.append((ihi, ohi, False))
        per_axis.append(opts)
    out = []
    for combo in itertools.product(*per_axis):
        if all(c[2] for c in combo):
            continue
        lo = np.array([c[0] for c in combo])
        hi = np.array([c[1] for c in combo])
        if np.all(hi > lo):
            out.append((lo, hi))
    return out


def _split_for_strata(blo, bhi, frames):
    """Split a box until each piece touches at most one stratum frame."""
    touching = [i for i, (c, m) in enumerate(frames) if _touches(blo, bhi, c, m)]
    if len(touching) <= 1:
        return [(blo, bhi, touching[0] if touching else None)]
    (c0, m0), (c1, m1) = frames[touching[0]], frames[touching[1]]
    m = m0 & m1
    gap = np.where(m, np.abs(c0 - c1), 0.0)
    if gap.max() <= 1e-12:
        # coincident frames: keep the one shelling the most axes
        best = max(touching, key=lambda i: frames[i][1].sum())
        return [(blo, bhi, best)]
    a = int(np.argmax(gap))
    cut = 0.5 * (c0[a] + c1[a])
    lo2, hi1 = blo.copy(), bhi.copy()
    hi1[a] = cut
    lo2[a] = cut
    return _split_for_strata(blo, hi1, frames) + _split_for_strata(lo2, bhi, frames)


def fit_shell_verdict(sums, scheme: QuadratureScheme, noise: float):
    """Classify a shell-sum sequence by the slope of ``log|s_m|``."""
    tail = np.abs(np.asarray(sums[-scheme.fit_window:], float))
    if len(tail) == 0 or np.all(tail <= noise):
        return None, "converges"
    idx = np.flatnonzero(tail > noise)
    if len(idx) < 3:
        # the sums decayed into the noise floor before the innermost shell
        return None, "converges" if tail[-1] <= noise else "inconclusive"
    slope = float(np.polyfit(idx.astype(float), np.log(tail[idx]), 1)[0])
    if slope < -scheme.fit_dead_zone:
        return slope, "converges"
    return slope, "diverges"


# --------------------------------------------------------------------------- driver


def integrate(f: Callable, box, scheme: QuadratureScheme = DEFAULT_SCHEME,
              singular: SingularSet = EMPTY, breakpoints: Optional[dict] = None) -> IntegralResult:
    """Integrate a vectorised density ``f: (N, n) -> (N,)`` over ``box = (lo, hi)``."""
    lo = np.asarray(box[0], float)
    hi = np.asarray(box[1], float)
    n = len(lo)
    vol_box = float(np.prod(hi - lo))
    if vol_box <= 0:
        return IntegralResult(0.0, 0.0, 0, True, [])
    diag = float(np.linalg.norm(hi - lo))
    r_min = scheme.innermost(diag)
    rho = scheme.shell_ratio

    cuts = {a: list(v) for a, v in (breakpoints or {}).items()}
    frames, frame_ids = [], []
    for i, s in enumerate(singular):
        c, m = s.shell_frame(n)
        if not _touches(lo, hi, c, m):
            continue
        frames.append((np.asarray(c, float), m))
        frame_ids.append(i)
        for a, vals in s.breakpoints().items():
            cuts.setdefault(a, []).extend(vals)
    for a, vals in list(cuts.items()):
        cuts[a] = [v for v in vals if lo[a] < v < hi[a]]

    regular = []
    shells = []  # (frame index, shell index, [pieces]) per shell
    shell_meta = []  # (frame index, radii)
    for blo, bhi in _grid_boxes(lo, hi, cuts):
        for plo, phi, fi in _split_for_strata(blo, bhi, frames):
            if np.any(phi <= plo):
                continue
            if fi is None:
                regular.append((plo, phi))
                continue
            c, m = frames[fi]
            R0 = float(np.max(np.where(m, np.maximum(c - plo, phi - c), 0.0)))
            if R0 <= r_min:
                regular.append((plo, phi))
                continue
            M = max(1, int(math.floor(math.log(R0 / r_min) / math.log(1.0 / rho))))
            radii = R0 * rho ** np.arange(M + 1)
            sid = len(shell_meta)
            shell_meta.append((fi, radii))
            for k in range(M):
                shells.append((sid, k, shell_pieces(plo, phi, c, m, radii[k], radii[k + 1])))

    nshell_total = max(1, len(shells))
    # group 0 = regular region; group 1 + j = j-th shell
    blos, bhis, tols, groups = [], [], [], []
    vol_reg = sum(float(np.prod(h - l)) for l, h in regular)
    if regular:
        rl = np.array([r[0] for r in regular])
        rh = np.array([r[1] for r in regular])
        est = box_rule(f, rl, rh, scheme.order)
        scale = max(scheme.abs_tol * 0.5, scheme.rel_tol * abs(est.sum()))
        vols = np.prod(rh - rl, axis=1)
        blos.append(rl)
        bhis.append(rh)
        tols.append(scale * vols / vol_reg)
        groups.append(np.zeros(len(rl), int))
    for j, (sid, k, pieces) in enumerate(shells):
        if not pieces:
            continue
        pl = np.array([p[0] for p in pieces])
        ph = np.array([p[1] for p in pieces])
        est = box_rule(f, pl, ph, scheme.order)
        scale = max(scheme.abs_tol * 0.5 / nshell_total, scheme.rel_tol * abs(est.sum()))
        vols = np.prod(ph - pl, axis=1)
        blos.append(pl)
        bhis.append(ph)
        tols.append(scale * vols / vols.sum())
        groups.append(np.full(len(pl), 1 + j))

    if not blos:
        return IntegralResult(0.0, 0.0, 0, True, [])
    vals, errs, cells, conv = adaptive_boxes(
        f, np.vstack(blos), np.vstack(bhis), np.concatenate(tols), np.concatenate(groups), 1 + len(shells), scheme
    )
    value = float(vals[0])
    error = float(errs[0])
    traces = []
    noise = scheme.abs_tol / nshell_total
    for sid, (fi, radii) in enumerate(shell_meta):
        js = [j for j, sh in enumerate(shells) if sh[0] == sid]
        sums = vals[[1 + j for j in js]]
        serr = errs[[1 + j for j in js]]
        slope, verdict = fit_shell_verdict(sums, scheme, noise)
        tail = 0.0
        if verdict == "converges" and slope is not None:
            q = min(math.exp(slope), 0.95)
            tail = float(sums[-1] * q / (1.0 - q))
        value += float(sums.sum()) + tail
        error += float(serr.sum()) + abs(tail)
        traces.append(ShellTrace(frame_ids[fi], radii, sums, serr, slope, verdict, tail))

    diverges = any(t.verdict != "converges" for t in traces)
    if diverges:
        conv = False
    tol_total = max(scheme.abs_tol, scheme.rel_tol * abs(value))
    converged = bool(conv and error <= tol_total * 1.0000001)
    if any(t.verdict == "diverges" for t in traces):
        error = math.inf
    return IntegralResult(value, error, int(cells), converged, traces)


# --------------------------------------------------------------------------- integrability


@dataclass
class StratumVerdict:
    stratum: int
    l1: str
    l2: str
    quadratic: str
    l1_exponent: Optional[float]
    l2_exponent: Optional[float]
    quadratic_exponent: Optional[float]


@dataclass
class IntegrabilityVerdict:
    strata: list
    l1_value: float
    l2_value: float
    quadratic_value: float
    quadratic_signed: list
    l1_result: IntegralResult
    l2_result: IntegralResult
    quadratic_result: IntegralResult

    @property
    def tame(self) -> bool:
        return self.l1_result.verdict == "converges" and self.quadratic_result.verdict == "converges"

    @property
    def l1(self) -> str:
        return self.l1_result.verdict

    @property
    def l2(self) -> str:
        return self.l2_result.verdict

    @property
    def quadratic(self) -> str:
        return self.quadratic_result.verdict

    def as_dict(self):
        return {
            "tame": self.tame,
            "L1": self.l1,
            "L2": self.l2,
            "quadratic": self.quadratic,
            "quadratic_integral": self.quadratic_value,
            "strata": [s.__dict__ for s in self.strata],
        }


def quadratic_combination(gam):
    """``C_kl = sum_ij (G^i_kl G^j_ji - G^j_ki G^i_lj)``."""
    tau = np.einsum("...jji->...i", gam)
    return np.einsum("...ikl,...i->...kl", gam, tau) - np.einsum("...jki,...ilj->...kl", gam, gam)


def integrability_diagnostic(gamma: ChristoffelField, scheme: QuadratureScheme = DEFAULT_SCHEME,
                             box=None) -> IntegrabilityVerdict:
    """Shell-sum tests for ``Gamma`` in L^1 and L^2 and for the quadratic combination in L^1."""
    lo, hi = box if box is not None else (gamma.chart.lo, gamma.chart.hi)
    sing = gamma.singular

    def l1(x):
        return np.abs(gamma(x)).sum(axis=(-1, -2, -3))

    def l2(x):
        return (gamma(x) ** 2).sum(axis=(-1, -2, -3))

    def quad(x):
        return np.abs(quadratic_combination(gamma(x))).sum(axis=(-1, -2))

    r1 = integrate(l1, (lo, hi), scheme, sing)
    r2 = integrate(l2, (lo, hi), scheme, sing)
    rq = integrate(quad, (lo, hi), scheme, sing)
    n = gamma.chart.n
    signed = []
    for k in range(n):
        row = []
        for l in range(n):
            row.append(integrate(lambda x, k=k, l=l: quadratic_combination(gamma(x))[..., k, l],
                                 (lo, hi), scheme, sing).value)
        signed.append(row)
    per = []
    for t1, t2, tq in zip(r1.shells, r2.shells, rq.shells):
        per.append(StratumVerdict(t1.stratum, t1.verdict, t2.verdict, tq.verdict,
                                  t1.exponent, t2.exponent, tq.exponent))
    return IntegrabilityVerdict(per, r1.value, r2.value, rq.value, signed, r1, r2, rq)
