"""``ricci <verb> <scenario> [--key value ...] [--out dir] [--config file]``."""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor


from .. import flow as fl
from .. import measure as ms
from .. import qform as qf
from ..errors import ConfigError, RicciError
from . import report as rp
from .config import check_params, load_config, scheme_from
from .scenarios import (
    CheckRecord,
    build_context,
    get_scenario,
    list_scenarios,
    rotation_field,
    _flow_schemes,
    gated_fields,
)

log = logging.getLogger("ricci")

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def thread_count():
    raw = os.environ.get("RICCI_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("RICCI_THREADS", "must be a positive integer") from None
    if n < 1:
        raise ConfigError("RICCI_THREADS", "must be a positive integer")
    return n


# --------------------------------------------------------------------------- single-operation verbs


def _info(name, value, provenance, passed=True, **details):
    return CheckRecord(name, value, None, None, bool(passed), provenance, details)


def verb_qform(ctx):
    r = qf.q_form(ctx.gamma, ctx.V, ctx.W, ctx.scheme, split=False)
    rec = _info("qform", r.value, "quadratic-form", error=r.error, verdict=r.verdict)
    rec.trace = [row for s in r.shells for row in s.rows()]
    return [rec]


def verb_qform_split(ctx):
    r = qf.q_form(ctx.gamma, ctx.V, ctx.W, ctx.scheme, split=True)
    return [_info("qform-split", {"q": r.value, "q1": r.q1, "q2": r.q2}, "quadratic-form-split",
                  bool(r.split_agrees()), split_error=r.split_error)]


def verb_qform_be(ctx):
    f = qf.quadratic_weight(float(ctx.params.get("weight_scale", 1.0)))
    r = qf.bakry_emery_q(ctx.gamma, f, ctx.V, ctx.W, ctx.scheme)
    ok = r.cross_check is None or abs(r.value - r.cross_check) <= 1e-4 * abs(r.value) + 1e-8
    return [_info("qform-be", r.value, "bakry-emery-hessian", ok, cross_check=r.cross_check)]


def verb_qform_kahler(ctx):
    if "kahler" not in (ctx.metric.tags or ()):
        raise ConfigError("scenario", "qform-kahler needs a Kahler scenario (try `kahler`)")
    r = qf.kahler_q(ctx.metric, ctx.V, ctx.W, ctx.scheme)
    ok = r.cross_check is None or abs(r.value.real - r.cross_check) <= 1e-4 * abs(r.value) + 1e-8
    return [_info("qform-kahler", r.value, "kahler-identification", ok, cross_check=r.cross_check)]


def verb_qform_alexandrov(ctx):
    factor = getattr(ctx.metric, "factor", None)
    if factor is None:
        raise ConfigError("scenario", "qform-alexandrov needs a conformal 2-D scenario")
    r = qf.alexandrov_q(factor, ctx.V, ctx.W, ctx.scheme)
    return [_info("qform-alexandrov", r.value, "conformal-curvature-measure", error=r.error)]


def verb_killing(ctx):
    ch = ctx.metric.chart
    if ch.n != 2:
        raise ConfigError("scenario", "killing-defect uses the rotation field and needs a 2-D chart")
    V = rotation_field(ch, float(ctx.params.get("r0", 0.0)))
    grid = qf.grid_points(ch.lo, ch.hi, 9, margin=0.05)
    grid = grid[ctx.gamma.singular.distance(grid) > 0.05] if len(ctx.gamma.singular) else grid
    return [_info("killing-defect", qf.killing_defect(ctx.metric, ctx.gamma, grid=grid, V=V), "killing-defect")]


def verb_measure(ctx):
    mc = ctx.cfg["measure"]
    conf = ms.MeasureConfig(levels=mc["levels"], curve_levels=mc["curve_levels"], curve_samples=mc["curve_samples"],
                            pairs=mc["pairs"], seed=ctx.cfg["seed"])
    rep = ms.assemble_measure_report(ctx.gamma, None, conf, metric=ctx.metric)
    ok = rep.checks["pairing_ok"] if mc["pairs"] else True
    rec = _info("ricci-measure", rep.as_dict(), "measure-pairing", ok)
    recs = [rec]
    for key, rows in sorted(rep.traces.items()):
        t = _info(f"ladder-{key}", rows[-1][1] if rows else None, "measure-ladder")
        t.trace = rows
        recs.append(t)
    return recs


def _flow_of(ctx):
    g = ctx.extra.get("flow")
    return g if g is not None else fl.static_metric(ctx.metric)


def verb_flow_check(ctx):
    g = _flow_of(ctx)
    suite = [(fl.static_field(ctx.V), fl.static_field(ctx.W))]
    if ctx.metric.chart.n == 2:
        # fields vanishing at the origin, so point strata there do not empty the cone-preserving suite
        Vg, Wg = gated_fields(ctx.metric.chart)
        suite.append((fl.static_field(Vg), fl.static_field(Wg)))
    times = ctx.cfg["flow"]["times"]
    tame = fl.tame_flow_check(g, suite, times, _flow_schemes(ctx))
    cone = fl.cone_preserving_flow_check(g, suite, times, _flow_schemes(ctx))
    recs = []
    for name, chk in (("flow-tame", tame), ("flow-cone-preserving", cone)):
        r = _info(name, chk.verdict, "flow-identity", chk.verdict != "INCONCLUSIVE", **chk.as_dict())
        r.trace = [(i, e.residual, e.time_error + e.space_error) for i, (_, e) in enumerate(chk.entries)]
        recs.append(r)
    return recs


def verb_flow_residual(ctx):
    g = _flow_of(ctx)
    V, W = fl.static_field(ctx.V), fl.static_field(ctx.W)
    res = [fl.flow_identity_residual(g, V, W, t, _flow_schemes(ctx)) for t in ctx.cfg["flow"]["times"]]
    r = _info("flow-residual", [x.residual for x in res], "flow-identity", True, entries=[x.as_dict() for x in res])
    r.trace = [(i, x.residual, x.time_error + x.space_error) for i, x in enumerate(res)]
    return [r]


def verb_sobolev(ctx):
    out = []
    for label, F in (("V", ctx.V), ("W", ctx.W)):
        s = fl.sobolev_gate(ctx.gamma, F, ctx.metric, ctx.scheme)
        out.append(_info(f"sobolev-gate-{label}", s.as_dict(), "sobolev-gate"))
    return out


VERBS = {
    "qform": verb_qform,
    "qform-split": verb_qform_split,
    "qform-be": verb_qform_be,
    "qform-kahler": verb_qform_kahler,
    "qform-alexandrov": verb_qform_alexandrov,
    "killing-defect": verb_killing,
    "ricci-measure": verb_measure,
    "flow-check": verb_flow_check,
    "flow-residual": verb_flow_residual,
    "sobolev-gate": verb_sobolev,
}


# --------------------------------------------------------------------------- run


def _timed(fn, ctx):
    t0 = time.perf_counter()
    out = fn(ctx)
    return out, time.perf_counter() - t0


def run_scenario(name, cfg, verb="run", checks=None, threads=None):
    """Build the scenario, run the selected checks and return ``(report, records)``."""
    spec = get_scenario(name)
    extra_keys = {"weight_scale"} if verb == "qform-be" else set()
    params = check_params({"params": {k: v for k, v in cfg["params"].items() if k not in extra_keys}},
                          spec.params, name)
    params.update({k: v for k, v in cfg["params"].items() if k in extra_keys})
    scheme = scheme_from(cfg)
    ctx = build_context(spec, params, cfg, scheme)

    if verb == "run":
        names = spec.check_names() if not checks else list(checks)
        unknown = [c for c in names if c not in spec.checks]
        if unknown:
            raise ConfigError("checks", f"scenario {name!r} has no check(s) {', '.join(unknown)}")
        jobs = [(c, (lambda f: (lambda cx: [f(cx)]))(spec.checks[c])) for c in names]
    else:
        jobs = [(verb, VERBS[verb])]

    n = threads or thread_count()
    timing = {}
    records = []
    if n > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            futures = {c: pool.submit(_timed, fn, ctx) for c, fn in jobs}
            results = {c: f.result() for c, f in futures.items()}
    else:
        results = {c: _timed(fn, ctx) for c, fn in jobs}
    for c in sorted(results):
        recs, dt = results[c]
        records.extend(recs)
        timing[c] = round(dt, 3)
    timing_block = {"wall_clock_s": timing, "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    return rp.build_report(name, verb, cfg, params, records, timing_block), records


# --------------------------------------------------------------------------- argument handling


def _split_overrides(rest):
    """``--key value`` / ``--key=value`` pairs from the unparsed tail."""
    out = []
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--"):
            raise ConfigError(tok, "expected --key value")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(rest):
                raise ConfigError(key, "missing value")
            val = rest[i + 1]
            i += 2
        out.append((key.replace("-", "_") if "." not in key else key, val))
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="ricci", description=__doc__.strip("`"),
                                epilog="Extra --key value pairs override config entries (dotted keys) or scenario "
                                       "parameters (bare keys), e.g. --alpha 0.25 --quadrature.rel_tol 1e-7.")
    p.add_argument("verb", choices=["run", "list", *VERBS], help="what to do")
    p.add_argument("scenario", nargs="?", help="scenario name (for list: optional filter text)")
    p.add_argument("--out", help="directory for report.json and trace_<check>.csv")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--checks", help="comma-separated subset of checks (run only)")
    p.add_argument("--quiet", action="store_true", help="suppress the per-check summary")
    return p


def _summary(report):
    lines = [f"{report['scenario']} [{report['verb']}]"]
    for name, c in report["checks"].items():
        status = "PASS" if c["pass"] else "FAIL"
        comp = c["computed"]
        shown = f"{comp:.10g}" if isinstance(comp, float) else ("<structured>" if isinstance(comp, (dict, list)) and
                                                               len(str(comp)) > 80 else str(comp))
        orc = c["oracle"]
        shown_o = f"{orc:.10g}" if isinstance(orc, float) else str(orc)
        lines.append(f"  {status}  {name:<28} computed={shown}  oracle={shown_o}  [{c['provenance']}]")
    lines.append("ALL PASS" if report["all_pass"] else "SOME CHECKS FAILED")
    return "\n".join(lines)


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        if args.verb == "list":
            for row in list_scenarios(args.scenario or ""):
                params = ", ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in
                                   row["params"].items()) or "-"
                print(f"{row['name']:<20} {row['anchor']:<28} {params:<40} {row['description']}")
            return EXIT_OK
        if not args.scenario:
            parser.error("a scenario is required")
        cfg = load_config(args.config, _split_overrides(rest))
        checks = [c for c in args.checks.split(",") if c] if args.checks else None
        report, records = run_scenario(args.scenario, cfg, args.verb, checks)
        if args.out:
            path = rp.write_report(args.out, report, records)
            log.info("wrote %s", path)
        if not args.quiet:
            print(_summary(report))
        return EXIT_OK if report["all_pass"] else EXIT_FAIL
    except (RicciError, ValueError, NotImplementedError) as exc:
        print(f"ricci: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # anything else is still an execution error, not a check failure
        log.debug("unexpected error", exc_info=True)
        print(f"ricci: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
