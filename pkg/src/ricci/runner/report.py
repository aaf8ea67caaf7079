"""Deterministic JSON reports and CSV trace files."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .. import __version__

TOOL = "ricci"


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings ``"inf"``, ``"-inf"``, ``"nan"``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, complex):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


def build_report(scenario, verb, cfg, params, records, timing=None):
    """Report dict; everything outside ``timing`` depends only on config and version."""
    checks = {r.name: r.as_dict() for r in sorted(records, key=lambda r: r.name)}
    out = {
        "tool": TOOL,
        "version": __version__,
        "scenario": scenario,
        "verb": verb,
        "config": cfg,
        "params": params,
        "seed": cfg.get("seed"),
        "checks": checks,
        "all_pass": all(r.passed for r in records),
    }
    if timing is not None:
        out["timing"] = timing
    return jsonable(out)


def dumps(report) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def without_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timing"}


def write_traces(out_dir: Path, records):
    paths = []
    for r in sorted(records, key=lambda r: r.name):
        if not r.trace:
            continue
        p = out_dir / f"trace_{r.name}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "value", "error"])
            for i, row in enumerate(r.trace):
                _, value, error = row if len(row) == 3 else (i, *row[-2:])
                w.writerow([i, repr(float(value)), repr(float(error))])
        paths.append(p)
    return paths


def write_report(out_dir, report, records):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps(report))
    write_traces(out, records)
    return out / "report.json"
