"""Run configuration: a JSON file merged with dotted command-line overrides."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from ..errors import ConfigError
from ..quadrature import QuadratureScheme

DEFAULTS = {
    "seed": 0,
    "quadrature": {
        "order": 5,
        "rel_tol": 1e-6,
        "abs_tol": 1e-10,
        "shell_ratio": 0.5,
        "max_depth": 30,
    },
    "measure": {
        "levels": 4,
        "curve_levels": 3,
        "curve_samples": 3,
        "pairs": 1,
    },
    "flow": {
        "times": [0.1, 0.2, 0.4],
        "time_order": 4,
    },
    "params": {},
}

# (type, validator, message) per known leaf
_SCHEMA = {
    "seed": (int, lambda v: v >= 0, "must be a non-negative integer"),
    "quadrature.order": (int, lambda v: v >= 2, "must be an integer >= 2"),
    "quadrature.rel_tol": (float, lambda v: v > 0, "must be positive"),
    "quadrature.abs_tol": (float, lambda v: v > 0, "must be positive"),
    "quadrature.shell_ratio": (float, lambda v: 0 < v < 1, "must lie in (0, 1)"),
    "quadrature.max_depth": (int, lambda v: v >= 1, "must be an integer >= 1"),
    "measure.levels": (int, lambda v: v >= 2, "must be an integer >= 2"),
    "measure.curve_levels": (int, lambda v: v >= 2, "must be an integer >= 2"),
    "measure.curve_samples": (int, lambda v: v >= 1, "must be a positive integer"),
    "measure.pairs": (int, lambda v: v >= 0, "must be a non-negative integer"),
    "flow.times": (list, lambda v: len(v) > 0 and all(isinstance(t, (int, float)) and t >= 0 for t in v),
                   "must be a non-empty list of non-negative times"),
    "flow.time_order": (int, lambda v: v >= 1, "must be a positive integer"),
}


def parse_value(text: str):
    """Interpret a command-line value: JSON first, then comma lists of numbers, else the raw string."""
    try:
        return json.loads(text)
    except (json.JSONDecodeError, TypeError):
        pass
    if "," in text:
        try:
            return [json.loads(p) for p in text.split(",") if p]
        except json.JSONDecodeError:
            pass
    return text


def _set(cfg, dotted, value):
    parts = dotted.split(".")
    node = cfg
    for i, p in enumerate(parts[:-1]):
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        elif not isinstance(nxt, dict):
            raise ConfigError(".".join(parts[:i + 1]), "is not a section")
        node = nxt
    node[parts[-1]] = value


def _merge(base, extra, path=""):
    for k, v in extra.items():
        key = f"{path}.{k}" if path else k
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v, key)
        else:
            base[k] = copy.deepcopy(v)


def load_config(path=None, overrides=()):
    """Defaults <- file <- overrides. Bare override keys go to ``params``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        except OSError as exc:
            raise ConfigError("<file>", str(exc)) from None
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        _merge(cfg, data)
    for key, value in overrides:
        if "." not in key and key not in DEFAULTS:
            key = f"params.{key}"
        _set(cfg, key, parse_value(value) if isinstance(value, str) else value)
    validate(cfg)
    return cfg


def _walk(node, path=""):
    for k, v in node.items():
        key = f"{path}.{k}" if path else k
        if isinstance(v, dict) and key != "params":
            yield from _walk(v, key)
        else:
            yield key, v


def validate(cfg):
    for key, value in _walk(cfg):
        if key == "params":
            if not isinstance(value, dict):
                raise ConfigError("params", "must be an object")
            continue
        if key not in _SCHEMA:
            raise ConfigError(key, "unknown key")
        typ, ok, msg = _SCHEMA[key]
        if typ is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
            _set(cfg, key, value)
        if typ is list and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
            _set(cfg, key, value)
        if not isinstance(value, typ) or isinstance(value, bool) or not ok(value):
            raise ConfigError(key, msg)
    return cfg


def check_params(cfg, defaults: dict, scenario: str):
    """Merge scenario parameter defaults with overrides, rejecting unknown or ill-typed keys."""
    out = dict(defaults)
    for k, v in cfg.get("params", {}).items():
        if k not in defaults:
            raise ConfigError(f"params.{k}", f"scenario {scenario!r} has no parameter {k!r}")
        if isinstance(defaults[k], (int, float)) and not isinstance(defaults[k], bool):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"params.{k}", "must be a number")
            v = type(defaults[k])(v) if isinstance(defaults[k], float) else v
        out[k] = v
    return out


def scheme_from(cfg) -> QuadratureScheme:
    q = cfg["quadrature"]
    return QuadratureScheme(order=q["order"], rel_tol=q["rel_tol"], abs_tol=q["abs_tol"],
                            shell_ratio=q["shell_ratio"], max_depth=q["max_depth"])
