"""Run configuration: JSON file, schema-checked, defaults filled in.

Every default reproduces the reference setting (N_total = 6e9, f = 1.16,
e_d = 3.3%, Y0 = 1.7e-6, mu = 0.479, five standard deviations, P = 1e-7), so
an empty ``{}`` file is a valid config.
"""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

import jsonschema

OPT = "optimize"


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit code 1."""


DEFAULTS = {
    "channel": {"y0": 1.7e-6, "ed": 0.033, "loss_db": "0:40:1"},
    "security": {"f": 1.16, "u_alpha": 5.0, "p_theta_x": 1e-7, "n_total": 6e9},
    "source": {"mu": 0.479, "nu": OPT, "p_z": OPT, "allocation": OPT, "mu_range": None},
    "optimizer": {"grid_points": 5, "n_starts": 3},
    "run": {"scheme": "both", "seed": 0, "out": "results"},
    "mc": {
        "n_pulses": 10_000_000,
        "loss_db": 10.0,
        "adversary": {"mode": "none"},
        "sigma_threshold": 5.0,
        "workers": 1,
    },
}

_prob = {"type": "number", "minimum": 0, "maximum": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}
_loss = {
    "oneOf": [
        {"type": "number"},
        {"type": "string", "pattern": r"^\s*[-+0-9.eE]+\s*:\s*[-+0-9.eE]+\s*:\s*[-+0-9.eE]+\s*$"},
        {"type": "array", "items": {"type": "number"}},
    ]
}
_opt_or = lambda schema: {"oneOf": [schema, {"const": OPT}]}  # noqa: E731
_table = {"type": "array", "items": {"oneOf": [_prob, {"type": "null"}]}}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "channel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"y0": _prob, "ed": _prob, "loss_db": _loss},
        },
        "security": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "f": {"type": "number", "minimum": 1},
                "u_alpha": {"type": "number", "minimum": 0},
                "p_theta_x": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "n_total": _pos,
            },
        },
        "source": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mu": _pos,
                "nu": _opt_or(_pos),
                "p_z": _opt_or(_prob),
                "allocation": _opt_or({
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["a_mu", "a_nu_z", "a_nu_x", "a_0"],
                    "properties": {k: _prob for k in ("a_mu", "a_nu_z", "a_nu_x", "a_0")},
                }),
                "mu_range": {
                    "oneOf": [
                        {"type": "null"},
                        {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
                    ]
                },
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid_points": {"type": "integer", "minimum": 5},
                "n_starts": {"type": "integer", "minimum": 1},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scheme": {"enum": ["biased", "standard", "both"]},
                "seed": {"type": "integer", "minimum": 0},
                "out": {"type": "string"},
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_pulses": {"type": "integer", "minimum": 1},
                "loss_db": {"type": "number"},
                "sigma_threshold": _pos,
                "workers": {"type": "integer", "minimum": 1},
                "adversary": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "mode": {"enum": ["none", "intercept_resend_z", "yield_override"]},
                        "yields_z": _table,
                        "yields_x": _table,
                        "errors_z": _table,
                        "errors_x": _table,
                    },
                },
            },
        },
    },
}


def parse_grid(spec) -> list[float]:
    """Loss grid from a number, a list, or ``"start:stop:step"`` (stop included)."""
    if isinstance(spec, (int, float)):
        vals = [float(spec)]
    elif isinstance(spec, str):
        try:
            start, stop, step = (float(t) for t in spec.split(":"))
        except ValueError:
            raise ConfigError(f"loss grid {spec!r} is not 'start:stop:step'") from None
        if not step > 0:
            raise ConfigError("loss grid step must be positive")
        n = math.floor((stop - start) / step + 1e-9) + 1
        vals = [round(start + i * step, 12) for i in range(max(n, 0))]
    else:
        vals = [float(v) for v in spec]
    if not vals:
        raise ConfigError("loss grid is empty")
    if any(not math.isfinite(v) or v < 0 for v in vals):
        raise ConfigError("losses must be finite and non-negative dB")
    return vals


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "allocation":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(raw: dict | None = None) -> dict:
    """Validate ``raw`` against the schema and return it merged over the defaults."""
    raw = raw or {}
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    parse_grid(cfg["channel"]["loss_db"])
    src = cfg["source"]
    if src["mu_range"] is not None:
        lo, hi = src["mu_range"]
        if not lo < hi:
            raise ConfigError("source.mu_range must be increasing")
    if isinstance(src["allocation"], dict) and abs(sum(src["allocation"].values()) - 1.0) > 1e-9:
        raise ConfigError("source.allocation fractions must sum to 1")
    return cfg


def load(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return resolve(raw)


def placeholders(cfg: dict) -> list[str]:
    src = cfg["source"]
    found = [k for k in ("nu", "p_z", "allocation") if src[k] == OPT]
    if src["mu_range"] is not None:
        found.append("mu_range")
    return found
