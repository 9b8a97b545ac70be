"""Experiment configuration: JSON schema, line-referenced errors, symbol sources."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import jsonschema

from .profiles import profile_from_json
from .symbols import AngleTimeSymbol, genericity_perturb, standard_perturbation, trig_symbol

__all__ = ["ConfigError", "EXPERIMENTS", "SCHEMA", "load_config", "validate_config", "resolve_symbol", "config_hash"]

EXPERIMENTS = (
    "transporter-check",
    "resonant-average",
    "quantize",
    "evolve-growth",
    "decay",
    "egorov",
    "mourre",
    "spectrum",
    "normal-form",
    "sweep",
)

_COEFF = {
    "type": "object",
    "required": ["m", "n"],
    "properties": {
        "m": {"type": "integer"},
        "n": {"type": "integer"},
        "re": {"type": "number"},
        "im": {"type": "number"},
        "profile": {
            "oneOf": [
                {"enum": ["cutoff_one", "compact_bump", "unity"]},
                {
                    "type": "object",
                    "required": ["power_decay"],
                    "properties": {"power_decay": {"type": "number", "exclusiveMinimum": 0}},
                    "additionalProperties": False,
                },
            ]
        },
    },
    "additionalProperties": False,
}

_SYMBOL = {
    "oneOf": [
        {
            "type": "object",
            "required": ["coeffs"],
            "properties": {"coeffs": {"type": "array", "items": _COEFF}},
            "additionalProperties": False,
        },
        {
            "type": "object",
            "required": ["named"],
            "properties": {
                "named": {"enum": ["w0", "zero", "cos_t_sin_theta", "sin_theta", "sin_2theta", "averaged_w0"]},
                "eps0": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        {
            "type": "object",
            "required": ["file"],
            "properties": {"file": {"type": "string"}},
            "additionalProperties": False,
        },
    ]
}

SCHEMA = {
    "type": "object",
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "name": {"type": "string"},
        "symbol": _SYMBOL,
        "N": {"type": "integer", "minimum": 1},
        "integrator": {
            "type": "object",
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "scheme": {"enum": ["exponential-midpoint", "strang-split"]},
                "tail_guard": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "stride": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "r": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "fit_window": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2},
        "out": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "params": {"type": "object"},
        "runs": {"type": "array", "items": {"type": "object"}},
        "base": {"type": "object"},
        "vary": {
            "type": "object",
            "required": ["path", "values"],
            "properties": {"path": {"type": "string"}, "values": {"type": "array"}},
            "additionalProperties": False,
        },
        "workers": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending line when known."""


def _skip_ws(text: str, i: int) -> int:
    while i < len(text) and text[i] in " \t\r\n":
        i += 1
    return i


def _locate(text: str, path) -> int:
    """Character offset of the value at ``path`` inside the JSON ``text``."""
    dec = json.JSONDecoder()
    i = _skip_ws(text, 0)
    for key in path:
        if i >= len(text):
            break
        if text[i] == "{":
            i = _skip_ws(text, i + 1)
            found = False
            while i < len(text) and text[i] != "}":
                name, i = dec.raw_decode(text, i)
                i = _skip_ws(text, i)
                i = _skip_ws(text, i + 1)  # colon
                if name == key:
                    found = True
                    break
                _, i = dec.raw_decode(text, i)
                i = _skip_ws(text, i)
                if text[i] == ",":
                    i = _skip_ws(text, i + 1)
            if not found:
                break
        elif text[i] == "[":
            i = _skip_ws(text, i + 1)
            for _ in range(int(key)):
                _, i = dec.raw_decode(text, i)
                i = _skip_ws(text, i)
                i = _skip_ws(text, i + 1)
        else:
            break
    return i


def _line_of(text: str, offset: int) -> int:
    return text.count("\n", 0, offset) + 1


def validate_config(cfg: dict, text: str | None = None, source: str = "<config>") -> dict:
    """Schema validation; errors carry ``source:line`` when the raw text is given."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        line = _line_of(text, _locate(text, list(err.absolute_path))) if text is not None else None
        loc = f"{source}:{line}" if line is not None else source
        raise ConfigError(f"{loc}: schema violation at {where}: {err.message}")
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    cfg = validate_config(cfg, text, str(path))
    cfg.setdefault("_source_dir", str(path.parent.resolve()))
    return cfg


def resolve_symbol(source: dict | None, base_dir: str | None = None) -> AngleTimeSymbol:
    """Build the symbol named or listed in a config; defaults to ``w0``."""
    if source is None:
        return standard_perturbation()
    if "coeffs" in source:
        return AngleTimeSymbol.from_json(source)
    if "file" in source:
        p = Path(source["file"])
        if not p.is_absolute() and base_dir:
            p = Path(base_dir) / p
        return AngleTimeSymbol.from_json(json.loads(p.read_text()))
    name = source["named"]
    eps0 = float(source.get("eps0", 0.0))
    if name == "w0":
        base = standard_perturbation()
    elif name == "zero":
        base = AngleTimeSymbol.zero()
    elif name == "cos_t_sin_theta":
        base = trig_symbol(sin_coeffs={1: 1.0}, m=1, time="cos")
    elif name == "sin_theta":
        base = trig_symbol(sin_coeffs={1: 1.0}, m=0)
    elif name == "sin_2theta":
        base = trig_symbol(sin_coeffs={2: 1.0}, m=0)
    elif name == "averaged_w0":
        base = trig_symbol(sin_coeffs={2: 0.25}, m=0)
    else:  # pragma: no cover - schema rejects it
        raise ConfigError(f"unknown named symbol {name!r}")
    return genericity_perturb(base, eps0) if eps0 else base


def config_hash(cfg: dict) -> str:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_") and k != "out"}
    return hashlib.sha256(json.dumps(clean, sort_keys=True, default=float).encode()).hexdigest()[:16]


def as_number(x) -> float:
    """JSON-safe float (maps infinities to ``None``)."""
    x = float(x)
    return x if math.isfinite(x) else None
