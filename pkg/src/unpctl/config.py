"""Scenario configuration: JSON with a published schema and line-aware errors."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_pos = {"type": "number", "exclusiveMinimum": 0}
_matrix = {"type": "array", "items": {"type": "array", "items": _num, "minItems": 1}, "minItems": 1}
_vector = {"type": "array", "items": _num, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "unpctl scenario",
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "noise"],
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": ["double_integrator_2d"]},
                "Ts": _pos,
                "A": _matrix, "B": _matrix, "C": _matrix,
            },
            "oneOf": [{"required": ["preset"]}, {"required": ["A", "B", "C"]}],
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "required": ["sigma_u2", "alphas"],
            "properties": {
                "kind": {"enum": ["optimal", "uniform", "gaussian", "laplace", "none"]},
                "sigma_u2": {"type": "array", "items": _nonneg, "minItems": 1},
                "alphas": {"type": "array", "items": _pos, "minItems": 1},
                "sources": {"type": "array", "items": {"enum": ["optimal", "uniform", "gaussian", "laplace", "none"]}},
                "monotonicity": {"enum": ["literal", "density"]},
                "moments": {"enum": ["bracket", "exact"]},
                "intra": {"enum": ["volume", "reppoint"]},
                "grid": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_angles": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                        "n_radial": {"type": "integer", "minimum": 1},
                        "a": _pos,
                        "tail_factor": _pos,
                    },
                },
                "seed": {"type": "integer", "minimum": 0, "maximum": 18446744073709551615},
            },
        },
        "attacker": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["exact", "kalman"]},
                "meas_var": _nonneg,
                "filter_proc_var": _nonneg,
                "filter_meas_var": _pos,
                "u_hat": {"enum": ["nominal", "zero"]},
                "estimate_var": _nonneg,
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "controller": {
            "type": "object",
            "required": ["type"],
            "properties": {"type": {"enum": ["lqr", "cooperative"]}},
            "oneOf": [
                {
                    "properties": {
                        "type": {"const": "lqr"},
                        "horizon": {"type": "integer", "minimum": 1},
                        "x0": _vector, "target": _vector,
                        "Q": _matrix, "R": _matrix,
                        "terminal_weight": _pos,
                        "u_box": {"type": "array", "items": _vector, "minItems": 2, "maxItems": 2},
                        "x_box": {"type": "array", "items": _vector, "minItems": 2, "maxItems": 2},
                    },
                    "additionalProperties": False,
                },
                {
                    "properties": {
                        "type": {"const": "cooperative"},
                        "preset": {"enum": ["formation5"]},
                        "pin_root": {"type": "boolean"},
                        "adjacency": _matrix,
                        "offsets": _matrix,
                        "start": _matrix,
                        "weights": _matrix,
                    },
                    "additionalProperties": False,
                },
            ],
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_samples": {"type": "integer", "minimum": 1},
                "horizon": {"type": "integer", "minimum": 1},
                "episodes": {"type": "integer", "minimum": 1},
                "steps": {"type": "integer", "minimum": 1},
                "cov_scales": {"type": "array", "items": _pos, "minItems": 1},
                "out_dir": {"type": "string"},
            },
        },
    },
}

DEFAULTS = {
    "noise": {"kind": "optimal", "sources": ["optimal", "uniform", "gaussian", "laplace", "none"],
              "monotonicity": "density", "moments": "bracket", "intra": "reppoint",
              "grid": {"n_radial": 26, "tail_factor": 5.0}, "seed": 20220101},
    "attacker": {"mode": "exact", "meas_var": 0.01, "filter_proc_var": 1.0, "filter_meas_var": 1.0,
                 "u_hat": "nominal", "estimate_var": 0.0},
    "run": {"n_samples": 1000000, "horizon": 30, "episodes": 200, "steps": 10000, "cov_scales": [0.25, 0.5, 1.0],
            "out_dir": "out"},
}


class ConfigError(ValueError):
    """Malformed or schema-violating configuration."""


def _locate(text: str, path) -> int:
    """Best-effort 1-based line of a JSON path in the source text."""
    pos = 0
    for key in path:
        if isinstance(key, str):
            hit = text.find(f'"{key}"', pos)
            if hit < 0:
                break
            pos = hit
    return text.count("\n", 0, pos) + 1


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_config(text: str, source: str = "<config>") -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from None
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        path = list(err.absolute_path)
        field = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{source}:{_locate(text, path)}: field '{field}': {err.message}")
    cfg = _merge(DEFAULTS, raw)
    alphas = cfg["noise"]["alphas"]
    if alphas != sorted(alphas):
        raise ConfigError(f"{source}:{_locate(text, ['noise', 'alphas'])}: field 'noise.alphas': must be ascending")
    return cfg


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read: {e.strerror}") from None
    return parse_config(text, str(path))


def config_hash(cfg: dict) -> str:
    """Short digest of everything that affects results (the output directory does not)."""
    cfg = copy.deepcopy(cfg)
    cfg.get("run", {}).pop("out_dir", None)
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]
