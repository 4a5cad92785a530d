"""Run configuration: JSON schema, defaults, hashing and construction of specs."""

from __future__ import annotations

import copy
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .core import InitialData
from .fields import FIELD_FAMILIES, MagneticFieldSpec
from .kernels import KernelSpec


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_VEC = {"type": "array", "items": _NUM}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dim", "dt", "T"],
    "properties": {
        "name": {"type": "string"},
        "dim": {"enum": [2, 3]},
        "dt": _POS,
        "T": _NONNEG,
        "output_every": {"type": "integer", "minimum": 1},
        "moments": {"type": "array", "items": _NONNEG},
        "seed": {"type": "integer"},
        "deterministic": {"type": "boolean"},
        "parallel": {"type": "boolean"},
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sign": {"enum": [1, -1]},
                "kappa": _NONNEG,
                "softening": _NONNEG,
                "coupling": _NONNEG,
            },
        },
        "field": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": list(FIELD_FAMILIES)},
                "amplitude": _NUM,
                "B0": _NONNEG,
                "a": _NUM,
                "radius": _POS,
                "direction": {**_VEC, "minItems": 3, "maxItems": 3},
                "expression": {"oneOf": [{"type": "string"}, {"type": "array", "items": {"type": "string"}}]},
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["gaussian", "shifted-gaussian", "two-stream", "bump", "uniform-box"]},
                "mass": _POS,
                "sigma_x": _POS,
                "sigma_v": _POS,
                "x0": _VEC,
                "v0": _VEC,
                "radius": _POS,
                "stream_velocity": _NUM,
                "support_x": _POS,
                "support_v": _POS,
                "box_lo": _NUM,
                "box_hi": _NUM,
                "vbox_lo": _NUM,
                "vbox_hi": _NUM,
                "value": _NONNEG,
            },
        },
        "markers": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nx": {"type": "integer", "minimum": 1},
                "nv": {"type": "integer", "minimum": 1},
                "weight_floor": _NONNEG,
            },
        },
        "density": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h": {"oneOf": [_POS, {"type": "null"}]},
                "lp_orders": {"type": "array", "items": {"oneOf": [{"type": "number", "minimum": 1}, {"const": "inf"}]}},
            },
        },
        "twin": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p": {"type": "number", "minimum": 1},
                "dv": {"oneOf": [_NUM, _VEC]},
                "dx": {"oneOf": [_NUM, _VEC]},
                "ot_cap": {"type": "integer", "minimum": 1},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "slack": _NONNEG,
                "snapshot_every": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULTS = {
    "output_every": 1,
    "moments": [1, 2, 3, 4],
    "seed": 0,
    "deterministic": True,
    "parallel": False,
    "kernel": {"sign": 1, "softening": 0.0, "coupling": 1.0},
    "field": {"family": "zero", "amplitude": 0.0, "B0": 1.0, "a": 1.05, "radius": 1.0, "direction": [0.0, 0.0, 1.0]},
    "initial": {"family": "gaussian"},
    "markers": {"nx": 8, "nv": 8, "weight_floor": 1e-14},
    "density": {"h": None, "lp_orders": [2, "inf"]},
    "twin": {"p": 2.0, "dv": 0.0, "dx": 0.0, "ot_cap": 4_000_000},
    "verify": {"slack": 0.1, "snapshot_every": 1},
}


def _path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1]
        parts.append(missing)
    return ".".join(parts) or "<root>"


def validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_path(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))


def normalise(raw: dict) -> dict:
    """Validated config with every default filled in."""
    validate(raw)
    cfg = copy.deepcopy(raw)
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            cfg[key] = {**val, **cfg.get(key, {})}
        else:
            cfg.setdefault(key, val)
    cfg["kernel"].setdefault("kappa", 1.0 if cfg["dim"] == 3 else 0.0)
    return cfg


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical JSON of a normalised config."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class RunConfig:
    dim: int
    kernel: KernelSpec
    field: MagneticFieldSpec
    initial: InitialData
    nx: int
    nv: int
    weight_floor: float
    dt: float
    T: float
    output_every: int
    orders: tuple
    lp_orders: tuple
    h: float | None
    seed: int
    deterministic: bool
    parallel: bool
    twin: dict
    verify: dict
    raw: dict = field(repr=False, default_factory=dict)
    hash: str = ""
    name: str = ""


def _num(x):
    return float("inf") if x == "inf" else x


def build(raw: dict) -> RunConfig:
    cfg = normalise(raw)
    dim = cfg["dim"]
    k = cfg["kernel"]
    if dim == 2 and k["kappa"] != 0:
        warnings.warn("screening kappa applies to the 3D kernel only; ignored in 2D", stacklevel=2)
    f = dict(cfg["field"])
    expr = f.pop("expression", ())
    try:
        kernel = KernelSpec(dim, k["sign"], k["kappa"], k["softening"], k["coupling"])
        bfield = MagneticFieldSpec(
            f["family"], dim, f["amplitude"], f["B0"], f["a"], f["radius"], tuple(f["direction"]), expr if isinstance(expr, str) else tuple(expr)
        )
        init = dict(cfg["initial"])
        for key in ("x0", "v0"):
            if key in init:
                init[key] = tuple(init[key])
        initial = InitialData(**init)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["T"] > 0 and cfg["T"] < cfg["dt"]:
        warnings.warn("T is shorter than dt; the run takes a single trimmed step", stacklevel=2)
    m = cfg["markers"]
    return RunConfig(
        dim,
        kernel,
        bfield,
        initial,
        m["nx"],
        m["nv"],
        m["weight_floor"],
        float(cfg["dt"]),
        float(cfg["T"]),
        cfg["output_every"],
        tuple(_as_order(n) for n in cfg["moments"]),
        tuple(_num(p) for p in cfg["density"]["lp_orders"]),
        cfg["density"]["h"],
        cfg["seed"],
        cfg["deterministic"],
        cfg["parallel"],
        cfg["twin"],
        cfg["verify"],
        cfg,
        config_hash(cfg),
        cfg.get("name", ""),
    )


def _as_order(n):
    return int(n) if float(n).is_integer() else float(n)


def load(path: str | Path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return build(raw)
