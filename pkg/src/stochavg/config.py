"""Experiment configuration files: strict JSON, one schema per experiment kind.

A config is a JSON object with an ``experiment`` tag, a ``seed`` and the
parameters of that experiment; unknown keys are rejected so a mistyped
parameter name never passes silently.  See ``README.md`` for examples.
"""

import copy
import hashlib
import json

import jsonschema

__all__ = ["ConfigError", "EXPERIMENT_KINDS", "parse_config", "load_config", "emit_config",
           "config_hash"]

EXPERIMENT_KINDS = ("simulate", "average", "verify-averaging", "es-static", "es-dynamic",
                    "stability", "moments", "plot")


class ConfigError(ValueError):
    """Malformed or schema-violating configuration."""


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_vector = {"type": "array", "items": _num, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_coeffs = {"type": "array", "items": _num, "minItems": 3}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_noise = {"oneOf": [{"type": "null"},
                    _obj({"sigma1": _nonneg, "bound": _nonneg}, ["sigma1", "bound"])]}

_process = {"oneOf": [
    _obj({"kind": {"const": "iid-gaussian"}, "sigma": _pos}, ["kind", "sigma"]),
    _obj({"kind": {"const": "truncated-gaussian"}, "sigma1": _nonneg, "bound": _nonneg},
         ["kind", "sigma1", "bound"]),
    _obj({"kind": {"const": "finite-markov"}, "transition": _matrix, "states": _vector,
          "initial": {"type": ["integer", "null"], "minimum": 0}},
         ["kind", "transition", "states"]),
    _obj({"kind": {"const": "sampled-ou"}, "rate": _pos, "volatility": _nonneg, "period": _pos},
         ["kind", "rate", "volatility", "period"]),
]}

_static_map = _obj({"optimum_value": _num, "curvature": _num, "optimizer": _num},
                   ["optimum_value", "curvature", "optimizer"])

_system = {"oneOf": [
    _obj({"kind": {"const": "linear"}, "A": _matrix, "b": _vector,
          "g": {"enum": ["identity", "sin", "sin2"]}},
         ["kind", "A", "b"]),
    _obj({"kind": {"const": "static-error"}, "map": _static_map, "amplitude": _pos,
          "probe_sigma": _pos, "noise": _noise},
         ["kind", "map", "amplitude", "probe_sigma"]),
    _obj({"kind": {"const": "reduced-es"}, "varsigma": _coeffs, "gain": _pos, "w1": _pos,
          "w2": _pos, "amplitude": _pos, "probe_sigma": _pos, "noise": _noise},
         ["kind", "varsigma", "gain", "w1", "w2", "amplitude", "probe_sigma"]),
]}

_common = {"experiment": {"enum": list(EXPERIMENT_KINDS)},
           "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
           "output": {"type": "string"}}

_dyn = {"varsigma": _coeffs, "gain": _pos, "w1": _pos, "w2": _pos, "amplitude": _pos,
        "epsilon": _pos, "probe_sigma": _pos, "noise": _noise}

SCHEMAS = {
    "simulate": _obj({**_common, "system": _system, "perturbation": _process, "x0": _vector,
                      "epsilon": _pos, "steps": {"type": "integer", "minimum": 0}},
                     ["experiment", "system", "x0", "epsilon", "steps"]),
    "average": _obj({**_common, "system": _system, "perturbation": _process, "x0": _vector,
                     "epsilon": _pos, "steps": {"type": "integer", "minimum": 0},
                     "horizon": _nonneg, "rk4_step": _pos, "n_avg": _int_pos},
                    ["experiment", "system", "x0", "epsilon", "steps"]),
    "verify-averaging": _obj({**_common, "system": _system, "perturbation": _process,
                              "x0": _vector, "epsilons": {"type": "array", "items": _pos,
                                                          "minItems": 1},
                              "horizon": _pos, "replications": {"type": "integer", "minimum": 2},
                              "delta": _pos, "n_avg": _int_pos,
                              "envelope": _obj({"c": _nonneg, "gamma": _pos, "delta": _nonneg},
                                               ["c", "gamma", "delta"])},
                             ["experiment", "system", "x0", "epsilons", "horizon",
                              "replications"]),
    "es-static": _obj({**_common, "map": _static_map, "amplitude": _pos, "epsilon": _pos,
                       "probe_sigma": _pos, "noise": _noise, "initial_estimate": _num,
                       "steps": _int_pos, "band": _pos},
                      ["experiment", "map", "amplitude", "epsilon", "probe_sigma", "steps"]),
    "es-dynamic": _obj({**_common, **_dyn, "steps": _int_pos,
                        "initial": {"type": "array", "items": _num, "minItems": 3,
                                    "maxItems": 3},
                        "plant": _obj({"pole": {"type": "number", "minimum": 0,
                                                "exclusiveMaximum": 1},
                                       "theta_star": _num, "y_star": _num,
                                       "measure_after_update": {"type": "boolean"}})},
                       ["experiment", "varsigma", "gain", "w1", "w2", "amplitude", "epsilon",
                        "probe_sigma", "steps"]),
    "stability": _obj({**_common, **_dyn}, ["experiment", "varsigma", "gain", "w1", "w2",
                                            "amplitude", "probe_sigma"]),
    "moments": _obj({**_common, "sigma": _pos}, ["experiment", "sigma"]),
    "plot": _obj({**_common, "input": {"type": "string"}, "column": {"type": "string"},
                  "reference": _num},
                 ["experiment", "input"]),
}


def _where(err):
    path = "/".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def parse_config(text, kind=None):
    """Parse and validate config text; returns a plain dict.

    ``kind`` (the CLI subcommand) fills in a missing ``experiment`` tag and
    must agree with it when both are present.
    """
    if not text.strip():
        raise ConfigError("config is empty")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a JSON object")
    if kind is not None:
        tag = data.setdefault("experiment", kind)
        if tag != kind:
            raise ConfigError(f"experiment: config says {tag!r} but subcommand is {kind!r}")
    tag = data.get("experiment")
    if tag not in SCHEMAS:
        raise ConfigError(f"experiment: expected one of {list(EXPERIMENT_KINDS)}, got {tag!r}")
    validator = jsonschema.Draft202012Validator(SCHEMAS[tag])
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        # oneOf failures hide the useful message one level down
        if err.context:
            err = min(err.context, key=lambda e: len(list(e.relative_path)) * -1)
        raise ConfigError(f"{_where(err)}: {err.message}")
    return data


def load_config(path, kind=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, kind)


def emit_config(config):
    """Canonical JSON text (sorted keys, two-space indent, trailing newline)."""
    return json.dumps(config, indent=2, sort_keys=True) + "\n"


def config_hash(config):
    return hashlib.sha256(emit_config(config).encode("utf-8")).hexdigest()


def with_seed(config, seed):
    out = copy.deepcopy(config)
    if seed is not None:
        out["seed"] = int(seed)
    return out
