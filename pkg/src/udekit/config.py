"""Run-config schema: validated with jsonschema before any command runs."""
import inspect
import json

import jsonschema

from .encoder import INTERPOLATIONS
from .errors import ConfigError
from .generators import GENERATORS, STIMULI
from .ude import DIFFUSIONS, DRIFTS

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_INT_LIST = {"type": "array", "items": _POS_INT}


def _family_schema(registry):
    """Per-family option schema derived from each constructor's keyword arguments."""
    branches = []
    for tag, cls in registry.items():
        names = [p for p in inspect.signature(cls.__init__).parameters
                 if p not in ("self", "dim", "input_dim", "seed")]
        props = {"type": {"const": tag}}
        props.update({n: {} for n in names})
        branches.append({"if": {"properties": {"type": {"const": tag}}},
                         "then": {"properties": props, "additionalProperties": False}})
    return {"type": "object", "required": ["type"],
            "properties": {"type": {"enum": sorted(registry)}}, "allOf": branches}


WINDOW = {
    "type": "object",
    "properties": {"kind": {"enum": ["fixed", "uniform"]}, "c": _POS_INT, "c_min": _POS_INT, "c_max": _POS_INT},
    "additionalProperties": False,
}

GENERATOR = {
    "type": "object",
    "required": ["generator"],
    "properties": {
        "generator": {"enum": list(GENERATORS)},
        "K": _POS_INT, "N": {"type": "integer", "minimum": 2}, "dt": {"type": "number", "exclusiveMinimum": 0},
        "seed": _INT, "dim": _POS_INT, "substeps": _POS_INT,
        "params": {"type": "object"},
        "stimulus": {"type": "object", "additionalProperties": False,
                     "properties": {"kind": {"enum": list(STIMULI)}, "dim": _POS_INT,
                                    "amplitude": _NUM, "period": {"type": "number", "exclusiveMinimum": 0}}},
        "observation": {"type": "object", "additionalProperties": False,
                        "properties": {"modality": {"enum": ["gaussian", "poisson"]},
                                       "readout": {"enum": ["identity", "affine", "mlp"]},
                                       "s": {"type": ["number", "array"]}, "obs_dim": _POS_INT,
                                       "bin_width": {"type": "number", "exclusiveMinimum": 0},
                                       "baseline": {"type": ["number", "array"]}}},
        "x0": {"oneOf": [{"type": "object", "additionalProperties": False,
                          "properties": {"low": _NUM, "high": _NUM}},
                         {"type": "array", "items": _NUM}, _NUM]},
        "pre_task": _POS_INT,
        "wrap_phases": {"type": "boolean"},
    },
    "additionalProperties": False,
}

DATASET = {"oneOf": [
    {"type": "object", "required": ["path"], "properties": {"path": {"type": "string"}},
     "additionalProperties": False},
    GENERATOR,
]}

MODEL = {
    "type": "object",
    "required": ["latent_dim"],
    "properties": {
        "latent_dim": _POS_INT,
        "seed": _INT,
        "prior": _family_schema(DRIFTS),
        "diffusion": _family_schema(DIFFUSIONS),
        "posterior": {"type": "object", "additionalProperties": False,
                      "properties": {"hidden": _INT_LIST, "use_time": {"type": "boolean"}, "last_scale": _NUM}},
        "context_lookahead": {"type": "integer", "minimum": 0},
        "encoder": {"type": "object", "additionalProperties": False,
                    "properties": {"kind": {"enum": ["identity", "affine"]}, "output_dim": _POS_INT,
                                   "interpolation": {"enum": list(INTERPOLATIONS)},
                                   "time_channel": {"type": "boolean"}}},
        "recognition": {"type": "object", "additionalProperties": False,
                        "properties": {"hidden": _POS_INT, "probabilistic": {"type": "boolean"}}},
        "observation": {"type": "object", "additionalProperties": False,
                        "properties": {"readout": {"enum": ["identity", "affine", "mlp"]},
                                       "s": {"type": ["number", "array"]}, "learn_s": {"type": "boolean"},
                                       "hidden": _INT_LIST}},
        "window": WINDOW,
    },
    "additionalProperties": False,
}

TRAIN = {
    "type": "object",
    "properties": {
        "learning_rate": {"type": "number", "minimum": 0},
        "epochs": {"type": "integer", "minimum": 0},
        "batch_size": _POS_INT,
        "n_paths": _POS_INT,
        "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "kl_anneal_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "final_lr_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "seed": _INT,
        "holdout": {"type": "integer", "minimum": 0},
        "eval_paths": _POS_INT,
    },
    "additionalProperties": False,
}

RUN_CONFIG = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["dataset", "output"],
    "properties": {"dataset": DATASET, "model": MODEL, "train": TRAIN, "output": {"type": "string"}},
    "additionalProperties": False,
}


def validate(cfg):
    """Raise :class:`ConfigError` listing every schema violation."""
    validator = jsonschema.Draft202012Validator(RUN_CONFIG)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"  {'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid run config:\n" + "\n".join(lines))
    return cfg


def load(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return validate(cfg)
