"""Experiment configuration: defaults, dotted overrides, schema validation."""

from __future__ import annotations

import copy
import json
import os
from importlib import resources

import jsonschema

__all__ = ["ConfigError", "DEFAULTS", "schema", "load_config", "apply_override",
           "finalize", "train_config"]

CONFIG_SCHEMA_VERSION = 1
SEED_ENV = "FRCAP_SEED"


class ConfigError(ValueError):
    """The configuration failed to parse or validate."""


DEFAULTS = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "experiment": "train",
    "seed": 0,
    "output_dir": "frcap-out",
    "workers": 1,
    "norms": ["l2", "spectral", "path_1", "path_2", "group_2_2",
              "fr_model", "fr_empirical", "fr_model_natural", "fr_empirical_natural"],
    "dataset": {"source": "synthetic", "kind": "two_blobs", "params": {},
                "label_noise": 0.0, "test_fraction": 0.25},
    "network": {"hidden": [16, 16], "activation": "relu", "output_activation": "linear",
                "path": None},
    "train": {"optimizer": "sgd", "lr": 0.1, "epochs": 100, "loss": "cross_entropy"},
    "sweep": {"kind": "width", "widths": [8, 16, 32, 64], "depths": [1, 2, 3, 4],
              "width": 16, "depth": 2, "alphas": [0.0, 1.0]},
    "rademacher": {"ps": [5], "Ns": [50, 200, 800], "gammas": [1.0], "trials": 1000},
    "conditioning": {"optimizers": ["adam", "natural"],
                     "lrs": {"adam": 0.01, "natural": 0.3, "sgd": 0.1, "momentum": 0.05},
                     "iterations": 500, "record_every": 10},
    "verify": {"nets": 50, "points": 20, "tolerance": 1e-8},
}


# applied on top of DEFAULTS before the user's document
EXPERIMENT_DEFAULTS = {
    "conditioning": {"dataset": {"kind": "piecewise_linear_curve"},
                     "train": {"loss": "squared", "fisher": "model", "damping": 1e-3}},
    "rademacher": {"dataset": {"kind": "gaussian_linear"}},
}


def schema() -> dict:
    with resources.files("frcap").joinpath("schemas/config.schema.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"bad override key {key!r}")
    node = cfg
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key!r}: {p!r} is not a section")
        node = nxt
    node[parts[-1]] = _parse_value(text)
    return cfg


def finalize(doc: dict, overrides=(), experiment: str | None = None, env=None) -> dict:
    """Fill defaults, apply overrides and the seed variable, then validate."""
    env = os.environ if env is None else env
    kind = experiment or doc.get("experiment") or DEFAULTS["experiment"]
    cfg = _merge(_merge(DEFAULTS, EXPERIMENT_DEFAULTS.get(kind, {})), doc)
    cfg["experiment"] = kind
    for o in overrides:
        apply_override(cfg, o)
    if env.get(SEED_ENV):
        try:
            cfg["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    try:
        jsonschema.validate(cfg, schema())
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    return cfg


def load_config(path=None, overrides=(), experiment: str | None = None, env=None) -> dict:
    doc = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
    return finalize(doc, overrides, experiment, env)


def train_config(cfg: dict, **changes):
    """Build a :class:`~frcap.optimize.TrainConfig` from a finalized config."""
    from .optimize import TrainConfig

    fields = dict(cfg["train"])
    fields["seed"] = cfg["seed"]
    fields.update(changes)
    try:
        return TrainConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train section: {exc}") from None
