"""Run configuration schema and the named experiment presets."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .errors import InvalidConfig
from .trainer import TrainConfig

SCHEMA_VERSION = 1
WORKSPACE_ENV = "PERIOGAN_WORKSPACE"
DEVICE_ENV = "PERIOGAN_DEVICE"

_TRAIN_KEYS = {
    "model_kind": {"enum": ["cgan", "wgan", "wgan_gp", "stylegan2_lite"]},
    "image_size": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
    "learning_rate": {"type": "number", "exclusiveMinimum": 0},
    "optimizer": {"enum": ["adam", "rmsprop"]},
    "batch_size": {"type": "integer", "minimum": 1},
    "budget": {"type": "number", "exclusiveMinimum": 0},
    "budget_unit": {"enum": ["kimg", "epochs", "steps"]},
    "eval_every_kimg": {"type": "number", "exclusiveMinimum": 0},
    "seed": {"type": "integer"},
    "data_seed": {"type": "integer"},
    "z_dim": {"type": ["integer", "null"], "minimum": 1},
    "base_channels": {"type": "integer", "minimum": 1},
    "betas": {"type": ["array", "null"], "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    "n_critic": {"type": ["integer", "null"], "minimum": 1},
    "gp_lambda": {"type": "number", "exclusiveMinimum": 0},
    "clip_c": {"type": "number", "exclusiveMinimum": 0},
    "non_saturating": {"type": "boolean"},
    "augment_p": {"type": "number", "minimum": 0, "maximum": 1},
    "fid_samples": {"type": "integer", "minimum": 2},
    "embedder": {"type": "string"},
    "log_every": {"type": "integer", "minimum": 1},
    "samples_per_eval": {"type": "integer", "minimum": 0},
    "divergence_limit": {"type": "number", "exclusiveMinimum": 0},
    "divergence_patience": {"type": "integer", "minimum": 1},
}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "workspace": {"type": "string"},
        "seed": {"type": "integer"},
        "corpus": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "manifest": {"type": "string"},
                "labeling": {"type": ["object", "string"]},
                "target_size": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                "minItems": 2, "maxItems": 2},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["model_kind"],
            "properties": _TRAIN_KEYS,
        },
        "quality": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "embedder": {"type": "string"},
                "fid_samples": {"type": "integer", "minimum": 2},
                "tsne": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "perplexity": {"type": "number", "exclusiveMinimum": 0},
                        "n_iter": {"type": "integer", "minimum": 1},
                        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                        "seed": {"type": "integer"},
                    },
                },
            },
        },
        "pad": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "classifier": {"type": "string"},
                "threshold": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    },
}


@dataclass(frozen=True)
class RunConfig:
    doc: dict

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        try:
            jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise InvalidConfig(f"run config invalid at {list(exc.absolute_path)}: {exc.message}") from None
        return cls(copy.deepcopy(doc))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    @property
    def name(self) -> str:
        return self.doc.get("name") or self.doc.get("model", {}).get("model_kind", "run")

    @property
    def workspace(self) -> Path:
        return Path(os.environ.get(WORKSPACE_ENV) or self.doc.get("workspace") or ".")

    def train_config(self) -> TrainConfig:
        if "model" not in self.doc:
            raise InvalidConfig("config has no model section")
        model = dict(self.doc["model"])
        if "seed" in self.doc:
            model.setdefault("seed", self.doc["seed"])
            model.setdefault("data_seed", self.doc["seed"])
        return TrainConfig.from_dict(model)

    def with_overrides(self, model: dict | None = None, **top) -> "RunConfig":
        doc = copy.deepcopy(self.doc)
        doc.update(top)
        if model:
            doc.setdefault("model", {}).update(model)
        return RunConfig.from_dict(doc)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.doc, sort_keys=True).encode()).hexdigest()[:16]


def _model(kind, size, lr, optimizer, budget, unit, **extra):
    d = {"model_kind": kind, "image_size": list(size), "learning_rate": lr, "optimizer": optimizer,
         "batch_size": 60, "budget": budget, "budget_unit": unit, "eval_every_kimg": 200}
    d.update(extra)
    return d


# Hyperparameters for the experiment grid. The cGAN learning rate is an
# assumption (2e-4, the usual DCGAN value).
RECIPES: dict[str, dict] = {
    "exp1-cgan-80x160": {
        "schema_version": SCHEMA_VERSION, "name": "exp1-cgan-80x160", "seed": 0,
        "corpus": {"target_size": [80, 160]},
        "model": _model("cgan", (80, 160), 2e-4, "adam", 500, "epochs"),
    },
    "exp1-cgan-320x240": {
        "schema_version": SCHEMA_VERSION, "name": "exp1-cgan-320x240", "seed": 0,
        "corpus": {"target_size": [320, 240]},
        "model": _model("cgan", (320, 240), 2e-4, "adam", 500, "epochs"),
    },
    "exp2-wgan": {
        "schema_version": SCHEMA_VERSION, "name": "exp2-wgan", "seed": 0,
        "corpus": {"target_size": [320, 240]},
        "model": _model("wgan", (320, 240), 1e-5, "rmsprop", 500, "epochs", clip_c=0.01, n_critic=5),
    },
    "exp3-wgangp": {
        "schema_version": SCHEMA_VERSION, "name": "exp3-wgangp", "seed": 0,
        "corpus": {"target_size": [320, 240]},
        "model": _model("wgan_gp", (320, 240), 1e-4, "adam", 1000, "epochs", gp_lambda=10.0, n_critic=5),
    },
    "exp4-stylegan2": {
        "schema_version": SCHEMA_VERSION, "name": "exp4-stylegan2", "seed": 0,
        "corpus": {"target_size": [320, 240]},
        "model": _model("stylegan2_lite", (320, 240), 2.5e-3, "adam", 3600, "kimg"),
    },
    "unknown-attack": {
        "schema_version": SCHEMA_VERSION, "name": "unknown-attack", "seed": 0,
        "pad": {"classifier": "baseline", "threshold": 0.5},
        "quality": {"embedder": "inception-v3", "fid_samples": 3000},
    },
}

# learning rates compared for the StyleGAN2 family
STYLEGAN_LR_SWEEP = (2.5e-3, 1e-4, 1e-2)


def recipe(name: str) -> RunConfig:
    try:
        return RunConfig.from_dict(RECIPES[name])
    except KeyError:
        raise InvalidConfig(f"unknown recipe {name!r}; choose from {sorted(RECIPES)}") from None
