"""Experiment configuration: parsing, validation, defaults, fingerprints.

Configs are YAML (JSON works too, YAML being a superset). Every key is
validated against the documented schema; unknown keys are rejected so
typos fail loudly instead of silently training with defaults. An empty
file yields the fully-defaulted centralized experiment: 50 epochs, batch
32, Adam at 0.001 with step-1 gamma-0.9 decay, and for federated mode 2
clients, 5 rounds of 10 epochs, Dirichlet alpha 10.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .autoencoder import AutoencoderConfig, TrainConfig
from .dataplane import SynthSpec
from .errors import ConfigError
from .federation import LatencyModel, StrategyConfig
from .numerics import LrSchedule

MODE_CENTRALIZED = "centralized"
MODE_FEDERATED = "federated"

# seed-stream tags so every consumer of the master seed gets its own stream
STREAM_SPLIT = 1
STREAM_PARTITION = 2
STREAM_INIT = 3
STREAM_CLIENT = 4
STREAM_TEST = 5
STREAM_TRAIN = 6

DEFAULT_CONFIG: dict = {
    "mode": MODE_CENTRALIZED,
    "seed": 42,
    "dataset": {
        "kind": "synth",
        "synth": {
            "n_normal": 2000,
            "n_attack": 200,
            "dim": 66,
            "displacement": 2.0,
            "seed": 42,
        },
        "path": None,
        "schema": None,
    },
    "model": {
        "input_dim": 66,
        "hidden_dims": [128, 64, 32],
        "bottleneck_dim": 16,
        "dropout_p": 0.2,
        "mirror_dropout": True,
    },
    "split": {
        "train_fraction": 0.8,
    },
    "train": {
        "epochs": 50,
        "batch_size": 32,
        "learning_rate": 0.001,
        "lr_step": 1,
        "lr_gamma": 0.9,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_epsilon": 1e-8,
    },
    "federation": {
        "n_clients": 2,
        "rounds": 5,
        "epochs_per_round": 10,
        "alpha": 10.0,
        "min_participation": None,
        "latency": None,
    },
    "strategy": {
        "kind": "fedavg",
        "q": 0.0,
        "lipschitz": None,
        "sample_fraction": 1.0,
        "weighted_mean": False,
        "relevance_window": 64,
    },
    "detector": {
        "use_sample_std": False,
    },
}

_LATENCY_KEYS = {"delays", "per_round", "jitter", "drop_after"}


def _type_name(value) -> str:
    return type(value).__name__


def _check_scalar(path: str, value, default) -> object:
    """Coerce a user scalar onto the default's type, or fail naming the key."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {_type_name(value)}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected int, got {_type_name(value)}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {_type_name(value)}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {_type_name(value)}")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected list, got {_type_name(value)}")
        return list(value)
    return value


def _merge(path: str, user: dict, defaults: dict) -> dict:
    merged = {}
    unknown = set(user) - set(defaults)
    if unknown:
        key = sorted(unknown)[0]
        where = f"{path}.{key}" if path else key
        raise ConfigError(f"unknown config key {where!r}")
    for key, default in defaults.items():
        here = f"{path}.{key}" if path else key
        if key not in user or user[key] is None:
            merged[key] = copy.deepcopy(default)
            continue
        value = user[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected mapping, got {_type_name(value)}")
            merged[key] = _merge(here, value, default)
        else:
            merged[key] = _check_scalar(here, value, default)
    return merged


def _validate_latency(raw) -> dict | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ConfigError("federation.latency: expected mapping")
    unknown = set(raw) - _LATENCY_KEYS
    if unknown:
        raise ConfigError(
            f"unknown config key 'federation.latency.{sorted(unknown)[0]}'")
    out = {
        "delays": {int(k): float(v)
                   for k, v in (raw.get("delays") or {}).items()},
        "per_round": {int(r): {int(k): float(v) for k, v in (m or {}).items()}
                      for r, m in (raw.get("per_round") or {}).items()},
        "jitter": float(raw.get("jitter") or 0.0),
        "drop_after": (None if raw.get("drop_after") is None
                       else float(raw["drop_after"])),
    }
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated, fully-defaulted experiment description."""

    data: dict

    def __post_init__(self):
        mode = self.data["mode"]
        if mode not in (MODE_CENTRALIZED, MODE_FEDERATED):
            raise ConfigError(
                f"mode: expected '{MODE_CENTRALIZED}' or '{MODE_FEDERATED}', "
                f"got {mode!r}")
        kind = self.data["dataset"]["kind"]
        if kind not in ("synth", "csv"):
            raise ConfigError(f"dataset.kind: expected 'synth' or 'csv', got {kind!r}")
        if kind == "csv" and not self.data["dataset"]["path"]:
            raise ConfigError("dataset.kind is 'csv' but dataset.path is unset")

    @property
    def mode(self) -> str:
        return self.data["mode"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def with_seed(self, seed: int) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        data["seed"] = int(seed)
        return ExperimentConfig(data)

    def canonical_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def model_config(self) -> AutoencoderConfig:
        m = self.data["model"]
        return AutoencoderConfig(
            input_dim=m["input_dim"],
            hidden_dims=tuple(m["hidden_dims"]),
            bottleneck_dim=m["bottleneck_dim"],
            dropout_p=m["dropout_p"],
            seed=self.derived_seed(STREAM_INIT),
            mirror_dropout=m["mirror_dropout"],
        )

    def train_config(self, epochs: int, shuffle_seed: int = 0) -> TrainConfig:
        t = self.data["train"]
        return TrainConfig(
            epochs=epochs,
            batch_size=t["batch_size"],
            schedule=LrSchedule(t["learning_rate"], t["lr_step"], t["lr_gamma"]),
            shuffle_seed=shuffle_seed,
            adam_beta1=t["adam_beta1"],
            adam_beta2=t["adam_beta2"],
            adam_epsilon=t["adam_epsilon"],
        )

    def strategy_config(self) -> StrategyConfig:
        s = self.data["strategy"]
        return StrategyConfig(
            kind=s["kind"],
            q=s["q"],
            lipschitz=s["lipschitz"],
            sample_fraction=s["sample_fraction"],
            weighted_mean=s["weighted_mean"],
            relevance_window=s["relevance_window"],
        )

    def latency_model(self) -> LatencyModel | None:
        raw = self.data["federation"]["latency"]
        if raw is None:
            return None
        return LatencyModel(delays=dict(raw["delays"]),
                            per_round={r: dict(m) for r, m in raw["per_round"].items()},
                            jitter=raw["jitter"],
                            drop_after=raw["drop_after"])

    def synth_spec(self) -> SynthSpec:
        s = self.data["dataset"]["synth"]
        return SynthSpec(n_normal=s["n_normal"], n_attack=s["n_attack"],
                         dim=s["dim"], displacement=s["displacement"],
                         seed=s["seed"])

    def derived_seed(self, *parts: int) -> int:
        from .numerics import derive_seed
        return derive_seed(self.seed, *parts)


def build_config(user: dict | None) -> ExperimentConfig:
    """Validate a raw mapping against the schema and fill defaults."""
    user = user or {}
    if not isinstance(user, dict):
        raise ConfigError(f"config root must be a mapping, got {_type_name(user)}")
    if isinstance(user.get("dataset"), dict):
        dataset = user["dataset"]
        if dataset.get("path") and "kind" not in dataset:
            user = {**user, "dataset": {**dataset, "kind": "csv"}}
    latency_raw = None
    if isinstance(user.get("federation"), dict):
        federation = dict(user["federation"])
        latency_raw = _validate_latency(federation.pop("latency", None))
        user = {**user, "federation": federation}
    merged = _merge("", user, DEFAULT_CONFIG)
    merged["federation"]["latency"] = latency_raw
    mp = merged["federation"]["min_participation"]
    if mp is not None:
        if isinstance(mp, bool) or not isinstance(mp, int) or mp < 0:
            raise ConfigError(
                "federation.min_participation: expected nonnegative int")
    lip = merged["strategy"]["lipschitz"]
    if lip is not None:
        merged["strategy"]["lipschitz"] = float(lip)
    return ExperimentConfig(merged)


def parse_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a config file; blank files mean all defaults."""
    text = Path(path).read_text()
    raw = yaml.safe_load(text) if text.strip() else None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {_type_name(raw)}")
    return build_config(raw)


def emit_config(cfg: ExperimentConfig, path: str | Path) -> None:
    """Write the canonical form; re-parsing it reproduces the config."""
    Path(path).write_text(
        yaml.safe_dump(cfg.canonical_dict(), sort_keys=True))
