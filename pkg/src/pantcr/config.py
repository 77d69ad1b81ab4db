"""Run configuration: one JSON document with ``net``, ``train``, ``synth`` and ``eval`` sections.

Overrides use dot paths, e.g. ``net.stage_widths=[8,12,16]`` or
``train.epochs=500``.  Values are parsed as JSON when possible and kept as
strings otherwise.  Keys that do not exist in the defaults are rejected.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, fields
from pathlib import Path

from .dataset import SynthConfig
from .errors import ValidationError
from .net.config import NetworkConfig
from .trainer import TrainConfig


def default_config() -> dict:
    train = TrainConfig().to_dict()
    train.pop("seed")
    synth = asdict(SynthConfig())
    synth.pop("seed")
    synth.update({"scenes": 2, "scene_size": 512, "train": 32, "val": 8, "test_reduced": 4, "test_full": 0})
    return {
        "seed": 0,
        "net": NetworkConfig().to_dict(),
        "train": train,
        "synth": synth,
        "eval": {"split": "test_reduced", "save_visuals": False, "mse_vmax": 0.01},
    }


def _merge(base: dict, update: dict, path: str = "") -> dict:
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ValidationError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, where + ".")
        else:
            base[key] = value
    return base


def load_config(path=None) -> dict:
    """Defaults, optionally updated from a JSON file.

    A ``run.json`` written by a previous run is accepted too; its
    ``config`` entry is used.
    """
    cfg = default_config()
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(doc, dict) and "subcommand" in doc and "config" in doc:
        doc = doc["config"]
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return _merge(cfg, doc)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        for i, part in enumerate(parts):
            if not isinstance(node, dict) or part not in node:
                raise ValidationError(f"unknown config key {key!r}")
            if i == len(parts) - 1:
                node[part] = _parse_value(raw)
            else:
                node = node[part]
    return cfg


def network_config(cfg: dict) -> NetworkConfig:
    try:
        return NetworkConfig.from_dict(cfg["net"])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid net config: {exc}") from exc


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig.from_dict({**cfg["train"], "seed": int(cfg["seed"])})


def synth_config(cfg: dict) -> SynthConfig:
    known = {f.name for f in fields(SynthConfig)}
    params = {k: v for k, v in cfg["synth"].items() if k in known}
    return SynthConfig(**params, seed=int(cfg["seed"]))


def split_counts(cfg: dict) -> dict:
    s = cfg["synth"]
    return {k: int(s[k]) for k in ("train", "val", "test_reduced", "test_full")}
