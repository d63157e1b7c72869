"""Run configuration: JSON file + ``key=value`` overrides, unknown keys rejected."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "data": {
        "n": 16,
        "k": 3,
        "d": 0.4,
        "count": 6000,
        "split": [5 / 6, 1 / 12, 1 / 12],
    },
    "model": {
        "family": "attention_score",
        "layers": None,
        "heads": 4,
        "d_model": 32,
        "d_k": 8,
        "long_residuals": True,
        "ffn": True,
        "laplacian_pe": False,
        "pe_dim": 4,
        "unnormalized_scores": False,
    },
    "conditioner": {
        "mode": "none",
        "attend_edges": True,
        "num_registers": 2,
        "num_eigen": 4,
        "d_p": 8,
        "normalize_attention": True,
    },
    "train": {
        "task": "supervised",
        "epochs": 10,
        "batch_size": 32,
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "weight_decay": 0.01,
        "mean_repulsive": 0.0,
        "repulsive_margin": 0.1,
        "latent_dim": 8,
        "T": 200,
        "s": 0.008,
    },
    "sample": {"final": "threshold"},
    "eval": {"threshold": None},
}


def _merge(base, update, prefix, provided):
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a table")
            _merge(base[key], value, path + ".", provided)
        else:
            base[key] = value
            provided.add(path)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve(config_path=None, overrides=()):
    """Defaults <- config file <- ``a.b=value`` overrides.

    Returns ``(config, provided)`` where ``provided`` lists the dotted keys
    the user set explicitly.
    """
    cfg = copy.deepcopy(DEFAULTS)
    provided = set()
    if config_path is not None:
        try:
            user = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: {exc}") from None
        _merge(cfg, user, "", provided)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        tree = _parse_value(raw)
        for part in reversed(key.split(".")):
            tree = {part: tree}
        _merge(cfg, tree, "", provided)
    return cfg, provided


def write_snapshot(cfg, out_dir, command, extra=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snap = {"command": command, "config": cfg, **(extra or {})}
    (out / "resolved_config.json").write_text(json.dumps(snap, indent=2, sort_keys=True) + "\n")
