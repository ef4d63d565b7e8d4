"""Layered run configuration: defaults <- profile <- config file <- environment
<- command-line flags, resolved and validated before any work starts.

Environment overrides use the ``MMR_`` prefix with section and key joined by
underscores, e.g. ``MMR_TRAIN_EPOCHS=50`` or ``MMR_PROFILE=desk``. Values are
parsed as JSON where possible, falling back to raw strings.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Mapping

from .evaluation import ProtocolConfig
from .trainer import TrainConfig, config_hash

ENV_PREFIX = "MMR_"

PROFILES: dict[str, dict[str, Any]] = {
    # full-scale: the documented defaults of TrainConfig
    "full": {"train": {}},
    # desk-scale: small dims, fast convergence for synthetic verification
    "desk": {"train": {"epochs": 100, "batch_size": 16, "dim": 32,
                       "lr_start": 1e-3, "lr_end": 1e-4}},
}

DEFAULTS: dict[str, Any] = {
    "profile": "desk",
    "train": {},
    "model": {},
    "protocol": {"protocol": "all", "threshold": 0.80, "batch_size": 32, "seed": 0},
}


class ConfigError(ValueError):
    pass


def _deep_merge(base: dict, update: Mapping) -> dict:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _env_overrides(env: Mapping[str, str]) -> dict:
    out: dict[str, Any] = {}
    for raw_key, raw_value in env.items():
        if not raw_key.startswith(ENV_PREFIX):
            continue
        path = raw_key[len(ENV_PREFIX):].lower().split("_", 1)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        if len(path) == 1:
            out[path[0]] = value
        else:
            out.setdefault(path[0], {})
            if isinstance(out[path[0]], dict):
                out[path[0]][path[1]] = value
    return out


def resolve_config(config_file: str | Path | None = None,
                   cli_overrides: Mapping | None = None,
                   env: Mapping[str, str] | None = None) -> dict[str, Any]:
    """Merge all layers and return the fully resolved configuration dict."""
    env = os.environ if env is None else env
    resolved = copy.deepcopy(DEFAULTS)

    layers: list[Mapping] = []
    if config_file is not None:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            layers.append(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    layers.append(_env_overrides(env))
    if cli_overrides:
        layers.append(cli_overrides)

    # profile may be set by any layer; apply its presets before the
    # explicit per-layer values so user keys always win
    profile = resolved["profile"]
    for layer in layers:
        profile = layer.get("profile", profile)
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    resolved = _deep_merge(resolved, PROFILES[profile])
    for layer in layers:
        resolved = _deep_merge(resolved, layer)
    resolved["profile"] = profile
    return resolved


def train_config_from(resolved: Mapping[str, Any]) -> TrainConfig:
    spec = dict(resolved.get("train", {}))
    if "modalities" in spec:
        spec["modalities"] = tuple(spec["modalities"])
    try:
        return TrainConfig(**spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train configuration: {exc}") from exc


def protocol_config_from(resolved: Mapping[str, Any]) -> ProtocolConfig:
    spec = dict(resolved.get("protocol", {}))
    if "k_values" in spec:
        spec["k_values"] = tuple(spec["k_values"])
    try:
        return ProtocolConfig(**spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid protocol configuration: {exc}") from exc


def echo_config(resolved: Mapping[str, Any], out_dir: str | Path) -> Path:
    """Write the resolved configuration (plus its hash) into an output dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = dict(resolved)
    payload["config_hash"] = config_hash(dict(resolved))
    target = out / "resolved_config.json"
    target.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return target
