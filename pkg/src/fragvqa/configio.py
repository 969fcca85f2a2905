"""Layered run configuration: defaults, then a config file, then flags.

Every resolved run emits its effective configuration as canonical JSON
plus a sha256 hash, so any artifact can be traced back to the exact
settings that produced it.
"""

from __future__ import annotations

import hashlib
import json
import os

import yaml

from .errors import ConfigurationError


def load_config_file(path) -> dict:
    """Read a YAML (or JSON, a YAML subset) mapping of config keys."""
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: unparseable config: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a key-value mapping")
    return data


def merge_config(defaults: dict, config_path=None, overrides: dict | None = None) -> dict:
    """Resolve defaults <- config file <- explicit overrides.

    Unknown keys at either layer are rejected by name; an override whose
    value is None is treated as "not set" so flag defaults never mask
    file values.
    """
    cfg = dict(defaults)
    for layer_name, layer in (("config file", load_config_file(config_path) if config_path else {}),
                              ("flags", overrides or {})):
        unknown = sorted(set(layer) - set(defaults))
        if unknown:
            raise ConfigurationError(
                f"unknown {layer_name} keys: {', '.join(unknown)} "
                f"(known: {', '.join(sorted(defaults))})")
        for key, value in layer.items():
            if value is not None:
                cfg[key] = value
    return cfg


def canonical_json(cfg: dict) -> str:
    try:
        return json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    except TypeError as exc:
        raise ConfigurationError(f"config is not JSON-serializable: {exc}") from exc


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


def emit_effective_config(cfg: dict, out_dir, command: str) -> str:
    """Write <out_dir>/effective_config.json embedding the hash; return
    the hash."""
    digest = config_hash(cfg)
    payload = {"command": command, "config": cfg, "sha256": digest}
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.json"), "w",
              encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return digest
