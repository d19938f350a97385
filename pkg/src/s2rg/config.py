"""Run configuration: a single JSON document with defaults, overrides and a hash."""

from __future__ import annotations

import copy
import json
import os
from typing import Iterable, Optional

from .core import config_hash


class ConfigError(ValueError):
    """Invalid or unresolvable configuration."""


DEFAULT_CONFIG = {
    "run_id": "run",
    "seed": 0,
    "env": {"name": "block", "horizon": 400},
    # null ranges mean the environment's shipped defaults
    "ranges": None,
    "effect_ranges": None,
    # wider ranges for held-out targets; null means "same as ranges"
    "target_ranges": None,
    "source": {
        "kind": "dr",
        "mode": "rand",
        "custom": "partial",
        "adr": {"step_fraction": 0.1, "capacity": 10, "t_low": 5.0, "t_high": 20.0, "p_boundary": 0.5},
    },
    "policy": {"hidden": 32},
    "cem": {
        "population": 48,
        "elite_frac": 0.25,
        "iterations": 60,
        "init_std": 0.3,
        "episodes_per_candidate": 6,
        "noise_floor": 0.05,
    },
    "model": {
        "bins": 33,
        "hidden": 64,
        "epochs": 10,
        "batch_size": 256,
        "learning_rate": 0.001,
        "max_transitions": 100000,
        "percentile": 99.9,
    },
    "checkpoint_every": 10,
    "evaluation": {"episodes": 100, "record_episodes": 30, "episodes_per_policy": 20, "block": 5},
}

_ENVS = ("block", "linear")


def _merge(base: dict, over: dict) -> dict:
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


def apply_overrides(cfg: dict, pairs: Iterable[str]) -> dict:
    """Apply ``key=value`` overrides; dotted keys reach into nested sections."""
    cfg = copy.deepcopy(cfg)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = _parse_value(raw)
    return cfg


def validate(cfg: dict) -> dict:
    unknown = set(cfg) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if cfg["env"].get("name") not in _ENVS:
        raise ConfigError(f"env.name must be one of {_ENVS}")
    src = cfg["source"]
    if src.get("kind") not in ("dr", "adr"):
        raise ConfigError("source.kind must be 'dr' or 'adr'")
    if src.get("mode") not in ("cal", "ext", "rand"):
        raise ConfigError("source.mode must be cal, ext or rand")
    if src.get("custom") not in ("none", "partial", "all"):
        raise ConfigError("source.custom must be none, partial or all")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("seed must be an integer")
    if not isinstance(cfg["checkpoint_every"], int) or cfg["checkpoint_every"] < 1:
        raise ConfigError("checkpoint_every must be a positive integer")
    if not str(cfg["run_id"]) or any(c in str(cfg["run_id"]) for c in "/\\ "):
        raise ConfigError("run_id must be a non-empty name without separators or spaces")
    for sec in ("cem", "model", "policy", "evaluation"):
        extra = set(cfg[sec]) - set(DEFAULT_CONFIG[sec])
        if extra:
            raise ConfigError(f"unknown keys in {sec}: {sorted(extra)}")
    # construct the typed objects once so bad values fail before any compute
    from .harness import build_setup
    try:
        build_setup(cfg)
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def resolve(user: Optional[dict] = None, overrides: Iterable[str] = (), env=None) -> dict:
    """Merge defaults, a user document and overrides; ``S2RG_SEED`` wins over all."""
    env = os.environ if env is None else env
    if user is not None and not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, user or {})
    cfg = apply_overrides(cfg, overrides)
    if env.get("S2RG_SEED"):
        try:
            cfg["seed"] = int(env["S2RG_SEED"])
        except ValueError:
            raise ConfigError("S2RG_SEED must be an integer") from None
    return validate(cfg)


def load_config(path, overrides: Iterable[str] = (), env=None) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return resolve(user, overrides, env)


def hash_of(cfg: dict) -> str:
    return config_hash(cfg)
