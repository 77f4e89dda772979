"""YAML run configuration with defaults for every recognised key."""
from __future__ import annotations

import copy

import yaml

from .topology import ConfigError, _get

DEFAULTS = {
    "topology": {"kind": "star", "link_gbps": 100.0, "nics_per_host": 1},
    "cluster": {"prefill_units": 8, "decode_units": 8, "hosts_per_unit": 2, "decode_infinite": True,
                "max_batch_tokens": 8192},
    "model": {"layers": 16, "alpha_ms": 1.0, "beta_us_per_token": 2.0,
              "kv_bytes_per_token_layer": 32768, "coll_bytes_per_token_layer": 16384},
    "workload": {"requests": 2000, "prompt_mean": 2048, "prompt_sigma": 0.6, "reuse_mean": 0.5,
                 "reuse_skew": 1.2, "token_quantum": 64, "reuse_quantum": 0.125,
                 "slo_multiplier": 3.0, "trace": None},
    "sim": {"horizon_s": 300.0, "promotion_tick_ms": 1.0, "seed": 0},
    "mfs": {"K": 8, "E": 4.0, "U": 0.5},
    "inter": {"drop_budget_frac": 0.05, "enable_pruning": True},
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def validate(cfg: dict) -> dict:
    for section, body in cfg.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{section}: unknown section")
        if not isinstance(body, dict):
            raise ConfigError(f"{section}: expected a mapping")
        for k in body:
            if k not in DEFAULTS[section] and not (section == "topology" and k in ("hosts", "k")):
                raise ConfigError(f"{section}.{k}: unknown key")
    _get(cfg, "model.layers", cast=int, positive=True)
    _get(cfg, "sim.promotion_tick_ms", cast=float, positive=True)
    _get(cfg, "sim.horizon_s", cast=float, positive=True)
    _get(cfg, "workload.slo_multiplier", cast=float, positive=True)
    _get(cfg, "cluster.max_batch_tokens", cast=int, positive=True)
    frac = _get(cfg, "inter.drop_budget_frac", cast=float)
    if not 0 <= frac <= 1:
        raise ConfigError("inter.drop_budget_frac: must lie in [0, 1]")
    for key in ("model.alpha_ms", "model.beta_us_per_token", "model.kv_bytes_per_token_layer",
                "model.coll_bytes_per_token_layer"):
        if _get(cfg, key, cast=float) < 0:
            raise ConfigError(f"{key}: must be >= 0")
    return cfg


def load_config(path=None, overrides=None) -> dict:
    """Defaults, then the YAML file at ``path``, then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = deep_merge(cfg, data)
    if overrides:
        cfg = deep_merge(cfg, overrides)
    return validate(cfg)
