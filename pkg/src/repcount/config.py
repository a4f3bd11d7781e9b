"""JSON configuration files for the command-line tools.

A config file is one JSON object. Missing keys take their defaults,
unknown keys are rejected and every value is range-checked by the
dataclass it feeds. The resolved dict loads back to itself.
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

from .errors import ConfigError
from .synthetic import GenConfig, split_sizes
from .train import TrainConfig

KINDS = ("gen", "train", "ablate")
GEN_EXTRA = {"n": 200, "split": [0.8, 0.1, 0.1]}
ABLATE_EXTRA = {"seeds": 5, "gen": None}


def _build(cls, values, what):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    for k, v in values.items():
        if isinstance(v, bool) and k not in ("rca",):
            raise ConfigError(f"{what}.{k} must not be a boolean")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what} config: {exc}") from None


def _check_int(name, v, lo):
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"{name} must be an integer >= {lo}, got {v!r}")


def resolve_gen(values):
    values = dict(values)
    extra = {k: values.pop(k, d) for k, d in GEN_EXTRA.items()}
    _check_int("n", extra["n"], 1)
    split_sizes(extra["n"], extra["split"])
    cfg = _build(GenConfig, values, "gen")
    return {**cfg.to_dict(), "n": extra["n"], "split": [float(f) for f in extra["split"]]}


def resolve_train(values):
    values = dict(values)
    if values.get("tau") == "auto":
        values["tau"] = None
    if "betas" in values:
        values["betas"] = tuple(values["betas"])
    if not isinstance(values.get("model", {}), dict):
        raise ConfigError("model must be an object")
    if "rca" in values and not isinstance(values["rca"], bool):
        raise ConfigError("rca must be true or false")
    cfg = _build(TrainConfig, values, "train")
    out = cfg.to_dict()
    out["tau"] = "auto" if cfg.tau is None else float(cfg.tau)
    return out


def resolve_ablate(values):
    values = dict(values)
    seeds = values.pop("seeds", ABLATE_EXTRA["seeds"])
    gen = values.pop("gen", ABLATE_EXTRA["gen"])
    _check_int("seeds", seeds, 1)
    if gen is not None and not isinstance(gen, dict):
        raise ConfigError("gen must be an object")
    out = resolve_train(values)
    out["seeds"] = seeds
    out["gen"] = resolve_gen(gen or {})
    return out


_RESOLVERS = {"gen": resolve_gen, "train": resolve_train, "ablate": resolve_ablate}


def resolve(values, kind):
    if kind not in KINDS:
        raise ConfigError(f"config kind must be one of {KINDS}, got {kind!r}")
    if not isinstance(values, dict):
        raise ConfigError("config must be a JSON object")
    return _RESOLVERS[kind](values)


def load_config(path, kind):
    """Read and resolve a config file; ``None`` or an empty file gives the defaults."""
    if path is None:
        return resolve({}, kind)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        values = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    return resolve(values, kind)


def gen_config(resolved):
    d = {k: v for k, v in resolved.items() if k not in GEN_EXTRA}
    return GenConfig(**d)


def train_config(resolved):
    d = {k: v for k, v in resolved.items() if k not in ABLATE_EXTRA}
    d["tau"] = None if d["tau"] == "auto" else d["tau"]
    d["betas"] = tuple(d["betas"])
    return TrainConfig(**d)


def dump(resolved):
    return json.dumps(resolved, sort_keys=True, indent=2)
