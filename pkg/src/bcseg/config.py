"""Run configuration files: a nested key tree mapped onto :class:`TrainConfig`.

Schema (every key optional)::

    model: {arch, topology, base_features, depth, max_features, n_classes}
    loss:  {lambda}
    optim: {lr, lr_decay, betas, eps}
    train: {batch_size, epochs, samples_per_epoch, seed}
    data:  {shape: [W, H, Z]}

JSON or TOML files are accepted; ``key.path=value`` overrides win over the file.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from .models.graph import Arch, Topology
from .training import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# key path -> (TrainConfig field, type)
SCHEMA: dict[str, tuple[str, type]] = {
    "model.arch": ("arch", str),
    "model.topology": ("topology", str),
    "model.base_features": ("base_features", int),
    "model.depth": ("depth", int),
    "model.max_features": ("max_features", int),
    "model.n_classes": ("n_classes", int),
    "loss.lambda": ("lam", float),
    "optim.lr": ("lr", float),
    "optim.lr_decay": ("lr_decay", float),
    "optim.betas": ("betas", list),
    "optim.eps": ("adam_eps", float),
    "train.batch_size": ("batch_size", int),
    "train.epochs": ("epochs", int),
    "train.samples_per_epoch": ("samples_per_epoch", int),
    "train.seed": ("seed", int),
    "data.shape": ("shape", list),
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class RunConfig:
    train: TrainConfig
    shape: tuple[int, int, int] | None = None
    raw: dict = field(default_factory=dict)

    def snapshot(self) -> dict:
        """Fully-resolved key tree; feeding it back reproduces this config."""
        t = self.train
        return {
            "model": {
                "arch": t.arch,
                "topology": t.topology,
                "base_features": t.base_features,
                "depth": t.depth,
                "max_features": t.max_features,
                "n_classes": t.n_classes,
            },
            "loss": {"lambda": t.lam},
            "optim": {"lr": t.lr, "lr_decay": t.lr_decay, "betas": list(t.betas), "eps": t.adam_eps},
            "train": {
                "batch_size": t.batch_size,
                "epochs": t.epochs,
                "samples_per_epoch": t.samples_per_epoch,
                "seed": t.seed,
            },
            "data": {"shape": list(self.shape) if self.shape else None},
        }


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        return {}
    if path.suffix == ".toml":
        return tomllib.loads(text)
    return json.loads(text)


def _flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError([f"override {text!r} must look like key.path=value"])
    key, value = text.split("=", 1)
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value


def _coerce(key: str, value: Any, kind: type, errors: list[str]) -> Any:
    if value is None:
        return None
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            errors.append(f"{key}: expected an integer, got {value!r}")
            return None
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{key}: expected a number, got {value!r}")
            return None
        return float(value)
    if kind is list:
        if not isinstance(value, (list, tuple)):
            errors.append(f"{key}: expected a list, got {value!r}")
            return None
        return list(value)
    return str(value)


def validate_config(
    source: str | Path | dict | None = None,
    overrides: Sequence[str] | dict = (),
) -> RunConfig:
    """Schema-check a config file (or dict), fill defaults, apply overrides.

    Raises :class:`ConfigError` listing every problem by key path.
    """
    tree = read_config_file(source) if isinstance(source, (str, Path)) else dict(source or {})
    flat = _flatten(tree)
    if isinstance(overrides, dict):
        flat.update(overrides)
    else:
        for o in overrides:
            k, v = parse_override(o)
            flat[k] = v

    errors = [f"{k}: unknown key" for k in flat if k not in SCHEMA]
    kw: dict[str, Any] = {}
    shape = None
    for key, value in flat.items():
        if key not in SCHEMA:
            continue
        name, kind = SCHEMA[key]
        value = _coerce(key, value, kind, errors)
        if value is None:
            continue
        if name == "shape":
            if len(value) != 3 or not all(isinstance(v, int) and v >= 1 for v in value):
                errors.append(f"{key}: expected three positive integers, got {value!r}")
            else:
                shape = tuple(value)
            continue
        if name == "betas":
            if len(value) != 2 or not all(0 <= float(b) < 1 for b in value):
                errors.append(f"{key}: expected two numbers in [0, 1), got {value!r}")
                continue
            value = tuple(float(b) for b in value)
        kw[name] = value

    if "lam" in kw and not kw["lam"] >= 0:
        errors.append(f"loss.lambda: must be >= 0, got {kw['lam']}")
    if "lr" in kw and not kw["lr"] > 0:
        errors.append(f"optim.lr: must be > 0, got {kw['lr']}")
    if "arch" in kw and kw["arch"] not in {a.value for a in Arch}:
        errors.append(f"model.arch: must be one of {[a.value for a in Arch]}, got {kw['arch']!r}")
    if "topology" in kw and kw["topology"] not in {t.value for t in Topology}:
        errors.append(f"model.topology: must be one of {[t.value for t in Topology]}, got {kw['topology']!r}")
    for key, name, lo in (
        ("train.batch_size", "batch_size", 1),
        ("train.epochs", "epochs", 1),
        ("model.depth", "depth", 2),
        ("model.base_features", "base_features", 1),
        ("model.n_classes", "n_classes", 2),
        ("train.samples_per_epoch", "samples_per_epoch", 1),
    ):
        if name in kw and kw[name] < lo:
            errors.append(f"{key}: must be >= {lo}, got {kw[name]}")
    depth = kw.get("depth", next(f.default for f in fields(TrainConfig) if f.name == "depth"))
    if shape is not None and isinstance(depth, int) and depth >= 2:
        factor = 2 ** (depth - 1)
        for axis, n in zip("WHZ", shape):
            if n % factor:
                errors.append(f"data.shape: axis {axis}={n} is not divisible by {factor} (depth {depth})")
    if errors:
        raise ConfigError(errors)
    return RunConfig(TrainConfig(**kw), shape, tree)
