"""Scenario/training configuration, the flat config-file format and seed streams.

Config files are plain ``key = value`` lines; ``#`` starts a comment.  Keys are
the field names of :class:`SystemConfig`, :class:`TrainConfig` and
:class:`EvalConfig` (all unique), lists are comma separated::

    # desk-scale profile
    n_tx = 16
    variant = C3
    test_snr_db = -5, 0, 5
"""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError

VARIANTS = ("C1", "C2", "C3")
SCHEMES = ("proposed", "dnn_noa", "rnn_a")
GAIN_DB_MODES = ("linear_mean", "mean_db")


@dataclass
class TrainConfig:
    batch_size: int = 1024
    iterations: int = 20000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    train_snr_db: float = 10.0
    log_interval: int = 100
    checkpoint_interval: int = 0
    # exponent on the Frobenius norm in the objective denominator
    norm_power: int = 1
    aux_weight: float = 1.0


@dataclass
class EvalConfig:
    eval_samples: int = 10000
    test_snr_db: tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    threshold_db: float = 20.0
    gain_db_mode: str = "linear_mean"
    eval_batch: int = 1000


@dataclass
class SystemConfig:
    scheme: str = "proposed"
    variant: str = "C3"
    n_tx: int = 32
    n_rx: int = 16
    n_cb: int = 8
    t_steps: int = 16
    n_paths: int = 3
    # unused by C1, whose feedback is a codebook index
    n_fb: int = 16
    param_budget: int = 500_000
    # 0 = solve the width from param_budget
    hidden_size: int = 0
    fixed_start: bool = False
    # feedback from the state before the last measurement (literal index set)
    feedback_literal: bool = False
    sweep_t_values: tuple[int, ...] = (2, 4, 8, 16)
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def sigma_train(self) -> float:
        return snr_db_to_sigma(self.train.train_snr_db)

    def replace(self, **changes) -> "SystemConfig":
        """Copy with flat-key changes applied (keys may belong to sub-configs)."""
        return apply_overrides(self, changes)

    def to_flat(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                out.update({k: _jsonable(x) for k, x in dataclasses.asdict(v).items()})
            else:
                out[f.name] = _jsonable(v)
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, Any]) -> "SystemConfig":
        return apply_overrides(cls(), flat, parse_strings=False)


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def snr_db_to_sigma(snr_db: float) -> float:
    """Noise std for per-antenna SNR 1/sigma^2 given in dB."""
    return float(10.0 ** (-snr_db / 20.0))


def _field_owner() -> dict[str, tuple[str | None, dataclasses.Field]]:
    owners = {}
    for f in fields(SystemConfig):
        if f.name in ("train", "eval"):
            continue
        owners[f.name] = (None, f)
    for sub, cls in (("train", TrainConfig), ("eval", EvalConfig)):
        for f in fields(cls):
            owners[f.name] = (sub, f)
    return owners


_OWNERS = _field_owner()
KNOWN_KEYS = tuple(_OWNERS)


def _coerce(key: str, ftype: str, raw: Any, parse_strings: bool):
    try:
        if ftype == "bool":
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("true", "1", "yes", "on"):
                return True
            if s in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if ftype == "int":
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(str(raw).replace("_", "")) if isinstance(raw, str) else int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "str":
            return str(raw).strip()
        if ftype.startswith("tuple"):
            elem = int if "int" in ftype else float
            if isinstance(raw, str):
                items = [x for x in (p.strip() for p in raw.split(",")) if x]
            else:
                items = list(raw) if isinstance(raw, (list, tuple)) else [raw]
            return tuple(elem(x) for x in items)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {ftype}") from None
    raise ConfigError(f"{key}: unsupported field type {ftype}")


def apply_overrides(cfg: SystemConfig, changes: dict[str, Any], parse_strings: bool = True) -> SystemConfig:
    top, train, ev = {}, {}, {}
    for key, raw in changes.items():
        if key not in _OWNERS:
            raise ConfigError(f"unknown config key {key!r}")
        sub, f = _OWNERS[key]
        value = _coerce(key, str(f.type), raw, parse_strings)
        {None: top, "train": train, "eval": ev}[sub][key] = value
    return dataclasses.replace(
        cfg,
        train=dataclasses.replace(cfg.train, **train),
        eval=dataclasses.replace(cfg.eval, **ev),
        **top,
    )


def validate(cfg: SystemConfig) -> SystemConfig:
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg}")

    for key in ("n_tx", "n_rx", "n_cb", "t_steps", "n_paths", "n_fb", "param_budget"):
        need(getattr(cfg, key) >= 1, key, "must be >= 1")
    need(cfg.hidden_size >= 0, "hidden_size", "must be >= 0")
    need(cfg.variant in VARIANTS, "variant", f"must be one of {VARIANTS}")
    need(cfg.scheme in SCHEMES, "scheme", f"must be one of {SCHEMES}")
    need(all(t >= 1 for t in cfg.sweep_t_values), "sweep_t_values", "entries must be >= 1")
    tr, ev = cfg.train, cfg.eval
    need(tr.batch_size >= 1, "batch_size", "must be >= 1")
    need(tr.iterations >= 0, "iterations", "must be >= 0")
    need(tr.learning_rate > 0, "learning_rate", "must be > 0")
    need(0 <= tr.beta1 < 1, "beta1", "must lie in [0, 1)")
    need(0 <= tr.beta2 < 1, "beta2", "must lie in [0, 1)")
    need(tr.adam_eps > 0, "adam_eps", "must be > 0")
    need(tr.grad_clip > 0, "grad_clip", "must be > 0")
    need(tr.log_interval >= 1, "log_interval", "must be >= 1")
    need(tr.checkpoint_interval >= 0, "checkpoint_interval", "must be >= 0")
    need(tr.norm_power in (1, 2), "norm_power", "must be 1 or 2")
    need(tr.aux_weight >= 0, "aux_weight", "must be >= 0")
    need(ev.eval_samples >= 1, "eval_samples", "must be >= 1")
    need(len(ev.test_snr_db) >= 1, "test_snr_db", "needs at least one value")
    need(ev.gain_db_mode in GAIN_DB_MODES, "gain_db_mode", f"must be one of {GAIN_DB_MODES}")
    need(ev.eval_batch >= 1, "eval_batch", "must be >= 1")
    return cfg


def parse_config_text(text: str, source: str = "<string>") -> SystemConfig:
    changes: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if key not in _OWNERS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in changes:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        changes[key] = value
    try:
        cfg = apply_overrides(SystemConfig(), changes)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return validate(cfg)


def parse_config(path) -> SystemConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def format_config(cfg: SystemConfig) -> str:
    lines = []
    for key, value in cfg.to_flat().items():
        if isinstance(value, list):
            value = ", ".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def derive_rng(seed: int, *labels) -> np.random.Generator:
    """Independent generator for a labelled purpose (``"train", "channel", 12``...)."""
    key = tuple(zlib.crc32(str(lab).encode()) for lab in labels)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))
