"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass
class Config:
    # data
    corpus: str = ""
    task: str = "de_novo"  # de_novo | scaffold
    max_len: int = 30
    variants: int = 1
    max_heavy_atoms: int = 9
    run_dir: str = "runs/default"
    # algorithm loop bounds
    f_epochs: int = 100
    d_epochs: int = 10
    epochs: int = 100
    f_steps: int = 1
    d_steps: int = 1
    # optimisation
    lr_pretrain: float = 1e-5
    lr_disc: float = 0.0  # 0 selects 1e-4 (gan) or 1e-5 (wgan)
    lr_adv: float = 2e-5
    batch_size: int = 64
    dropout: float = 0.1
    mode: str = "gan"  # gan | wgan
    clip_c: float = 0.01
    # generator
    gen_d_model: int = 128
    gen_layers: int = 4
    gen_heads: int = 4
    gen_ff: int = 100
    # discriminator
    disc_d_model: int = 128
    disc_layers: int = 4
    disc_heads: int = 4
    disc_ff: int = 200
    # reward
    lam: float = 0.5
    K: int = 8
    baseline_mode: str = "batch_mean"
    baseline_value: float = 0.0
    scorer: str = "validity"
    external_scores: str = ""
    # sampling / evaluation
    n_samples: int = 10000
    temperature: float = 1.0
    top_k: int = 1000
    # runtime
    seed: int = 0
    workers: int = 1
    divergence_guard: bool = True
    log_level: str = "INFO"

    def __post_init__(self):
        self.check()

    def check(self):
        for name in ("f_epochs", "d_epochs", "epochs", "f_steps", "d_steps", "K", "batch_size", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.mode not in ("gan", "wgan"):
            raise ConfigError(f"mode must be gan or wgan, not {self.mode!r}")
        if self.task not in ("de_novo", "scaffold"):
            raise ConfigError(f"task must be de_novo or scaffold, not {self.task!r}")
        if self.mode == "wgan" and self.clip_c <= 0:
            raise ConfigError("clip_c must be > 0 in wgan mode")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.baseline_mode not in ("batch_mean", "constant"):
            raise ConfigError(f"unknown baseline_mode {self.baseline_mode!r}")

    @property
    def disc_lr(self) -> float:
        if self.lr_disc > 0:
            return self.lr_disc
        return 1e-4 if self.mode == "gan" else 1e-5


_HINTS = typing.get_type_hints(Config)


def _convert(name: str, text: str, line: int | None):
    kind = _HINTS[name]
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}", line) from None


def parse_config(text: str, base: Config | None = None) -> Config:
    values = dataclasses.asdict(base) if base is not None else {}
    known = {f.name for f in fields(Config)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", lineno)
        values[key] = _convert(key, value, lineno)
    try:
        return Config(**values)
    except ConfigError:
        raise
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path, base: Config | None = None) -> Config:
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


def override(cfg: Config, **changes) -> Config:
    values = dataclasses.asdict(cfg)
    for key, value in changes.items():
        if key not in values:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, value, None) if isinstance(value, str) else value
    return Config(**values)


def dump_config(cfg: Config) -> str:
    lines = []
    for f in fields(Config):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def default_run_dir(cfg: Config) -> str:
    return os.environ.get("RLMG_RUN_DIR") or cfg.run_dir
