"""Run configuration records, file loading, and dotted-key overrides."""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as _toml


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_vars: int = 0  # 0 -> taken from the dataset
    lag: int = 1
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_width: int = 0  # 0 -> 4 * d_model
    dropout_rate: float = 0.1
    encoder_dropout: float = 0.1
    id_init_std: float = 1.0
    head_init: str = "zeros"
    diag_force: float = 100.0
    mask_eps: float = 1e-6
    objective: str = "mse"
    layerwise_masks: bool = False
    decoupled_heads: bool = False
    residual_target: bool = False
    ln_eps: float = 1e-5

    @property
    def ffn_dim(self) -> int:
        return self.ffn_width or 4 * self.d_model

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def validate(self) -> "ModelConfig":
        if self.n_vars < 2:
            raise ConfigError(f"n_vars must be >= 2, got {self.n_vars}")
        if self.lag < 1:
            raise ConfigError(f"lag must be >= 1, got {self.lag}")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.objective not in ("mse", "nll"):
            raise ConfigError(f"objective must be 'mse' or 'nll', got {self.objective!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if not 0.0 <= self.encoder_dropout < 1.0:
            raise ConfigError("encoder_dropout must be in [0, 1)")
        if self.id_init_std < 0:
            raise ConfigError("id_init_std must be >= 0")
        if self.head_init not in ("zeros", "xavier"):
            raise ConfigError("head_init must be 'zeros' or 'xavier'")
        if self.mask_eps <= 0:
            raise ConfigError("mask_eps must be positive")
        return self


@dataclass
class OptimizerConfig:
    name: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    sparsity: float = 0.01  # lambda

    def validate(self) -> "OptimizerConfig":
        if self.name not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.name!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.sparsity < 0:
            raise ConfigError("sparsity (lambda) must be >= 0")
        return self


@dataclass
class DataConfig:
    path: str = ""
    truth_path: str = ""
    standardize: bool = True
    test_fraction: float = 0.0

    def validate(self) -> "DataConfig":
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in [0, 1)")
        return self


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.optimizer.validate()
        self.data.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        d = dict(d)
        sections = {"model": ModelConfig, "optimizer": OptimizerConfig, "data": DataConfig}
        kwargs: dict[str, Any] = {}
        for key, value in d.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"[{key}] must be a table")
                kwargs[key] = _build(sections[key], value, key)
            elif key == "seed":
                kwargs["seed"] = int(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**kwargs)

    def replace(self, **overrides: Any) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"model.d_model": 32})``."""
        cfg = RunConfig.from_dict(self.to_dict())
        for key, value in overrides.items():
            apply_override(cfg, key, value)
        return cfg


def _build(cls, values: dict[str, Any], section: str):
    known = {f.name: f for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
    return cls(**{k: _coerce(known[k], v) for k, v in values.items()})


def _coerce(f: dataclasses.Field, value: Any) -> Any:
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if kind == "bool":
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ConfigError(f"cannot read {value!r} as a boolean for {f.name}")
        return bool(value)
    if kind == "int":
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{f.name} must be an integer, got {value}")
        return int(float(value)) if isinstance(value, str) else int(value)
    if kind == "float":
        return float(value)
    return str(value)


def apply_override(cfg: RunConfig, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    if parts == ["seed"]:
        cfg.seed = int(value)
        return
    if len(parts) != 2 or parts[0] not in ("model", "optimizer", "data"):
        raise ConfigError(f"override key must look like section.key, got {dotted!r}")
    section = getattr(cfg, parts[0])
    known = {f.name: f for f in fields(section)}
    if parts[1] not in known:
        raise ConfigError(f"unknown key {dotted}")
    setattr(section, parts[1], _coerce(known[parts[1]], value))


def parse_override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"override must be key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    if path:
        path = Path(path)
        raw = path.read_bytes()
        if path.suffix.lower() == ".json":
            d = json.loads(raw)
        else:
            d = _toml.loads(raw.decode())
        cfg = RunConfig.from_dict(d)
    else:
        cfg = RunConfig()
    for item in overrides or []:
        apply_override(cfg, *parse_override(item))
    return cfg


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one subsystem (init, dropout, shuffle, ...)."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode())])


# Presets for the synthetic benchmarks (learning rate, batch, look-back, width, lambda, epochs).
PRESETS: dict[str, dict[str, Any]] = {
    "var_t500": dict(learning_rate=1e-3, batch_size=32, lag=3, d_model=64, sparsity=0.01, epochs=10),
    "var_t1000": dict(learning_rate=1e-3, batch_size=32, lag=3, d_model=64, sparsity=0.01, epochs=5),
    "lorenz_f10_t250": dict(learning_rate=1e-2, batch_size=32, lag=1, d_model=32, sparsity=0.02, epochs=200),
    "lorenz_f10_t500": dict(learning_rate=1e-3, batch_size=32, lag=1, d_model=64, sparsity=0.02, epochs=150),
    "lorenz_f40_t250": dict(learning_rate=1e-2, batch_size=32, lag=1, d_model=64, sparsity=0.02, epochs=150),
    "lorenz_f40_t500": dict(learning_rate=1e-3, batch_size=32, lag=1, d_model=64, sparsity=0.02, epochs=150),
    "mixed_50": dict(learning_rate=1e-3, batch_size=32, lag=3, d_model=32, sparsity=0.01, epochs=35),
    "mixed_75": dict(learning_rate=1e-4, batch_size=64, lag=3, d_model=16, sparsity=0.01, epochs=5),
    "mixed_100": dict(learning_rate=1e-3, batch_size=16, lag=3, d_model=16, sparsity=0.001, epochs=5),
}


def preset(name: str, objective: str = "mse", seed: int = 0, **model_kw: Any) -> RunConfig:
    p = PRESETS[name]
    model = ModelConfig(lag=p["lag"], d_model=p["d_model"], objective=objective, **model_kw)
    opt = OptimizerConfig(learning_rate=p["learning_rate"], batch_size=p["batch_size"],
                          epochs=p["epochs"], sparsity=p["sparsity"])
    return RunConfig(model=model, optimizer=opt, seed=seed)
