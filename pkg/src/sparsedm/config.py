"""Flat JSON experiment configuration.

Every field has a default, so `{}` is a valid config; every resolved value is
echoed into the run record, making runs self-describing. Unknown keys are
rejected by name rather than ignored, which catches typos like "sparsityy"
before they silently run a default experiment.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .datasets import DATASET_NAMES
from .errors import ConfigError
from .models import DenoiserSpec
from .training import METHODS

_POINT_DATASETS = ("gauss8", "swissroll", "checkerboard")


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "dense"
    sparsity: float = 0.0
    prune_ratio: float = 0.05
    explore_every: int = 250
    exploration_unit: str = "iterations"
    model: str = "mlp"
    widths: tuple[int, ...] = (128, 128, 128)
    hidden_channels: tuple[int, ...] = (8, 8)
    kernel_size: int = 3
    time_emb_dim: int = 16
    activation: str = "silu"
    diffusion_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    lr: float = 1e-3
    weight_decay: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 5000
    batch_size: int = 256
    seed: int = 0
    log_every: int = 100
    dataset: str = "gauss8"
    dataset_size: int = 8000
    ddim_steps: int = 50
    eta: float = 1.0
    sample_count: int = 4000
    kid_block_size: int = 1000

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["hidden_channels"] = list(self.hidden_channels)
        return d

    def denoiser_spec(self) -> DenoiserSpec:
        if self.model == "mlp":
            return DenoiserSpec(
                kind="mlp",
                data_dim=2,
                widths=self.widths,
                time_emb_dim=self.time_emb_dim,
                activation=self.activation,
            )
        return DenoiserSpec(
            kind="conv",
            channels=1,
            hidden_channels=self.hidden_channels,
            kernel_size=self.kernel_size,
            image_size=8,
            time_emb_dim=self.time_emb_dim,
            activation=self.activation,
        )


def _expect(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _as_int(key: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


def _as_float(key: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def _as_int_list(key: str, value) -> tuple[int, ...]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a non-empty list of integers, got {value!r}")
    return tuple(_as_int(key, v) for v in value)


_INT_KEYS = {
    "explore_every", "kernel_size", "diffusion_steps", "steps", "batch_size",
    "seed", "log_every", "dataset_size", "ddim_steps", "sample_count",
    "kid_block_size",
}
_FLOAT_KEYS = {
    "sparsity", "prune_ratio", "beta_start", "beta_end", "lr", "weight_decay",
    "adam_beta1", "adam_beta2", "adam_eps", "eta",
}
_STR_KEYS = {"method", "exploration_unit", "model", "activation", "dataset"}
_LIST_KEYS = {"widths", "hidden_channels"}
_NULLABLE = {"model", "time_emb_dim"}  # null means "derive a default"
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _LIST_KEYS | {"time_emb_dim"}


def resolve_config(raw: dict) -> ExperimentConfig:
    """Validate a flat dict and fill every default."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
    unknown = sorted(set(raw) - _ALL_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")

    values: dict = {}
    for key, value in raw.items():
        if value is None and key in _NULLABLE:
            continue
        if key in _INT_KEYS or key == "time_emb_dim":
            values[key] = _as_int(key, value)
        elif key in _FLOAT_KEYS:
            values[key] = _as_float(key, value)
        elif key in _LIST_KEYS:
            values[key] = _as_int_list(key, value)
        else:
            if not isinstance(value, str):
                raise ConfigError(f"{key} must be a string, got {value!r}")
            values[key] = value

    dataset = values.get("dataset", "gauss8")
    _expect(dataset in DATASET_NAMES, f"unknown dataset {dataset!r}")
    if "model" not in values:
        values["model"] = "conv" if dataset == "toy-images" else "mlp"
    if "time_emb_dim" not in values:
        values["time_emb_dim"] = 32 if values["model"] == "conv" else 16

    cfg = ExperimentConfig(**values)

    _expect(cfg.method in METHODS, f"method must be one of {METHODS}, got {cfg.method!r}")
    _expect(0.0 <= cfg.sparsity < 1.0, f"sparsity must be in [0, 1), got {cfg.sparsity}")
    _expect(0.0 <= cfg.prune_ratio < 1.0, f"prune_ratio must be in [0, 1), got {cfg.prune_ratio}")
    _expect(cfg.explore_every >= 1, f"explore_every must be >= 1, got {cfg.explore_every}")
    _expect(
        cfg.exploration_unit == "iterations",
        f"exploration_unit must be 'iterations', got {cfg.exploration_unit!r}",
    )
    _expect(cfg.model in ("mlp", "conv"), f"model must be 'mlp' or 'conv', got {cfg.model!r}")
    if cfg.model == "conv":
        _expect(cfg.dataset == "toy-images", "the conv model runs on the toy-images dataset")
    else:
        _expect(cfg.dataset in _POINT_DATASETS, "the mlp model runs on 2-D point datasets")
    _expect(cfg.activation in ("silu", "relu"), f"unknown activation {cfg.activation!r}")
    _expect(cfg.diffusion_steps >= 1, "diffusion_steps must be >= 1")
    _expect(
        0.0 < cfg.beta_start <= cfg.beta_end < 1.0,
        f"need 0 < beta_start <= beta_end < 1, got {cfg.beta_start}, {cfg.beta_end}",
    )
    _expect(cfg.lr > 0.0, "lr must be positive")
    _expect(cfg.weight_decay >= 0.0, "weight_decay must be >= 0")
    _expect(0.0 <= cfg.adam_beta1 < 1.0 and 0.0 <= cfg.adam_beta2 < 1.0, "adam betas must be in [0, 1)")
    _expect(cfg.adam_eps > 0.0, "adam_eps must be positive")
    _expect(cfg.steps >= 0, "steps must be >= 0")
    _expect(cfg.batch_size >= 1, "batch_size must be >= 1")
    _expect(cfg.seed >= 0, "seed must be >= 0")
    _expect(cfg.log_every >= 1, "log_every must be >= 1")
    _expect(cfg.dataset_size >= 2, "dataset_size must be >= 2")
    _expect(
        1 <= cfg.ddim_steps <= cfg.diffusion_steps,
        f"ddim_steps must be in [1, diffusion_steps], got {cfg.ddim_steps}",
    )
    _expect(cfg.eta >= 0.0, "eta must be >= 0")
    _expect(cfg.sample_count >= 2, "sample_count must be >= 2")
    _expect(cfg.kid_block_size >= 2, "kid_block_size must be >= 2")
    _expect(cfg.time_emb_dim >= 2 and cfg.time_emb_dim % 2 == 0, "time_emb_dim must be even and >= 2")
    _expect(cfg.kernel_size >= 1 and cfg.kernel_size % 2 == 1, "kernel_size must be odd and >= 1")
    for key in ("widths", "hidden_channels"):
        _expect(all(w >= 1 for w in getattr(cfg, key)), f"{key} entries must be >= 1")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return resolve_config(raw)
