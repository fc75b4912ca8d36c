"""Training drivers: dense baseline, static sparse, and dynamic sparse.

All three share one loop. Weights are stored dense with exact zeros at
inactive positions and the forward pass applies no mask multiply, so a single
backward pass yields gradients over every position, active or not. The mask
is enforced after each optimizer step by zeroing weights and optimizer
moments at inactive positions; a position grown later therefore starts from
zero weight and zero moments automatically.

Dynamic methods run an exploration every `explore_every` iterations:
magnitude pruning to keep ceil((1 - p) * active) weights per layer, then
regrowth of exactly the pruned count, either at the largest-|gradient|
inactive positions (gradient growth, recomputed on the current batch after
the update) or uniformly at random.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping

import numpy as np

from .diffusion import NoiseSchedule, diffusion_loss, linear_schedule
from .errors import ConfigError
from .models import ParamRegistry, build_denoiser
from .rng import STREAM_INIT, STREAM_MASK, STREAM_TRAIN, Rng
from .tensor import Tensor
from .topology import (
    KIND_CONV,
    SparsityMask,
    TopologyPlan,
    allocate_er,
    allocate_erk,
    grow_gradient,
    grow_random,
    sample_mask,
    top_mag_prune,
)

if TYPE_CHECKING:
    from .config import ExperimentConfig

DYNAMIC_METHODS = ("rigl", "magran")
METHODS = ("dense", "static") + DYNAMIC_METHODS


@dataclass
class OptimizerState:
    """Decoupled weight-decay Adam state over all registered parameters."""

    lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, registry: ParamRegistry, lr: float, weight_decay: float, **kw) -> "OptimizerState":
        state = cls(lr=lr, weight_decay=weight_decay, **kw)
        for name, p in registry.named_params():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


@dataclass(frozen=True)
class ExplorationSchedule:
    """When and how aggressively the topology is rewired."""

    every: int
    prune_ratio: float
    growth: str  # "gradient" or "random"
    unit: str = "iterations"

    def __post_init__(self):
        if self.every < 1:
            raise ConfigError(f"exploration interval must be >= 1, got {self.every}")
        if not 0.0 <= self.prune_ratio < 1.0:
            raise ConfigError(f"prune ratio must be in [0, 1), got {self.prune_ratio}")
        if self.growth not in ("gradient", "random"):
            raise ConfigError(f"unknown growth rule {self.growth!r}")
        if self.unit != "iterations":
            raise ConfigError("exploration schedule is defined over iterations")

    def is_due(self, step: int) -> bool:
        return step % self.every == 0


@dataclass
class ExplorationEvent:
    step: int
    pruned: dict[str, int]
    grown: dict[str, int]


@dataclass
class TrainResult:
    model: object
    registry: ParamRegistry
    mask: SparsityMask | None
    opt: OptimizerState
    plan: TopologyPlan | None
    losses: list[tuple[int, float]]
    events: list[ExplorationEvent]


def collect_grads(registry: ParamRegistry) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    for name, p in registry.named_params():
        if p.grad is None:
            raise ValueError(f"no gradient accumulated for {name}")
        grads[name] = p.grad
    return grads


def adamw_step(
    registry: ParamRegistry,
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    mask: SparsityMask | None = None,
) -> None:
    """One AdamW update in place, then mask enforcement.

    After the step, inactive positions hold exactly zero weight and zero
    moments regardless of their gradients.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in registry.named_params():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * ((m / bc1) / (np.sqrt(v / bc2) + state.eps) + state.weight_decay * p.data)
    if mask is not None:
        enforce_mask(registry, state, mask)


def enforce_mask(registry: ParamRegistry, state: OptimizerState, mask: SparsityMask) -> None:
    for e in registry.entries:
        if not e.maskable:
            continue
        inactive = ~mask.bits[e.layer_id]
        e.weight.data[inactive] = 0.0
        state.m[f"{e.layer_id}.weight"][inactive] = 0.0
        state.v[f"{e.layer_id}.weight"][inactive] = 0.0


def plan_topology(registry: ParamRegistry, sparsity: float) -> TopologyPlan:
    """ER for all-dense stacks, ERK as soon as conv kernels are present."""
    geoms = registry.maskable_geoms()
    alloc = allocate_erk if any(g.kind == KIND_CONV for g in geoms) else allocate_er
    return alloc(geoms, sparsity)


def _dense_grads(model, registry: ParamRegistry, x0: Tensor, t, eps: Tensor, schedule: NoiseSchedule) -> dict[str, np.ndarray]:
    """Gradients over all weight positions at the current parameters."""
    registry.zero_grad()
    diffusion_loss(model, x0, t, eps, schedule).backward()
    out = {e.layer_id: e.weight.grad.copy() for e in registry.entries if e.maskable}
    registry.zero_grad()
    return out


def _train(
    config: "ExperimentConfig",
    data: np.ndarray,
    rng: Rng,
    method: str,
    *,
    model=None,
    opt: OptimizerState | None = None,
    mask: SparsityMask | None = None,
    start_step: int = 0,
) -> TrainResult:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    data = np.asarray(data, dtype=np.float64)
    n = len(data)
    if n < 1:
        raise ValueError("training data is empty")

    schedule = linear_schedule(config.diffusion_steps, config.beta_start, config.beta_end)
    if model is None:
        model = build_denoiser(config.denoiser_spec(), rng.stream(STREAM_INIT))
    registry = model.registry
    if opt is None:
        opt = OptimizerState.init(
            registry,
            lr=config.lr,
            weight_decay=config.weight_decay,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            eps=config.adam_eps,
        )

    plan: TopologyPlan | None = None
    mask_stream = rng.stream(STREAM_MASK)
    if method != "dense":
        plan = plan_topology(registry, config.sparsity)
        if mask is None and start_step == 0:
            mask = sample_mask(plan, registry.maskable_geoms(), mask_stream.at(0))
        if mask is None:
            raise ValueError("resuming a sparse run needs the checkpointed mask")
        enforce_mask(registry, opt, mask)

    exploration: ExplorationSchedule | None = None
    if method in DYNAMIC_METHODS:
        exploration = ExplorationSchedule(
            every=config.explore_every,
            prune_ratio=config.prune_ratio,
            growth="gradient" if method == "rigl" else "random",
        )

    train_stream = rng.stream(STREAM_TRAIN)
    batch = config.batch_size
    shape = data.shape[1:]
    losses: list[tuple[int, float]] = []
    events: list[ExplorationEvent] = []

    for step in range(start_step + 1, config.steps + 1):
        g = train_stream.at(step)
        x0 = Tensor(data[g.integers(0, n, batch)])
        t = g.integers(1, schedule.steps + 1, batch)
        eps = Tensor(g.normal((batch, *shape)))

        registry.zero_grad()
        loss = diffusion_loss(model, x0, t, eps, schedule)
        loss.backward()
        adamw_step(registry, collect_grads(registry), opt, mask)

        if exploration is not None and exploration.is_due(step):
            before = mask.active_counts()
            pruned = top_mag_prune(registry.maskable_weights(), mask, exploration.prune_ratio)
            counts = {lid: before[lid] - a for lid, a in pruned.active_counts().items()}
            if exploration.growth == "gradient":
                mask = grow_gradient(_dense_grads(model, registry, x0, t, eps, schedule), pruned, counts)
            else:
                mask = grow_random(pruned, counts, mask_stream.at(step))
            enforce_mask(registry, opt, mask)
            events.append(ExplorationEvent(step=step, pruned=dict(counts), grown=dict(counts)))

        if step == 1 or step % config.log_every == 0 or step == config.steps:
            losses.append((step, loss.item()))

    return TrainResult(
        model=model, registry=registry, mask=mask, opt=opt, plan=plan, losses=losses, events=events
    )


def train_dense(config: "ExperimentConfig", data: np.ndarray, rng: Rng, **kw) -> TrainResult:
    """Dense baseline: no mask machinery anywhere in the loop."""
    return _train(config, data, rng, "dense", **kw)


def train_static(config: "ExperimentConfig", data: np.ndarray, rng: Rng, **kw) -> TrainResult:
    """Fixed random topology sampled once at step 0."""
    return _train(config, data, rng, "static", **kw)


def train_dynamic(config: "ExperimentConfig", data: np.ndarray, rng: Rng, **kw) -> TrainResult:
    """Prune-and-regrow training; config.method picks the growth rule."""
    if config.method not in DYNAMIC_METHODS:
        raise ConfigError(f"dynamic training needs method in {DYNAMIC_METHODS}, got {config.method!r}")
    return _train(config, data, rng, config.method, **kw)


def train(config: "ExperimentConfig", data: np.ndarray, rng: Rng, **kw) -> TrainResult:
    """Dispatch on config.method."""
    if config.method == "dense":
        return train_dense(config, data, rng, **kw)
    if config.method == "static":
        return train_static(config, data, rng, **kw)
    return train_dynamic(config, data, rng, **kw)
