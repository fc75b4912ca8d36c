"""Denoiser architectures and the parameter registry the trainer works on.

Two toy families: an MLP over flat feature vectors (timestep embedding
concatenated to the input) and a small stride-1 conv stack over single-scale
image grids (timestep embedding projected and added channel-wise). Every
weight matrix and kernel is registered with its geometry and is maskable;
biases and nothing else are never masked.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .rng import Rng
from .tensor import Tensor
from .topology import KIND_CONV, KIND_DENSE, LayerGeom, SparsityMask


@dataclass(frozen=True)
class DenoiserSpec:
    """Architecture description, sufficient to rebuild a model bit-for-bit."""

    kind: str = "mlp"
    data_dim: int = 2
    widths: tuple[int, ...] = (128, 128, 128)
    channels: int = 1
    hidden_channels: tuple[int, ...] = (8, 8)
    kernel_size: int = 3
    image_size: int = 8
    time_emb_dim: int = 16
    activation: str = "silu"

    def __post_init__(self):
        if self.kind not in ("mlp", "conv"):
            raise ValueError(f"unknown denoiser kind {self.kind!r}")
        if self.activation not in ("silu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.time_emb_dim < 2 or self.time_emb_dim % 2 != 0:
            raise ValueError("time_emb_dim must be an even number >= 2")
        if self.kind == "mlp":
            if self.data_dim < 1 or not self.widths:
                raise ValueError("mlp needs data_dim >= 1 and at least one hidden width")
        else:
            if self.channels < 1 or self.image_size < 1 or not self.hidden_channels:
                raise ValueError("conv needs channels, image_size and hidden channels")
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ValueError("kernel_size must be odd so padding preserves the grid")

    @property
    def data_shape(self) -> tuple[int, ...]:
        if self.kind == "mlp":
            return (self.data_dim,)
        return (self.channels, self.image_size, self.image_size)


@dataclass
class ParamEntry:
    layer_id: str
    weight: Tensor
    bias: Tensor | None
    geom: LayerGeom
    maskable: bool


class ParamRegistry:
    """Ordered collection of named parameter groups."""

    def __init__(self):
        self.entries: list[ParamEntry] = []
        self._by_id: dict[str, ParamEntry] = {}

    def add(self, entry: ParamEntry) -> None:
        if entry.layer_id in self._by_id:
            raise ValueError(f"duplicate layer id {entry.layer_id!r}")
        self.entries.append(entry)
        self._by_id[entry.layer_id] = entry

    def __getitem__(self, layer_id: str) -> ParamEntry:
        return self._by_id[layer_id]

    def __contains__(self, layer_id: str) -> bool:
        return layer_id in self._by_id

    def named_params(self) -> Iterator[tuple[str, Tensor]]:
        """All trainable tensors as ("<layer>.weight" / "<layer>.bias", tensor)."""
        for e in self.entries:
            yield f"{e.layer_id}.weight", e.weight
            if e.bias is not None:
                yield f"{e.layer_id}.bias", e.bias

    def maskable_geoms(self) -> list[LayerGeom]:
        return [e.geom for e in self.entries if e.maskable]

    def maskable_weights(self) -> dict[str, np.ndarray]:
        return {e.layer_id: e.weight.data for e in self.entries if e.maskable}

    def zero_grad(self) -> None:
        for _, p in self.named_params():
            p.grad = None


def masked_param_count(registry: ParamRegistry, mask: SparsityMask | None) -> tuple[int, int]:
    """(total, active) parameter counts; never-masked params count in both."""
    total = 0
    active = 0
    for e in registry.entries:
        n = e.weight.data.size
        total += n
        if e.maskable and mask is not None:
            active += mask.active_count(e.layer_id)
        else:
            active += n
        if e.bias is not None:
            total += e.bias.data.size
            active += e.bias.data.size
    return total, active


def sinusoidal_embed(t: int, dim: int) -> Tensor:
    """Interleaved sin/cos embedding of a single timestep."""
    return Tensor(_embed_rows(np.asarray([t]), dim)[0])


def _embed_rows(ts: np.ndarray, dim: int) -> np.ndarray:
    if dim < 2 or dim % 2 != 0:
        raise ShapeError(f"embedding dim must be even and >= 2, got {dim}")
    half = dim // 2
    freqs = 10000.0 ** (-np.arange(half, dtype=np.float64) / half)
    angles = np.asarray(ts, dtype=np.float64)[:, None] * freqs[None, :]
    out = np.empty((len(ts), dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def _broadcast_t(t, batch: int) -> np.ndarray:
    ts = np.asarray(t)
    if ts.ndim == 0:
        return np.full(batch, int(ts))
    if ts.shape != (batch,):
        raise ShapeError(f"timestep batch {ts.shape} does not match data batch {batch}")
    return ts


def _kaiming_uniform(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(shape, -limit, limit)


def _activation(name: str):
    return T.silu if name == "silu" else T.relu


class MlpDenoiser:
    """Fully-connected noise predictor over flat features.

    Input is the noisy sample concatenated with the timestep embedding; the
    output matches the data dimension.
    """

    def __init__(self, spec: DenoiserSpec, rng: Rng):
        if spec.kind != "mlp":
            raise ValueError("MlpDenoiser needs an mlp spec")
        self.spec = spec
        self.registry = ParamRegistry()
        self._act = _activation(spec.activation)
        dims = [spec.data_dim + spec.time_emb_dim, *spec.widths, spec.data_dim]
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:]), start=1):
            self.registry.add(
                ParamEntry(
                    layer_id=f"fc{i}",
                    weight=Tensor(_kaiming_uniform(rng, (fan_in, fan_out), fan_in), requires_grad=True),
                    bias=Tensor(np.zeros(fan_out), requires_grad=True),
                    geom=LayerGeom(f"fc{i}", KIND_DENSE, fan_in=fan_in, fan_out=fan_out),
                    maskable=True,
                )
            )

    def __call__(self, x: Tensor, t) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.spec.data_dim:
            raise ShapeError(f"expected [batch, {self.spec.data_dim}] input, got {x.shape}")
        ts = _broadcast_t(t, x.data.shape[0])
        h = T.concat([x, Tensor(_embed_rows(ts, self.spec.time_emb_dim))], axis=1)
        last = len(self.registry.entries) - 1
        for i, e in enumerate(self.registry.entries):
            h = T.add(T.matmul(h, e.weight), e.bias)
            if i < last:
                h = self._act(h)
        return h


class ConvDenoiser:
    """Stride-1 same-padding conv stack over a square grid.

    The timestep embedding passes through a learned per-block projection and
    is added channel-wise after every conv except the last.
    """

    def __init__(self, spec: DenoiserSpec, rng: Rng):
        if spec.kind != "conv":
            raise ValueError("ConvDenoiser needs a conv spec")
        self.spec = spec
        self.registry = ParamRegistry()
        self._act = _activation(spec.activation)
        k = spec.kernel_size
        self._pad = k // 2
        positions = spec.image_size * spec.image_size
        chans = [spec.channels, *spec.hidden_channels, spec.channels]
        self._n_convs = len(chans) - 1
        for i, (c_in, c_out) in enumerate(zip(chans[:-1], chans[1:]), start=1):
            self.registry.add(
                ParamEntry(
                    layer_id=f"conv{i}",
                    weight=Tensor(
                        _kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k), requires_grad=True
                    ),
                    bias=Tensor(np.zeros(c_out), requires_grad=True),
                    geom=LayerGeom(
                        f"conv{i}",
                        KIND_CONV,
                        fan_in=c_in,
                        fan_out=c_out,
                        kernel_h=k,
                        kernel_w=k,
                        out_positions=positions,
                    ),
                    maskable=True,
                )
            )
            if i < self._n_convs:
                self.registry.add(
                    ParamEntry(
                        layer_id=f"time{i}",
                        weight=Tensor(
                            _kaiming_uniform(rng, (spec.time_emb_dim, c_out), spec.time_emb_dim),
                            requires_grad=True,
                        ),
                        bias=Tensor(np.zeros(c_out), requires_grad=True),
                        geom=LayerGeom(f"time{i}", KIND_DENSE, fan_in=spec.time_emb_dim, fan_out=c_out),
                        maskable=True,
                    )
                )

    def __call__(self, x: Tensor, t) -> Tensor:
        expected = (self.spec.channels, self.spec.image_size, self.spec.image_size)
        if x.data.ndim != 4 or x.data.shape[1:] != expected:
            raise ShapeError(f"expected [batch, {expected}] input, got {x.shape}")
        batch = x.data.shape[0]
        ts = _broadcast_t(t, batch)
        temb = Tensor(_embed_rows(ts, self.spec.time_emb_dim))
        h = x
        for i in range(1, self._n_convs + 1):
            conv = self.registry[f"conv{i}"]
            h = T.conv2d(h, conv.weight, stride=1, padding=self._pad)
            h = T.add(h, T.reshape(conv.bias, (1, -1, 1, 1)))
            if i < self._n_convs:
                proj = self.registry[f"time{i}"]
                shift = T.add(T.matmul(temb, proj.weight), proj.bias)
                h = T.add(h, T.reshape(shift, (batch, -1, 1, 1)))
                h = self._act(h)
        return h


def build_denoiser(spec: DenoiserSpec, rng: Rng):
    if spec.kind == "mlp":
        return MlpDenoiser(spec, rng)
    return ConvDenoiser(spec, rng)
