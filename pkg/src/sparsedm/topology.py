"""Layer-wise sparse topology: allocation, mask sampling, prune and grow.

Density allocation follows the Erdos-Renyi family: each layer gets a density
proportional to a geometry factor, uniformly scaled so the global budget of
active weights hits (1 - sparsity) * total. Layers whose scaled density would
exceed 1 are clamped dense one at a time and the remaining budget is
re-solved, so the global target is met exactly in expectation with every
density in (0, 1].

Masks are boolean arrays shaped like the weights they gate. Flat positions
(C-order ravel order) are the tie-break and indexing convention everywhere.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import CapacityError, ShapeError, SparsityError
from .rng import Rng

KIND_DENSE = "dense"
KIND_CONV = "conv"


@dataclass(frozen=True)
class LayerGeom:
    """Geometry of one maskable weight tensor.

    `out_positions` is the number of spatial output positions the weights are
    applied at (H' * W' for a conv layer, 1 for a dense matrix); it only
    matters for compute accounting.
    """

    layer_id: str
    kind: str
    fan_in: int
    fan_out: int
    kernel_h: int = 1
    kernel_w: int = 1
    out_positions: int = 1

    def __post_init__(self):
        if self.kind not in (KIND_DENSE, KIND_CONV):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if min(self.fan_in, self.fan_out, self.kernel_h, self.kernel_w, self.out_positions) < 1:
            raise ValueError(f"layer {self.layer_id}: all dimensions must be >= 1")
        if self.kind == KIND_DENSE and (self.kernel_h, self.kernel_w) != (1, 1):
            raise ValueError(f"layer {self.layer_id}: dense layers have no kernel extent")

    @property
    def param_count(self) -> int:
        return self.fan_out * self.fan_in * self.kernel_h * self.kernel_w


@dataclass(frozen=True)
class TopologyPlan:
    """Per-layer densities for a requested global sparsity."""

    sparsity: float
    densities: dict[str, float]

    def density(self, layer_id: str) -> float:
        return self.densities[layer_id]


class SparsityMask:
    """Per-layer boolean arrays over weight positions."""

    def __init__(self, bits: Mapping[str, np.ndarray]):
        self.bits: dict[str, np.ndarray] = {
            layer_id: np.asarray(b, dtype=bool) for layer_id, b in bits.items()
        }

    def active_count(self, layer_id: str) -> int:
        return int(self.bits[layer_id].sum())

    def active_counts(self) -> dict[str, int]:
        return {layer_id: int(b.sum()) for layer_id, b in self.bits.items()}

    def total_active(self) -> int:
        return sum(int(b.sum()) for b in self.bits.values())

    def total_positions(self) -> int:
        return sum(b.size for b in self.bits.values())

    def copy(self) -> "SparsityMask":
        return SparsityMask({layer_id: b.copy() for layer_id, b in self.bits.items()})

    def digest(self) -> str:
        """Stable hash of the topology (layer order sorted by id)."""
        h = hashlib.sha256()
        for layer_id in sorted(self.bits):
            h.update(layer_id.encode())
            h.update(np.packbits(self.bits[layer_id].ravel(), bitorder="little").tobytes())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparsityMask):
            return NotImplemented
        if set(self.bits) != set(other.bits):
            return False
        return all(np.array_equal(self.bits[k], other.bits[k]) for k in self.bits)


def _er_factor(geom: LayerGeom) -> float:
    return (geom.fan_in + geom.fan_out) / (geom.fan_in * geom.fan_out)


def _erk_factor(geom: LayerGeom) -> float:
    if geom.kind == KIND_DENSE:
        return _er_factor(geom)
    return (geom.fan_in + geom.fan_out + geom.kernel_h + geom.kernel_w) / (
        geom.fan_in * geom.fan_out * geom.kernel_h * geom.kernel_w
    )


def _allocate(layers: list[LayerGeom], sparsity: float, factors: list[float]) -> TopologyPlan:
    if not layers:
        raise ValueError("allocation needs at least one layer")
    ids = [g.layer_id for g in layers]
    if len(set(ids)) != len(ids):
        raise ValueError("layer ids must be unique")
    if not 0.0 <= sparsity < 1.0:
        raise SparsityError(f"sparsity must be in [0, 1), got {sparsity}")

    counts = [g.param_count for g in layers]
    budget = (1.0 - sparsity) * sum(counts)
    dense: set[int] = set()
    densities = [0.0] * len(layers)
    while True:
        free = [i for i in range(len(layers)) if i not in dense]
        if not free:
            break
        remaining = budget - sum(counts[i] for i in dense)
        divisor = sum(factors[i] * counts[i] for i in free)
        eps = remaining / divisor
        over = [i for i in free if eps * factors[i] > 1.0]
        if not over:
            for i in free:
                densities[i] = eps * factors[i]
            break
        # Clamp the single worst offender and re-solve with the rest.
        dense.add(max(over, key=lambda i: eps * factors[i]))
    for i in dense:
        densities[i] = 1.0
    return TopologyPlan(sparsity=float(sparsity), densities=dict(zip(ids, densities)))


def allocate_er(layers: Iterable[LayerGeom], sparsity: float) -> TopologyPlan:
    """Erdos-Renyi allocation: density_l proportional to (fan_in + fan_out) / (fan_in * fan_out)."""
    layers = list(layers)
    return _allocate(layers, sparsity, [_er_factor(g) for g in layers])


def allocate_erk(layers: Iterable[LayerGeom], sparsity: float) -> TopologyPlan:
    """Erdos-Renyi-Kernel allocation: conv layers fold kernel extent into the factor.

    Dense layers fall back to the plain ER factor, so mixed stacks are fine.
    """
    layers = list(layers)
    return _allocate(layers, sparsity, [_erk_factor(g) for g in layers])


def _weight_shape(geom: LayerGeom) -> tuple[int, ...]:
    if geom.kind == KIND_DENSE:
        return (geom.fan_in, geom.fan_out)
    return (geom.fan_out, geom.fan_in, geom.kernel_h, geom.kernel_w)


def sample_mask(plan: TopologyPlan, layers: Iterable[LayerGeom], rng: Rng) -> SparsityMask:
    """Draw a mask with exactly round(density * param_count) active weights per layer."""
    bits: dict[str, np.ndarray] = {}
    for geom in layers:
        density = plan.densities[geom.layer_id]
        n = geom.param_count
        count = int(round(density * n))
        flat = np.zeros(n, dtype=bool)
        if count == n:
            flat[:] = True
        elif count > 0:
            flat[rng.choice(n, count)] = True
        bits[geom.layer_id] = flat.reshape(_weight_shape(geom))
    return SparsityMask(bits)


def top_mag_prune(
    weights: Mapping[str, np.ndarray], mask: SparsityMask, prune_ratio: float
) -> SparsityMask:
    """Keep the ceil((1 - prune_ratio) * active) largest-magnitude active weights per layer.

    Ties are broken toward the lowest flat index.
    """
    if not 0.0 <= prune_ratio < 1.0:
        raise SparsityError(f"prune ratio must be in [0, 1), got {prune_ratio}")
    bits: dict[str, np.ndarray] = {}
    for layer_id, old in mask.bits.items():
        w = np.asarray(weights[layer_id], dtype=np.float64)
        if w.shape != old.shape:
            raise ShapeError(
                f"layer {layer_id}: weights {w.shape} do not match mask {old.shape}"
            )
        flat_old = old.ravel()
        active_idx = np.flatnonzero(flat_old)
        keep = math.ceil((1.0 - prune_ratio) * active_idx.size)
        order = np.argsort(-np.abs(w.ravel()[active_idx]), kind="stable")
        new_flat = np.zeros(old.size, dtype=bool)
        new_flat[active_idx[order[:keep]]] = True
        bits[layer_id] = new_flat.reshape(old.shape)
    return SparsityMask(bits)


def grow_gradient(
    grads: Mapping[str, np.ndarray], mask: SparsityMask, counts: Mapping[str, int]
) -> SparsityMask:
    """Activate the counts[l] largest-|gradient| inactive positions per layer.

    Ties are broken toward the lowest flat index.
    """
    bits: dict[str, np.ndarray] = {}
    for layer_id, old in mask.bits.items():
        k = int(counts.get(layer_id, 0))
        new_flat = old.ravel().copy()
        if k > 0:
            g = np.asarray(grads[layer_id], dtype=np.float64)
            if g.shape != old.shape:
                raise ShapeError(
                    f"layer {layer_id}: gradients {g.shape} do not match mask {old.shape}"
                )
            inactive_idx = np.flatnonzero(~new_flat)
            if k > inactive_idx.size:
                raise CapacityError(
                    f"layer {layer_id}: cannot grow {k} of {inactive_idx.size} inactive positions"
                )
            order = np.argsort(-np.abs(g.ravel()[inactive_idx]), kind="stable")
            new_flat[inactive_idx[order[:k]]] = True
        bits[layer_id] = new_flat.reshape(old.shape)
    return SparsityMask(bits)


def grow_random(mask: SparsityMask, counts: Mapping[str, int], rng: Rng) -> SparsityMask:
    """Activate counts[l] inactive positions per layer uniformly at random.

    Layers with a zero count draw nothing from the rng, so a zero-count call
    is a no-op on both the mask and the stream.
    """
    bits: dict[str, np.ndarray] = {}
    for layer_id, old in mask.bits.items():
        k = int(counts.get(layer_id, 0))
        new_flat = old.ravel().copy()
        if k > 0:
            inactive_idx = np.flatnonzero(~new_flat)
            if k > inactive_idx.size:
                raise CapacityError(
                    f"layer {layer_id}: cannot grow {k} of {inactive_idx.size} inactive positions"
                )
            new_flat[inactive_idx[rng.choice(inactive_idx.size, k)]] = True
        bits[layer_id] = new_flat.reshape(old.shape)
    return SparsityMask(bits)


def apply_mask(
    weights: Mapping[str, np.ndarray], mask: SparsityMask
) -> dict[str, np.ndarray]:
    """Zero the inactive positions; active positions pass through unchanged."""
    out: dict[str, np.ndarray] = {}
    for layer_id, bits in mask.bits.items():
        w = np.asarray(weights[layer_id], dtype=np.float64)
        if w.shape != bits.shape:
            raise ShapeError(
                f"layer {layer_id}: weights {w.shape} do not match mask {bits.shape}"
            )
        out[layer_id] = np.where(bits, w, 0.0)
    return out


def global_sparsity(mask: SparsityMask) -> float:
    """1 - (active positions / total positions) across all masked layers."""
    total = mask.total_positions()
    if total == 0:
        raise ValueError("mask has no positions")
    return 1.0 - mask.total_active() / total
