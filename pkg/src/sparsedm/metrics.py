"""Compute-cost accounting and desk-scale sample-quality metrics.

FLOPs convention: one active weight contributes one multiply per output
position, counted as 2 FLOPs (multiply + add); a backward pass costs twice a
forward; activation, bias, and normalization work is ignored. Under this
convention the sparse/dense forward ratio is exactly the parameter-weighted
mean layer density.

Quality metrics operate on raw flattened sample coordinates: the Frechet
distance between Gaussian fits of the two sets, and an unbiased polynomial
kernel MMD^2 (block-averaged). Reports name the feature space so downstream
readers are not misled into comparing against learned-feature scores.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ShapeError
from .topology import LayerGeom, SparsityMask
from .training import ExplorationSchedule


@dataclass(frozen=True)
class FlopsReport:
    dense_forward_flops: float
    sparse_forward_flops: float
    train_flops_total: float
    train_flops_dense_baseline: float
    test_flops_per_sample: float
    test_flops_per_sample_dense: float
    exploration_overhead_flops: float
    train_ratio: float
    test_ratio: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class QualityReport:
    frechet: float
    kid: float
    n_samples: int
    n_reference: int
    covariance_jitter: bool
    kid_block_size: int
    feature_space: str = "raw-coordinates"

    def to_dict(self) -> dict:
        return asdict(self)


def layer_flops(geom: LayerGeom, density: float) -> float:
    """2 * params * output positions * density."""
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must be in (0, 1], got {density}")
    return 2.0 * geom.param_count * geom.out_positions * density


def mask_densities(geoms: Sequence[LayerGeom], mask: SparsityMask | None) -> dict[str, float]:
    if mask is None:
        return {g.layer_id: 1.0 for g in geoms}
    return {g.layer_id: mask.active_count(g.layer_id) / g.param_count for g in geoms}


def forward_flops(geoms: Sequence[LayerGeom], densities: Mapping[str, float] | None = None) -> float:
    total = 0.0
    for g in geoms:
        d = 1.0 if densities is None else densities[g.layer_id]
        if d > 0.0:
            total += layer_flops(g, d)
    return total


def train_flops(
    geoms: Sequence[LayerGeom],
    mask: SparsityMask | None,
    steps: int,
    exploration: ExplorationSchedule | None = None,
    ddim_steps: int = 1,
) -> FlopsReport:
    """Cost of a training run plus per-sample inference cost, against the dense baseline.

    Each step costs one sparse forward plus two sparse forwards' worth of
    backward. Gradient-growth exploration adds one dense backward (two dense
    forwards) at every exploration step.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    dense_fwd = forward_flops(geoms, None)
    sparse_fwd = forward_flops(geoms, mask_densities(geoms, mask))
    overhead = 0.0
    if exploration is not None and exploration.growth == "gradient" and steps > 0:
        overhead = (steps // exploration.every) * 2.0 * dense_fwd
    total = steps * 3.0 * sparse_fwd + overhead
    dense_total = steps * 3.0 * dense_fwd
    return FlopsReport(
        dense_forward_flops=dense_fwd,
        sparse_forward_flops=sparse_fwd,
        train_flops_total=total,
        train_flops_dense_baseline=dense_total,
        test_flops_per_sample=ddim_steps * sparse_fwd,
        test_flops_per_sample_dense=ddim_steps * dense_fwd,
        exploration_overhead_flops=overhead,
        train_ratio=(total / dense_total) if dense_total > 0 else 1.0,
        test_ratio=sparse_fwd / dense_fwd,
    )


def _flatten(samples: np.ndarray) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim < 2:
        raise ShapeError(f"need a batch of samples, got shape {x.shape}")
    return x.reshape(len(x), -1)


def _psd_sqrt(c: np.ndarray) -> np.ndarray:
    w, vecs = np.linalg.eigh(c)
    w = np.clip(w, 0.0, None)
    return (vecs * np.sqrt(w)) @ vecs.T


def _frechet(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    a, b = _flatten(a), _flatten(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    d = a.shape[1]
    if len(a) < d + 1 or len(b) < d + 1:
        raise ValueError(f"need at least d+1 = {d + 1} samples per set, got {len(a)} and {len(b)}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False, ddof=1))
    jittered = False
    for cov in (cov_a, cov_b):
        w = np.linalg.eigvalsh(cov)
        if w.min() < 1e-12 * max(w.max(), 1.0):
            jittered = True
    if jittered:
        eye = 1e-9 * np.eye(d)
        cov_a = cov_a + eye
        cov_b = cov_b + eye
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    inner = (inner + inner.T) / 2.0
    cross = np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)))
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    return max(value, 0.0), jittered


def frechet_distance(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of the two sample sets."""
    return _frechet(samples_a, samples_b)[0]


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def _mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    m, n = len(x), len(y)
    kxx = _poly_kernel(x, x)
    kyy = _poly_kernel(y, y)
    kxy = _poly_kernel(x, y)
    t_xx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    t_yy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(t_xx + t_yy - 2.0 * kxy.mean())


def kid_blocks(samples_a: np.ndarray, samples_b: np.ndarray, block_size: int = 1000) -> np.ndarray:
    """Unbiased MMD^2 per deterministic block; KID is their mean."""
    a, b = _flatten(samples_a), _flatten(samples_b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if block_size < 2:
        raise ValueError(f"block size must be >= 2, got {block_size}")
    n = min(len(a), len(b))
    if n < 2:
        raise ValueError("each set needs at least 2 samples")
    n_blocks = max(1, n // block_size)
    size = min(block_size, n)
    vals = []
    for i in range(n_blocks):
        sl = slice(i * size, (i + 1) * size)
        vals.append(_mmd2_unbiased(a[sl], b[sl]))
    return np.asarray(vals)


def kid_mmd(samples_a: np.ndarray, samples_b: np.ndarray, block_size: int = 1000) -> float:
    """Block-averaged unbiased polynomial-kernel MMD^2."""
    return float(kid_blocks(samples_a, samples_b, block_size).mean())


def quality_report(
    samples: np.ndarray, reference: np.ndarray, kid_block_size: int = 1000
) -> QualityReport:
    fd, jittered = _frechet(samples, reference)
    kid = kid_mmd(samples, reference, kid_block_size)
    return QualityReport(
        frechet=fd,
        kid=kid,
        n_samples=len(samples),
        n_reference=len(reference),
        covariance_jitter=jittered,
        kid_block_size=kid_block_size,
    )
