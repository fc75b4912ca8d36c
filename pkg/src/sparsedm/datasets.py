"""Synthetic datasets: deterministic per seed, standardized for training.

Four builtins: three 2-D point distributions (gauss8, swissroll,
checkerboard) and one 8x8 single-channel image family (toy-images). Point
sets are standardized per coordinate; images by a global scalar mean/std.
Generated samples travel back through `destandardize` before metrics are
computed, so quality numbers live in the original data space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import Rng

DATASET_NAMES = ("gauss8", "swissroll", "checkerboard", "toy-images")

GAUSS8_RADIUS = 1.0
GAUSS8_SIGMA = 0.3
SWISSROLL_SCALE = 0.1
SWISSROLL_TMAX = 4.5 * np.pi
IMAGE_SIZE = 8


@dataclass(frozen=True)
class Dataset:
    name: str
    samples: np.ndarray  # standardized
    mean: np.ndarray
    std: np.ndarray

    @property
    def data_shape(self) -> tuple[int, ...]:
        return self.samples.shape[1:]

    def destandardize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def raw(self) -> np.ndarray:
        return self.destandardize(self.samples)


def gauss8_centers() -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(8) / 8.0
    return GAUSS8_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _gauss8(n: int, rng: Rng) -> np.ndarray:
    # Equal counts per mode by construction (remainder spread over the first
    # modes), shuffled so mini-batches mix modes.
    modes = np.arange(n) % 8
    points = gauss8_centers()[modes] + GAUSS8_SIGMA * rng.normal((n, 2))
    return points[rng.permutation(n)]

def _swissroll(n: int, rng: Rng) -> np.ndarray:
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.uniform(n))
    return SWISSROLL_SCALE * np.stack([t * np.cos(t), t * np.sin(t)], axis=1)


def _checkerboard(n: int, rng: Rng) -> np.ndarray:
    # The 8 "black" cells of a 4x4 board over [-2, 2]^2.
    cells = [(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0]
    picks = rng.integers(0, len(cells), n)
    corners = np.asarray(cells, dtype=np.float64)[picks] - 2.0
    return corners + rng.uniform((n, 2))


def _toy_images(n: int, rng: Rng) -> np.ndarray:
    centers = rng.uniform((n, 2), 2.0, 5.0)
    widths = rng.uniform((n,), 0.8, 1.6)
    grid = np.arange(IMAGE_SIZE, dtype=np.float64)
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    dy = yy[None] - centers[:, 0, None, None]
    dx = xx[None] - centers[:, 1, None, None]
    images = np.exp(-(dy * dy + dx * dx) / (2.0 * widths[:, None, None] ** 2))
    return images[:, None, :, :]


_BUILDERS = {
    "gauss8": _gauss8,
    "swissroll": _swissroll,
    "checkerboard": _checkerboard,
    "toy-images": _toy_images,
}


def make_dataset(name: str, n: int, rng: Rng) -> Dataset:
    """Build a named dataset of n standardized samples."""
    if name not in _BUILDERS:
        raise ConfigError(f"unknown dataset {name!r}; expected one of {', '.join(DATASET_NAMES)}")
    if n < 2:
        raise ConfigError(f"dataset size must be >= 2, got {n}")
    raw = _BUILDERS[name](n, rng)
    if raw.ndim == 2:
        mean = raw.mean(axis=0)
        std = raw.std(axis=0)
    else:
        mean = np.asarray(raw.mean())
        std = np.asarray(raw.std())
    std = np.where(std < 1e-12, 1.0, std)
    return Dataset(name=name, samples=(raw - mean) / std, mean=mean, std=std)
