"""Forward noising process, training loss, and DDIM sampling.

Timesteps are 1-based: t runs over [1, T], and alpha_bar(0) is defined as 1
so the final sampling update returns the clean-data prediction exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .rng import Rng
from .tensor import Tensor

Denoiser = Callable[[Tensor, "int | np.ndarray"], Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule. betas[i] is the beta at timestep t = i + 1."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray  # length T + 1, alpha_bars[0] == 1

    @property
    def steps(self) -> int:
        return len(self.betas)

    def beta(self, t: int) -> float:
        self._check(t, low=1)
        return float(self.betas[t - 1])

    def alpha_bar(self, t) -> "float | np.ndarray":
        """Cumulative product of alphas up to t; accepts t = 0 and arrays."""
        self._check(t, low=0)
        return self.alpha_bars[t]

    def _check(self, t, low: int) -> None:
        t = np.asarray(t)
        if t.min() < low or t.max() > self.steps:
            raise IndexError(f"timestep out of range [{low}, {self.steps}]: {t}")


def linear_schedule(steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linearly spaced betas from beta_start at t=1 to beta_end at t=T."""
    if steps < 1:
        raise ValueError(f"schedule needs at least one step, got {steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate(([1.0], np.cumprod(alphas)))
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def _coeff(values, like: np.ndarray) -> Tensor:
    """Shape per-sample coefficients for broadcasting against [B, ...] data."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape((arr.shape[0],) + (1,) * (like.ndim - 1))
    return Tensor(arr)


def forward_noise(x0: Tensor, t, eps: Tensor, schedule: NoiseSchedule) -> Tensor:
    """x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.

    t is a scalar or a per-sample integer array; both inputs stay
    differentiable.
    """
    if x0.shape != eps.shape:
        raise ShapeError(f"forward_noise: x0 {x0.shape} vs eps {eps.shape}")
    ab = schedule.alpha_bar(t)
    if np.asarray(t).min() < 1:
        raise IndexError(f"forward_noise: t must be >= 1, got {t}")
    signal = _coeff(np.sqrt(ab), x0.data)
    noise = _coeff(np.sqrt(1.0 - ab), x0.data)
    return T.add(T.mul(x0, signal), T.mul(eps, noise))


def diffusion_loss(model: Denoiser, x0: Tensor, t, eps: Tensor, schedule: NoiseSchedule) -> Tensor:
    """Mean squared error between the true noise and the model's prediction."""
    x_t = forward_noise(x0, t, eps, schedule)
    return T.mse(model(x_t, t), eps)


def ddim_sample(
    model: Denoiser,
    schedule: NoiseSchedule,
    n_steps: int,
    eta: float,
    rng: Rng,
    shape: tuple[int, ...],
) -> np.ndarray:
    """Generate samples by the DDIM update over a strided timestep subsequence.

    The subsequence is {1 + i * stride} with stride = floor(T / n_steps),
    walked from the largest member down to t = 1; the final update lands on
    alpha_bar(0) = 1 and therefore returns the clean-data prediction. With
    eta = 0 the walk is deterministic given the initial noise; eta = 1 over
    the full schedule matches ancestral sampling.
    """
    total = schedule.steps
    if not 1 <= n_steps <= total:
        raise ValueError(f"n_steps must be in [1, {total}], got {n_steps}")
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    stride = total // n_steps
    taus = [1 + i * stride for i in range(n_steps)]

    x = rng.normal(shape)
    for i in reversed(range(n_steps)):
        t, t_prev = taus[i], (taus[i - 1] if i > 0 else 0)
        ab_t = float(schedule.alpha_bar(t))
        ab_prev = float(schedule.alpha_bar(t_prev))
        eps_hat = model(Tensor(x), t).data
        x0_pred = (x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
        sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev)
        direction = np.sqrt(max(1.0 - ab_prev - sigma * sigma, 0.0))
        x = np.sqrt(ab_prev) * x0_pred + direction * eps_hat
        if eta > 0 and t_prev > 0:
            x = x + sigma * rng.normal(shape)
    return x
