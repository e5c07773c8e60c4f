"""Variance-preserving diffusion schedule and samplers.

Forward process: dx = -1/2 beta(t) x dt + sqrt(beta(t)) dw with a linear
beta(t) over t in (0, 1], discretized to 100 steps. The transition kernel
is Gaussian with closed-form mean/variance, which gives exact score targets
for training and an exact per-timestep noising operator. The reverse-time
process is integrated with Euler-Maruyama.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch


class ScheduleError(ValueError):
    """Timestep outside the schedule's (0, 1] support."""


@dataclass(frozen=True)
class VpSchedule:
    beta_min: float = 0.05
    beta_max: float = 20.0
    n_steps: int = 100

    def beta(self, t: float) -> float:
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def integral_beta(self, t: float) -> float:
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def mean_coef(self, t: float) -> float:
        """E[x_t | x_0] = mean_coef(t) * x_0."""
        return math.exp(-0.5 * self.integral_beta(t))

    def variance(self, t: float) -> float:
        """Var[x_t | x_0], approaching 1 as t -> 1."""
        return 1.0 - math.exp(-self.integral_beta(t))

    def timestep(self, index: int) -> float:
        """Continuous t for a 1-based reverse-step index.

        Index 1 is the first denoising step (t = 1, pure-noise end), where
        the coarse signal structure is reconstructed; index n_steps is the
        final refinement step near t = 0. Early-step indices therefore
        address the high-noise side of the trajectory.
        """
        if not 1 <= index <= self.n_steps:
            raise ScheduleError(f"step index {index} outside 1..{self.n_steps}")
        return (self.n_steps - index + 1) / self.n_steps

    def validate_t(self, t: float) -> float:
        if not 0.0 < t <= 1.0:
            raise ScheduleError(f"t={t} outside (0, 1]")
        return t


def noise_sample(
    x0: np.ndarray, t: float, schedule: VpSchedule, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw x_t from the closed-form kernel and return its exact score.

    Returns (x_t, grad_x log p_t(x_t | x_0)).
    """
    schedule.validate_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    m = schedule.mean_coef(t)
    v = schedule.variance(t)
    noise = rng.standard_normal(x0.shape)
    x_t = m * x0 + math.sqrt(v) * noise
    score = -(x_t - m * x0) / v
    return x_t, score


def noise_sample_torch(
    x0: torch.Tensor, t: float, schedule: VpSchedule, generator: torch.Generator
) -> tuple[torch.Tensor, torch.Tensor]:
    """Torch twin of :func:`noise_sample`; keeps x0's dtype/device."""
    schedule.validate_t(t)
    m = schedule.mean_coef(t)
    std = math.sqrt(schedule.variance(t))
    noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype, device=x0.device)
    x_t = m * x0 + std * noise
    return x_t, noise


def reverse_sde_sample(
    score_fn: Callable[[torch.Tensor, float], torch.Tensor],
    shape: tuple[int, ...],
    n_steps: int,
    schedule: VpSchedule,
    generator: torch.Generator,
    t_end: float = 1e-3,
) -> torch.Tensor:
    """Euler-Maruyama integration of the reverse SDE from t=1 down to ~0.

    ``score_fn(x, t)`` supplies the (learned or analytic) score. The last
    step adds no noise. Deterministic given the generator state.
    """
    if n_steps < 1:
        raise ScheduleError(f"need n_steps >= 1, got {n_steps}")
    x = torch.randn(shape, generator=generator)
    ts = np.linspace(1.0, t_end, n_steps + 1)
    for k in range(n_steps):
        t = float(ts[k])
        h = float(ts[k] - ts[k + 1])
        beta = schedule.beta(t)
        score = score_fn(x, t)
        drift = -0.5 * beta * x - beta * score
        x = x - drift * h
        if k < n_steps - 1:
            z = torch.randn(shape, generator=generator)
            x = x + math.sqrt(beta * h) * z
    return x
