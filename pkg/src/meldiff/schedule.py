"""Diffusion noise schedule and the forward (noising) process.

A schedule fixes, for T steps, the per-step variances beta_t, the
signal-keep factors alpha_t = 1 - beta_t, and the running products
alpha_bar_t = prod_{s<=t} alpha_s.  The forward marginal is

    q(x_t | x_0) = N(sqrt(alpha_bar_t) x_0, (1 - alpha_bar_t) I)

so a noised sample is x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.

Steps are indexed t = 1..T everywhere in the public API, matching the
reverse loop that runs t = T down to 1; the tables are stored as plain
0-based float64 arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable beta/alpha/alpha_bar tables, float64, length T."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        for arr in (self.betas, self.alphas, self.alpha_bars):
            arr.setflags(write=False)

    @property
    def T(self) -> int:
        return len(self.betas)


def build_linear_schedule(T: int = 400, beta1: float = 1e-4,
                          betaT: float = 0.02) -> NoiseSchedule:
    """Linear schedule with inclusive endpoints:

        beta_t = beta1 + (t - 1) / (T - 1) * (betaT - beta1),  t = 1..T
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not (0.0 < beta1 <= betaT < 1.0):
        raise ValueError(
            f"need 0 < beta1 <= betaT < 1, got beta1={beta1}, betaT={betaT}")
    t = np.arange(1, T + 1, dtype=np.float64)
    betas = beta1 + (t - 1.0) / (T - 1.0) * (betaT - beta1)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def _check_t(s: NoiseSchedule, t: int) -> int:
    t = int(t)
    if not 1 <= t <= s.T:
        raise IndexError(f"step index {t} outside 1..{s.T}")
    return t


def beta(s: NoiseSchedule, t: int) -> float:
    return float(s.betas[_check_t(s, t) - 1])


def alpha(s: NoiseSchedule, t: int) -> float:
    return float(s.alphas[_check_t(s, t) - 1])


def alpha_bar(s: NoiseSchedule, t: int) -> float:
    return float(s.alpha_bars[_check_t(s, t) - 1])


def q_sample(s: NoiseSchedule, x0: np.ndarray, t: int,
             eps: np.ndarray) -> np.ndarray:
    """Noise x0 to step t: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.

    Coefficients are applied as Python floats so the result keeps the
    dtype of the inputs (float32 training tensors stay float32).
    """
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    ab = alpha_bar(s, t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
