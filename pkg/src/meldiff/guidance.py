"""The two guidance mechanisms and their combination.

Classifier-free combination of the conditional and unconditional noise
predictions, weight w1:

    eps_mg = (1 + w1) * eps_cond - w1 * eps_uncond

Classifier guidance subtracts the scaled gradient of the classifier's
log-probability with respect to the noisy sample, weight w2.  The raw
gradient is far smaller in magnitude than eps_mg, so a per-step scale

    gamma = ||eps_mg|| / (sqrt(1 - abar_t) * ||grad||)

(Frobenius norms over the whole tensor) equalizes them, and the guided
estimate becomes

    eps_hat = eps_mg - w2 * gamma * sqrt(1 - abar_t) * grad

which caps the correction's norm at exactly w2 * ||eps_mg||.  With
normalization off the factor gamma is simply 1.  Guidance is gated:
during the reverse sweep t = T..1 it applies only once t <= t_start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GuidanceConfig:
    w1: float = 2.0          # classifier-free weight
    w2: float = 1.5          # classifier weight
    t_start: int = 270       # gate: classifier guidance applies for t <= t_start
    normalize: bool = True   # gradient-normalized (gamma) vs raw form

    def __post_init__(self):
        if self.w1 < -1.0:
            raise ValueError(f"w1 must be >= -1, got {self.w1}")
        if self.w2 < 0.0:
            raise ValueError(f"w2 must be >= 0, got {self.w2}")
        if self.t_start < 0:
            raise ValueError(f"t_start must be >= 0, got {self.t_start}")


@dataclass(frozen=True)
class GuidanceTerm:
    """One step's classifier correction: eps_hat = eps_mg - scaled_term."""

    gamma: float
    degenerate: bool          # zero gradient; correction vanishes
    raw_grad: np.ndarray
    scaled_term: np.ndarray


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray,
                w1: float) -> np.ndarray:
    """(1 + w1) * eps_cond - w1 * eps_uncond, elementwise.

    w1 = 0 returns the conditional branch bitwise; w1 = -1 returns the
    unconditional branch bitwise (the conditioning-discarded ablation).
    """
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError(
            f"shape mismatch: {eps_cond.shape} vs {eps_uncond.shape}")
    if w1 == 0.0:
        return eps_cond.copy()
    if w1 == -1.0:
        return eps_uncond.copy()
    return (1.0 + w1) * eps_cond - w1 * eps_uncond


def frobenius_norm(x: np.ndarray) -> float:
    """Scalar magnitude over the entire tensor, all axes."""
    return float(np.sqrt(np.sum(np.square(np.asarray(x, dtype=np.float64)))))


def gradient_norm_factor(eps_mg: np.ndarray, grad: np.ndarray,
                         alpha_bar_t: float) -> tuple[float, bool]:
    """gamma_t and a degeneracy flag.

    A zero gradient (saturated classifier late in sampling) makes the
    normalization undefined; it is mapped to gamma = 0 with the flag
    set, so the guided estimate degenerates to eps_mg.
    """
    grad_norm = frobenius_norm(grad)
    if grad_norm == 0.0:
        return 0.0, True
    return frobenius_norm(eps_mg) / (math.sqrt(1.0 - alpha_bar_t) * grad_norm), False


def make_guidance_term(eps_mg: np.ndarray, grad: np.ndarray,
                       cfg: GuidanceConfig, alpha_bar_t: float) -> GuidanceTerm:
    grad = np.asarray(grad)
    if grad.shape != np.shape(eps_mg):
        raise ValueError(f"shape mismatch: eps_mg {np.shape(eps_mg)} vs grad {grad.shape}")
    if cfg.normalize:
        gamma, degenerate = gradient_norm_factor(eps_mg, grad, alpha_bar_t)
        scale = cfg.w2 * gamma
    else:
        gamma, degenerate = 1.0, False
        scale = cfg.w2
    scaled = (scale * math.sqrt(1.0 - alpha_bar_t)) * grad
    return GuidanceTerm(gamma=gamma, degenerate=degenerate,
                        raw_grad=grad, scaled_term=scaled)


def guided_eps(eps_mg: np.ndarray, term, cfg: GuidanceConfig, t: int,
               alpha_bar_t: float) -> np.ndarray:
    """Apply the gated classifier correction to eps_mg.

    ``term`` may be a raw gradient tensor or a precomputed GuidanceTerm.
    For t > t_start the gate is closed and eps_mg passes through
    untouched; w2 = 0 likewise disables the correction exactly.
    """
    eps_mg = np.asarray(eps_mg)
    if t > cfg.t_start or cfg.w2 == 0.0:
        return eps_mg
    if not isinstance(term, GuidanceTerm):
        term = make_guidance_term(eps_mg, term, cfg, alpha_bar_t)
    if term.scaled_term.shape != eps_mg.shape:
        raise ValueError(
            f"shape mismatch: eps_mg {eps_mg.shape} vs term {term.scaled_term.shape}")
    return eps_mg - term.scaled_term
