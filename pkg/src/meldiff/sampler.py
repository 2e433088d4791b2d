"""DDPM ancestral reverse step and the full guided inference loop.

The loop runs t = T down to 1.  Each step combines the conditional and
unconditional noise predictions (classifier-free), applies the gated,
optionally gradient-normalized classifier correction, and takes the
ancestral update

    x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
              + sqrt(beta_t) * z,     z = 0 at t = 1.

These are the standard DDPM coefficients.  An alternative update with
1/sqrt(abar_t) outside the bracket and an un-rooted beta_t in front of
z exists for comparison; it compounds the cumulative root per step,
diverges numerically, and is not used anywhere else.

Randomness is counter-based: one seed keys an independent generator per
step, so a chain replays bit-exactly and independent chains never share
a stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import guidance as gd
from .schedule import NoiseSchedule, alpha_bar

__all__ = ["SampleTrace", "StepRecord", "ddpm_step", "sample", "sample_batch",
           "write_trace"]


@dataclass(frozen=True)
class StepRecord:
    t: int
    eps_hat_norm: float
    eps_mg_norm: float
    gamma: float
    gate_open: bool


@dataclass
class SampleTrace:
    steps: list[StepRecord] = field(default_factory=list)
    x0: np.ndarray | None = None


def _chain_rng(seed: int, counter: int) -> np.random.Generator:
    return np.random.default_rng((int(seed), int(counter)))


def ddpm_step(s: NoiseSchedule, x_t: np.ndarray, eps_hat: np.ndarray, t: int,
              z, alt_update: bool = False) -> np.ndarray:
    """One ancestral reverse update x_t -> x_{t-1}.

    The caller must pass z = 0 at t = 1 (the final step is
    deterministic); any array z must match the sample shape.
    """
    x_t = np.asarray(x_t)
    eps_hat = np.asarray(eps_hat)
    if x_t.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: x_t {x_t.shape} vs eps_hat {eps_hat.shape}")
    z = np.asarray(z)
    if z.shape != () and z.shape != x_t.shape:
        raise ValueError(f"shape mismatch: z {z.shape} vs x_t {x_t.shape}")
    t = int(t)
    if not 1 <= t <= s.T:
        raise IndexError(f"step index {t} outside 1..{s.T}")
    beta_t = float(s.betas[t - 1])
    ab = float(s.alpha_bars[t - 1])
    mean = x_t - (beta_t / math.sqrt(1.0 - ab)) * eps_hat
    if alt_update:
        return mean / math.sqrt(ab) + beta_t * z
    return mean / math.sqrt(float(s.alphas[t - 1])) + math.sqrt(beta_t) * z


def _batch_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(x.astype(np.float64, copy=False)),
                          axis=tuple(range(1, x.ndim))))


def _guided_eps_batch(eps_mg, grad, cfg: gd.GuidanceConfig, ab: float):
    """Vectorized twin of guidance.guided_eps with one gamma per chain.

    Kept in lockstep with the scalar ops by a parity test; norms are
    taken per chain (axes after the first), never across the batch.
    """
    root = math.sqrt(1.0 - ab)
    if cfg.normalize:
        gnorm = _batch_norms(grad)
        mnorm = _batch_norms(eps_mg)
        gamma = np.where(gnorm == 0.0, 0.0,
                         mnorm / (root * np.where(gnorm == 0.0, 1.0, gnorm)))
    else:
        gamma = np.ones(eps_mg.shape[0])
    scale = (cfg.w2 * gamma * root).reshape((-1,) + (1,) * (eps_mg.ndim - 1))
    return eps_mg - scale * grad, gamma


def _validate(s, cfg, classifier, label):
    if (classifier is None) != (label is None):
        raise ValueError("classifier and label must be provided together")
    if cfg.t_start > s.T:
        raise ValueError(f"t_start={cfg.t_start} exceeds schedule length T={s.T}")


def sample(s: NoiseSchedule, denoiser, cond, shape, seed: int,
           classifier=None, label=None,
           cfg: gd.GuidanceConfig | None = None,
           trace: bool = False, alt_update: bool = False):
    """Run one reverse chain; returns (x0, SampleTrace or None)."""
    cfg = cfg if cfg is not None else gd.GuidanceConfig()
    _validate(s, cfg, classifier, label)
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ValueError(f"invalid sample shape {shape}")
    rec = SampleTrace() if trace else None
    x = _chain_rng(seed, 0).standard_normal(shape)
    for t in range(s.T, 0, -1):
        ab = alpha_bar(s, t)
        eps_cond = denoiser.predict_eps(x, t, cond)
        if cfg.w1 == 0.0:
            eps_mg = eps_cond
        else:
            eps_mg = gd.cfg_combine(eps_cond, denoiser.predict_eps(x, t, None),
                                    cfg.w1)
        gate_open = (classifier is not None and cfg.w2 != 0.0
                     and t <= cfg.t_start)
        gamma = 0.0
        if gate_open:
            _, grad = classifier.log_prob_and_grad(x, t, label)
            term = gd.make_guidance_term(eps_mg, grad, cfg, ab)
            eps_hat = gd.guided_eps(eps_mg, term, cfg, t, ab)
            gamma = term.gamma
        else:
            eps_hat = eps_mg
        z = _chain_rng(seed, t).standard_normal(shape) if t > 1 else 0.0
        x = ddpm_step(s, x, eps_hat, t, z, alt_update=alt_update)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite sample at step t={t}")
        if rec is not None:
            rec.steps.append(StepRecord(
                t=t, eps_hat_norm=gd.frobenius_norm(eps_hat),
                eps_mg_norm=gd.frobenius_norm(eps_mg),
                gamma=gamma, gate_open=gate_open))
    if rec is not None:
        rec.x0 = x
    return x, rec


def sample_batch(s: NoiseSchedule, denoiser, cond, batch: int, shape,
                 seed: int, classifier=None, label=None,
                 cfg: gd.GuidanceConfig | None = None,
                 alt_update: bool = False) -> np.ndarray:
    """Vectorized independent chains sharing one target label.

    The leading axis is the chain index; guidance scales are computed
    per chain.  Returns the (batch, *shape) array of final samples.
    """
    cfg = cfg if cfg is not None else gd.GuidanceConfig()
    _validate(s, cfg, classifier, label)
    shape = (int(batch),) + tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ValueError(f"invalid sample shape {shape}")
    x = _chain_rng(seed, 0).standard_normal(shape)
    for t in range(s.T, 0, -1):
        ab = alpha_bar(s, t)
        eps_cond = denoiser.predict_eps(x, t, cond)
        if cfg.w1 == 0.0:
            eps_mg = eps_cond
        else:
            eps_mg = gd.cfg_combine(eps_cond, denoiser.predict_eps(x, t, None),
                                    cfg.w1)
        if classifier is not None and cfg.w2 != 0.0 and t <= cfg.t_start:
            _, grad = classifier.log_prob_and_grad(x, t, label)
            eps_hat, _ = _guided_eps_batch(eps_mg, grad, cfg, ab)
        else:
            eps_hat = eps_mg
        z = _chain_rng(seed, t).standard_normal(shape) if t > 1 else 0.0
        x = ddpm_step(s, x, eps_hat, t, z, alt_update=alt_update)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite sample at step t={t}")
    return x


def write_trace(trace: SampleTrace, path) -> None:
    """Line-oriented text: 't gamma eps_norm gate' per step, t = T..1."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# t gamma eps_norm gate\n")
        for r in trace.steps:
            fh.write(f"{r.t} {r.gamma:.17g} {r.eps_hat_norm:.17g} "
                     f"{int(r.gate_open)}\n")
