"""Closed-form denoiser and classifier for isotropic Gaussian data.

With class-conditional data x0 ~ N(mu_c, sigma2 I), the forward marginal
at step t is N(sqrt(abar_t) mu_c, s2_t I) with s2_t = abar_t sigma2 + 1
- abar_t.  Everything downstream follows in closed form:

    optimal eps prediction   eps*(x) = sqrt(1-abar) (x - sqrt(abar) mu) / s2
    class posterior          p(c|x)  = softmax_c(log prior_c + log N_c(x))
    its input gradient       sqrt(abar) (mu_c - sum_k p(k|x) mu_k) / s2

The unconditional eps* weights the per-class terms by the posterior
responsibilities.  These exact forms are the verification oracles for
the guidance and sampling math: conditional eps* must equal the
unconditional eps* minus sqrt(1-abar) times the classifier gradient
(Bayes rule in eps coordinates).

All operations accept x of shape (..., d) and return matching shapes;
``t`` may be a scalar step or an integer array broadcast over the
leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..schedule import NoiseSchedule


@dataclass(frozen=True)
class GaussianWorld:
    means: np.ndarray    # (K, d)
    sigma2: float
    priors: np.ndarray   # (K,), sums to 1

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        priors = np.asarray(self.priors, dtype=np.float64)
        if priors.ndim != 1 or priors.shape[0] != means.shape[0]:
            raise ValueError("one prior per class required")
        if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-12:
            raise ValueError("priors must be nonnegative and sum to 1")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "priors", priors)
        means.setflags(write=False)
        priors.setflags(write=False)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def check_label(self, label: int) -> int:
        label = int(label)
        if not 0 <= label < self.n_classes:
            raise ValueError(f"label {label} outside 0..{self.n_classes - 1}")
        return label


def _abar_for(s: NoiseSchedule, t) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    if np.any(t < 1) or np.any(t > s.T):
        raise IndexError(f"step index outside 1..{s.T}")
    return s.alpha_bars[t - 1]


def _check_dim(x: np.ndarray, world: GaussianWorld) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != world.dim:
        raise ValueError(f"x dimension {x.shape[-1]} != world dimension {world.dim}")
    return x


def _log_posterior(x, abar, world):
    # log p(c | x_t) up to the shared normalizer; abar broadcast over (...,)
    s2 = abar * world.sigma2 + 1.0 - abar
    diff = x[..., None, :] - np.sqrt(abar)[..., None, None] * world.means
    log_joint = (np.log(world.priors)
                 - 0.5 * np.sum(diff * diff, axis=-1) / s2[..., None])
    log_norm = _logsumexp(log_joint)
    return log_joint - log_norm[..., None], s2


def _logsumexp(a):
    amax = np.max(a, axis=-1)
    return amax + np.log(np.sum(np.exp(a - amax[..., None]), axis=-1))


def analytic_gaussian_eps(x_t, t, world: GaussianWorld, s: NoiseSchedule,
                          label: int | None = None) -> np.ndarray:
    """Exact optimal eps-prediction for the Gaussian world.

    ``label=None`` gives the unconditional (mixture) denoiser; an integer
    label conditions on that class.
    """
    x = _check_dim(x_t, world)
    abar = np.broadcast_to(_abar_for(s, t), x.shape[:-1])
    s2 = abar * world.sigma2 + 1.0 - abar
    if label is None:
        resp, _ = _log_posterior(x, abar, world)
        mu = np.exp(resp) @ world.means
    else:
        mu = world.means[world.check_label(label)]
    return (np.sqrt(1.0 - abar) / s2)[..., None] * (x - np.sqrt(abar)[..., None] * mu)


def analytic_gaussian_classifier_grad(x_t, t, world: GaussianWorld, label: int,
                                      s: NoiseSchedule):
    """Exact (log p(label | x_t), gradient wrt x_t) for the noised posterior."""
    x = _check_dim(x_t, world)
    label = world.check_label(label)
    abar = np.broadcast_to(_abar_for(s, t), x.shape[:-1])
    log_post, s2 = _log_posterior(x, abar, world)
    mu_post = np.exp(log_post) @ world.means
    grad = (np.sqrt(abar) / s2)[..., None] * (world.means[label] - mu_post)
    logp = log_post[..., label]
    if logp.ndim == 0:
        logp = float(logp)
    return logp, grad


class GaussianDenoiser:
    """DenoiserInterface over the analytic eps*; ignores conditioning
    bundles (its conditioning is the optional class label)."""

    def __init__(self, world: GaussianWorld, schedule: NoiseSchedule,
                 label: int | None = None):
        self.world = world
        self.schedule = schedule
        self.label = None if label is None else world.check_label(label)

    def predict_eps(self, x_t, t, cond=None) -> np.ndarray:
        return analytic_gaussian_eps(x_t, t, self.world, self.schedule,
                                     label=self.label)


class GaussianClassifier:
    """ClassifierInterface over the analytic posterior."""

    def __init__(self, world: GaussianWorld, schedule: NoiseSchedule):
        self.world = world
        self.schedule = schedule
        self.n_classes = world.n_classes

    def log_prob_and_grad(self, x_t, t, label):
        return analytic_gaussian_classifier_grad(x_t, t, self.world, label,
                                                 self.schedule)
