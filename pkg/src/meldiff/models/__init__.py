"""Denoiser and classifier implementations.

Two families behind the same duck-typed contracts:

* ``gaussian`` — closed-form oracles for isotropic Gaussian worlds,
  used to verify the guidance and sampling math exactly.
* ``network`` — small trainable networks with manual backprop.

A denoiser is anything with ``predict_eps(x_t, t, cond=None)`` returning
a tensor shaped like ``x_t``; a classifier is anything with
``log_prob_and_grad(x_t, t, label)`` returning ``(log p, grad)`` with
the gradient shaped like ``x_t``.
"""

from .gaussian import (
    GaussianClassifier,
    GaussianDenoiser,
    GaussianWorld,
    analytic_gaussian_classifier_grad,
    analytic_gaussian_eps,
)
from .network import ToyClassifier, ToyDenoiser, time_embedding

__all__ = [
    "GaussianClassifier",
    "GaussianDenoiser",
    "GaussianWorld",
    "analytic_gaussian_classifier_grad",
    "analytic_gaussian_eps",
    "ToyClassifier",
    "ToyDenoiser",
    "time_embedding",
]
