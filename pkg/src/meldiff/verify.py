"""Self-contained oracle checks runnable as one command.

Each check pits an implementation path against an independent oracle:
exact rational arithmetic for the schedule products, closed-form
Gaussian posteriors for the guidance math, Monte-Carlo moments for the
sampler, central finite differences for every hand-written gradient,
and a direct-summation DFT for the STFT.  A check returns a
deterministic detail string so repeated runs produce identical reports.

``corrupt="schedule"`` deliberately perturbs the schedule fed to the
moment check; it exists so the harness can prove the checks can fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import audiodsp, guidance
from .models.gaussian import (GaussianClassifier, GaussianDenoiser,
                              GaussianWorld, analytic_gaussian_classifier_grad,
                              analytic_gaussian_eps)
from .models.network import ToyClassifier, ToyDenoiser
from .sampler import sample_batch
from .schedule import NoiseSchedule, build_linear_schedule


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def exact_alpha_bars(T: int, beta1: float, betaT: float) -> list[Fraction]:
    """Big-product oracle: exact rational running products of the same
    float64 betas the builder computes."""
    prods = []
    acc = Fraction(1)
    for t in range(1, T + 1):
        beta = beta1 + (t - 1) / (T - 1) * (betaT - beta1)
        acc *= Fraction(1) - Fraction(beta)
        prods.append(acc)
    return prods


def check_schedule() -> CheckResult:
    s = build_linear_schedule(400, 1e-4, 0.02)
    if s.betas[0] != 1e-4 or s.betas[-1] != 0.02:
        return CheckResult("schedule-endpoints", False,
                           f"beta endpoints {s.betas[0]}, {s.betas[-1]}")
    exact = exact_alpha_bars(400, 1e-4, 0.02)
    rel = max(abs(s.alpha_bars[i] - float(e)) / float(e)
              for i, e in enumerate(exact))
    ok = rel < 1e-12
    return CheckResult("schedule-product-oracle", ok,
                       f"max relative error {rel:.3e} (tolerance 1e-12)")


def check_guidance_identities(seed: int = 0, n: int = 1000) -> CheckResult:
    rng = np.random.default_rng(seed)
    s = build_linear_schedule()
    worst = 0.0
    for i in range(n):
        shape = (int(rng.integers(2, 9)), int(rng.integers(2, 9)))
        eps_cond = rng.standard_normal(shape)
        eps_uncond = rng.standard_normal(shape)
        if not np.array_equal(guidance.cfg_combine(eps_cond, eps_uncond, 0.0),
                              eps_cond):
            return CheckResult("guidance-identities", False,
                               "w1=0 did not return the conditional branch bitwise")
        if not np.array_equal(guidance.cfg_combine(eps_cond, eps_uncond, -1.0),
                              eps_uncond):
            return CheckResult("guidance-identities", False,
                               "w1=-1 did not return the unconditional branch bitwise")
        w2 = float(rng.uniform(0.1, 4.0))
        t = int(rng.integers(1, s.T + 1))
        ab = float(s.alpha_bars[t - 1])
        grad = rng.standard_normal(shape)
        cfg = guidance.GuidanceConfig(w1=0.0, w2=w2, t_start=s.T, normalize=True)
        term = guidance.make_guidance_term(eps_cond, grad, cfg, ab)
        cap = guidance.frobenius_norm(term.scaled_term)
        want = w2 * guidance.frobenius_norm(eps_cond)
        worst = max(worst, abs(cap - want) / want)
    ok = worst < 1e-6
    return CheckResult("guidance-norm-cap", ok,
                       f"max relative error {worst:.3e} over {n} tensors "
                       f"(tolerance 1e-6)")


def _two_class_world(seed: int, d: int = 8) -> GaussianWorld:
    rng = np.random.default_rng(seed)
    means = rng.uniform(-1.0, 1.0, (2, d))
    return GaussianWorld(means=means, sigma2=1.0, priors=np.array([0.5, 0.5]))


def check_bayes_composition(seed: int = 1, pairs: int = 10000) -> CheckResult:
    """Unconditional eps* minus sqrt(1-abar) * classifier gradient must
    equal the conditional eps* (Bayes rule in eps coordinates)."""
    s = build_linear_schedule()
    world = _two_class_world(seed)
    rng = np.random.default_rng(seed + 1)
    groups = 100
    per = pairs // groups
    worst = 0.0
    for _ in range(groups):
        t = int(rng.integers(1, s.T + 1))
        label = int(rng.integers(0, 2))
        x = rng.normal(0.0, 1.5, (per, world.dim))
        eps_u = analytic_gaussian_eps(x, t, world, s)
        _, grad = analytic_gaussian_classifier_grad(x, t, world, label, s)
        lhs = eps_u - math.sqrt(1.0 - s.alpha_bars[t - 1]) * grad
        rhs = analytic_gaussian_eps(x, t, world, s, label=label)
        denom = np.maximum(np.abs(rhs), 1e-12)
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / denom)))
    ok = worst < 1e-8
    return CheckResult("bayes-composition", ok,
                       f"max relative error {worst:.3e} over {pairs} pairs "
                       f"(tolerance 1e-8)")


def check_sampling_moments(seed: int = 2, n: int = 10000, d: int = 8,
                           corrupt: bool = False) -> CheckResult:
    """Guided chains must land on the class-conditional Gaussian: mean
    within 5 standard errors, per-coordinate variance within 10%."""
    s = build_linear_schedule()
    if corrupt:
        bad = np.array(s.alpha_bars)
        bad[: s.T // 2] *= 0.55
        s = NoiseSchedule(betas=np.array(s.betas), alphas=np.array(s.alphas),
                          alpha_bars=bad)
    world = _two_class_world(seed)
    label = 1
    cfg = guidance.GuidanceConfig(w1=0.0, w2=1.0, t_start=s.T, normalize=False)
    x0 = sample_batch(s, GaussianDenoiser(world, s), None, n, (d,), seed,
                      classifier=GaussianClassifier(world, s), label=label,
                      cfg=cfg)
    mean = x0.mean(axis=0)
    var = x0.var(axis=0)
    se = x0.std(axis=0) / math.sqrt(n)
    mean_dev = np.abs(mean - world.means[label]) / se
    var_dev = np.abs(var - world.sigma2) / world.sigma2
    problems = []
    if np.any(mean_dev >= 5.0):
        i = int(np.argmax(mean_dev))
        problems.append(f"mean[{i}] off by {mean_dev[i]:.2f} standard errors")
    if np.any(var_dev >= 0.10):
        i = int(np.argmax(var_dev))
        problems.append(f"var[{i}] off by {100 * var_dev[i]:.1f}%")
    if problems:
        return CheckResult("sampling-moments", False, "; ".join(problems))
    return CheckResult(
        "sampling-moments", True,
        f"max mean deviation {float(mean_dev.max()):.2f} SE (limit 5), "
        f"max variance deviation {100 * float(var_dev.max()):.1f}% (limit 10%)")


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    if scale < 1e-8:
        return 0.0
    return abs(a - b) / scale


def probe_param_gradients(model, grads, loss_fn, rng, n_probes: int,
                          h: float = 1e-4) -> float:
    """Central finite differences on randomly probed parameters; the
    model must be float64.  Returns the worst relative error."""
    worst = 0.0
    names = sorted(model.params)
    for _ in range(n_probes):
        name = names[int(rng.integers(0, len(names)))]
        arr = model.params[name]
        idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        up = loss_fn()
        arr[idx] = orig - h
        down = loss_fn()
        arr[idx] = orig
        fd = (up - down) / (2.0 * h)
        worst = max(worst, _rel_err(float(grads[name][idx]), fd))
    return worst


def check_gradients(seed: int = 3, probes: int = 220) -> CheckResult:
    rng = np.random.default_rng(seed)
    s = build_linear_schedule()
    den = ToyDenoiser(n_mels=6, d_f=2, d_m=3, cond_frames=2, hidden=16,
                      blocks=2, time_dim=8, seed=seed, dtype=np.float64)
    den.params["out.W"] = rng.standard_normal(den.params["out.W"].shape) * 0.3
    den.params["out.b"] = rng.standard_normal(den.params["out.b"].shape) * 0.1
    x = rng.standard_normal((2, 6, 8))
    t = rng.integers(1, s.T + 1, 2)
    fused = rng.standard_normal((2, 2, 5))
    weight = rng.standard_normal((2, 6, 8))

    def den_loss():
        return float(np.sum(weight * den.forward(x, t, fused)))

    _, cache = den.forward(x, t, fused, record=True)
    den_grads = den.backward(cache, weight)
    worst_d = probe_param_gradients(den, den_grads, den_loss, rng,
                                    probes - probes // 3)

    clf = ToyClassifier(n_mels=6, n_frames=8, n_classes=3, hidden=16,
                        time_dim=8, seed=seed + 1, dtype=np.float64)
    clf.params["out.W"] = rng.standard_normal(clf.params["out.W"].shape) * 0.3
    clf.params["out.b"] = rng.standard_normal(clf.params["out.b"].shape) * 0.1
    labels = rng.integers(0, 3, 2)

    def clf_loss():
        return clf.loss_and_grads(x, t, labels)[0]

    _, clf_grads = clf.loss_and_grads(x, t, labels)
    worst_c = probe_param_gradients(clf, clf_grads, clf_loss, rng, probes // 3)

    worst = max(worst_d, worst_c)
    ok = worst < 1e-4
    return CheckResult("gradient-checks", ok,
                       f"max relative error {worst:.3e} over {probes} probed "
                       f"parameters (tolerance 1e-4)")


def check_stft_oracle(seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, audiodsp.SAMPLE_RATE)
    mag = audiodsp.stft_magnitude(x)
    window = audiodsp.hann_window(audiodsp.WIN_LENGTH)
    worst = 0.0
    for m in range(mag.shape[1]):
        frame = x[m * audiodsp.HOP_LENGTH:m * audiodsp.HOP_LENGTH
                  + audiodsp.WIN_LENGTH] * window
        oracle = np.abs(audiodsp.naive_dft_oracle(frame))[:mag.shape[0]]
        worst = max(worst, float(np.max(np.abs(mag[:, m] - oracle))))
    if worst >= 1e-6:
        return CheckResult("stft-oracle", False,
                           f"max abs deviation {worst:.3e} (tolerance 1e-6)")
    tone = np.sin(2 * np.pi * 1000.0 * np.arange(audiodsp.SAMPLE_RATE)
                  / audiodsp.SAMPLE_RATE)
    peak_bins = audiodsp.stft_magnitude(tone).argmax(axis=0)
    if not np.all(peak_bins == 40):
        return CheckResult("stft-oracle", False,
                           f"1 kHz tone peaked at bins {sorted(set(peak_bins.tolist()))}")
    stats = audiodsp.NormalizationStats(math.log(1e-5), 2.0)
    vals = rng.uniform(-12.0, 3.0, (8, 8))
    round_trip = audiodsp.denormalize(audiodsp.normalize(vals, stats), stats)
    rt = float(np.max(np.abs(round_trip - vals) / np.abs(vals)))
    ok = rt < 1e-12
    return CheckResult("stft-oracle", ok,
                       f"max abs deviation {worst:.3e}; tone peak at bin 40; "
                       f"normalization round-trip {rt:.3e}")


ALL_CHECKS = (
    lambda corrupt=None: check_schedule(),
    lambda corrupt=None: check_guidance_identities(),
    lambda corrupt=None: check_bayes_composition(),
    lambda corrupt=None: check_sampling_moments(corrupt=(corrupt == "schedule")),
    lambda corrupt=None: check_gradients(),
    lambda corrupt=None: check_stft_oracle(),
)


def run_all(corrupt: str | None = None) -> list[CheckResult]:
    return [fn(corrupt=corrupt) for fn in ALL_CHECKS]
