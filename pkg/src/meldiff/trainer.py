"""Noise-prediction training with conditioning dropout, plus the toy
classifier's training loop and the synthetic desk-scale datasets.

Each denoiser step draws, per sample: a uniform step t in 1..T, a
standard-normal eps, the noised input via the forward process, and a
dropout decision that swaps the conditioning for the persisted null
tokens with probability dropout_p (the whole bundle at once).  The loss
is the mean absolute error on the noise prediction by default (L1), or
mean squared error when configured, followed by one Adam update.

Determinism contract: all randomness for step k comes from a generator
keyed by (seed, k), so a run resumed from a checkpoint at step k
continues bit-exactly like an unbroken run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conditioning import merge_embeddings, null_condition
from .models.network import ToyClassifier, ToyDenoiser
from .persistence import CheckpointState
from .schedule import NoiseSchedule, q_sample


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 16
    dropout_p: float = 0.2
    loss_kind: str = "l1"
    step_budget: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.loss_kind not in ("l1", "l2"):
            raise ValueError(f"loss_kind must be 'l1' or 'l2', got {self.loss_kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.step_budget < 0:
            raise ValueError("step_budget must be >= 0")


class Adam:
    """Plain Adam; state lives in the parameter dtype so checkpoints
    round-trip it exactly."""

    def __init__(self, lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name].astype(p.dtype, copy=False)
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng((int(seed), int(step)))


# --------------------------------------------------------------------------
# synthetic datasets


@dataclass(frozen=True)
class SyntheticDataset:
    kind: str
    x0: np.ndarray             # (size, F, N)
    global_embeds: np.ndarray  # (size, d_f)
    frame_embeds: np.ndarray   # (size, Nc, d_m)
    fused: np.ndarray          # (size, Nc, d_f + d_m)
    labels: np.ndarray         # (size,)
    centroids: np.ndarray      # (K, F, N)

    @property
    def size(self) -> int:
        return self.x0.shape[0]

    @property
    def n_classes(self) -> int:
        return self.centroids.shape[0]

    def nearest_centroid(self, x: np.ndarray) -> np.ndarray:
        """Held-out class read-out: nearest clean-class mean."""
        flat = np.asarray(x).reshape(-1, self.centroids[0].size)
        cent = self.centroids.reshape(self.n_classes, -1)
        d2 = ((flat[:, None, :] - cent[None]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)


DATASET_KINDS = ("gaussian-classes", "harmonic-mel")


def make_synthetic_dataset(kind: str, size: int, seed: int, *,
                           n_mels: int = 16, n_frames: int = 16,
                           cond_frames: int = 4, d_f: int = 3, d_m: int = 5,
                           n_classes: int = 2,
                           noise_scale: float = 0.3) -> SyntheticDataset:
    """Deterministic toy corpora.

    gaussian-classes: per-class fixed random pattern grids plus isotropic
    noise; conditioning is class-independent noise.

    harmonic-mel: mel-like grids with a class-dependent fundamental bin
    and two overtones under a random temporal envelope.  The conditioning
    encodes the envelope (timing/style) but deliberately not the class,
    mirroring a conditioner that carries dynamics while the transcript
    must come from classifier guidance.
    """
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    rng = np.random.default_rng((int(seed), hash_kind(kind)))
    labels = np.arange(size, dtype=np.int64) % n_classes if size else np.zeros(0, np.int64)
    f_embed = rng.standard_normal((size, d_f)).astype(np.float32)
    m_embed = 0.1 * rng.standard_normal((size, cond_frames, d_m)).astype(np.float32)

    if kind == "gaussian-classes":
        # patterns are constant along the frame axis: the denoiser shares
        # weights across frames and has no positional input
        columns = 0.8 * rng.standard_normal((n_classes, n_mels, 1))
        patterns = np.broadcast_to(columns, (n_classes, n_mels, n_frames))
        noise = noise_scale * rng.standard_normal((size, n_mels, n_frames))
        x0 = (patterns[labels] + noise).astype(np.float32)
        centroids = patterns.astype(np.float32)
    else:
        f0 = 2.0 + 4.5 * np.arange(n_classes)
        bins = np.arange(n_mels, dtype=np.float64)
        combs = np.zeros((n_classes, n_mels))
        for k in range(n_classes):
            for h in (1, 2, 3):
                combs[k] += (1.0 / h) * np.exp(-((bins - h * f0[k]) ** 2) / (2 * 0.7 ** 2))
        phases = rng.uniform(0.0, 2.0 * np.pi, size)
        frames = np.arange(n_frames, dtype=np.float64)
        env = 0.5 + 0.45 * np.sin(2 * np.pi * frames[None, :] / n_frames
                                  + phases[:, None])        # (size, N)
        clean = -1.0 + 2.0 * combs[labels][:, :, None] * env[:, None, :]
        x0 = (clean + 0.02 * rng.standard_normal(clean.shape)).astype(np.float32)
        # conditioning channel 0 carries the envelope at the video rate
        group = env.reshape(size, cond_frames, n_frames // cond_frames).mean(axis=2)
        m_embed[:, :, 0] = group.astype(np.float32)
        centroids = np.stack([
            x0[labels == k].mean(axis=0) if np.any(labels == k)
            else np.zeros((n_mels, n_frames), np.float32)
            for k in range(n_classes)
        ])

    tiled = np.broadcast_to(f_embed[:, None, :], (size, cond_frames, d_f))
    fused = np.concatenate([m_embed, tiled], axis=2)
    return SyntheticDataset(kind=kind, x0=x0, global_embeds=f_embed,
                            frame_embeds=m_embed, fused=fused, labels=labels,
                            centroids=centroids.astype(np.float32))


def hash_kind(kind: str) -> int:
    # stable across processes (builtin hash is salted)
    return sum(ord(c) * 31 ** i for i, c in enumerate(kind)) % (2 ** 31)


# --------------------------------------------------------------------------
# training steps


def _noise_batch(dataset, s: NoiseSchedule, batch: int, rng):
    """Common draws: batch indices, steps, noise, noised inputs."""
    idx = rng.integers(0, dataset.size, batch)
    t = rng.integers(1, s.T + 1, batch)
    eps = rng.standard_normal((batch,) + dataset.x0.shape[1:]).astype(np.float32)
    x_t = np.stack([q_sample(s, dataset.x0[i], t[j], eps[j])
                    for j, i in enumerate(idx)])
    return idx, t, eps, x_t


def train_step(model: ToyDenoiser, dataset: SyntheticDataset,
               s: NoiseSchedule, cfg: TrainConfig, adam: Adam,
               step: int) -> float:
    """One noise-prediction step; returns the batch loss."""
    if dataset.size == 0:
        raise ValueError("empty dataset")
    rng = _step_rng(cfg.seed, step)
    idx, t, eps, x_t = _noise_batch(dataset, s, cfg.batch_size, rng)
    drop = rng.random(cfg.batch_size) < cfg.dropout_p
    fused = dataset.fused[idx].copy()
    if np.any(drop):
        fused[drop] = model.null.fused
    eps_hat, cache = model.forward(x_t, t, fused, record=True)
    diff = eps_hat - eps
    if cfg.loss_kind == "l1":
        loss = float(np.abs(diff).mean())
        d_eps = np.sign(diff) / diff.size
    else:
        loss = float((diff * diff).mean())
        d_eps = (2.0 / diff.size) * diff
    if not math.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss at step {step}; drawn t values: {t.tolist()}")
    grads = model.backward(cache, d_eps)
    adam.step(model.params, grads)
    model.train_steps = step + 1
    return loss


def classifier_train_step(model: ToyClassifier, dataset: SyntheticDataset,
                          s: NoiseSchedule, cfg: TrainConfig, adam: Adam,
                          step: int) -> float:
    """One cross-entropy step on diffusion-noised inputs."""
    if dataset.size == 0:
        raise ValueError("empty dataset")
    rng = _step_rng(cfg.seed, step)
    idx, t, _, x_t = _noise_batch(dataset, s, cfg.batch_size, rng)
    loss, grads = model.loss_and_grads(x_t, t, dataset.labels[idx])
    if not math.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss at step {step}; drawn t values: {t.tolist()}")
    adam.step(model.params, grads)
    model.train_steps = step + 1
    return loss


def train_loop(model, dataset: SyntheticDataset, s: NoiseSchedule,
               cfg: TrainConfig, *, adam: Adam | None = None,
               start_step: int = 0, checkpoint_every: int = 0,
               checkpoint_fn=None, log_every: int = 0, log_fn=None):
    """Run train steps start_step..step_budget-1; returns (model, adam, losses).

    ``checkpoint_fn(model, adam, step)`` is invoked every
    ``checkpoint_every`` steps and always once at the end (so a zero
    budget still writes the initial state).
    """
    if dataset.size == 0:
        raise ValueError("empty dataset")
    if adam is None:
        adam = Adam(lr=cfg.learning_rate)
        adam.t = start_step
    step_fn = train_step if isinstance(model, ToyDenoiser) else classifier_train_step
    losses = []
    for step in range(start_step, cfg.step_budget):
        loss = step_fn(model, dataset, s, cfg, adam, step)
        losses.append(loss)
        if log_every and log_fn and (step + 1) % log_every == 0:
            log_fn(step + 1, loss)
        if checkpoint_every and checkpoint_fn and (step + 1) % checkpoint_every == 0:
            checkpoint_fn(model, adam, step + 1)
    if checkpoint_fn:
        checkpoint_fn(model, adam, cfg.step_budget)
    return model, adam, losses


# --------------------------------------------------------------------------
# checkpoint packing


def pack_checkpoint(model, adam: Adam, s: NoiseSchedule, beta1: float,
                    betaT: float, step: int, stats_min: float = math.log(1e-5),
                    stats_max: float = 0.0) -> CheckpointState:
    """Full training state as a CheckpointState.

    Models without conditioning (the classifier) still carry a minimal
    null-token bundle; the file format requires the null tensors."""
    if isinstance(model, ToyDenoiser):
        prefix = "denoiser"
        null = model.null
        null_dims = (model.d_f, model.d_m, model.cond_frames, model.null_seed)
    else:
        prefix = "classifier"
        null = null_condition(1, 1, 1, 0, dtype=model.dtype)
        null_dims = (1, 1, 1, 0)
    tensors: dict[str, np.ndarray] = {}
    for name, arr in model.params.items():
        tensors[f"{prefix}.{name}"] = arr
    for name, arr in adam.m.items():
        tensors[f"adam.m.{name}"] = arr
    for name, arr in adam.v.items():
        tensors[f"adam.v.{name}"] = arr
    tensors["null.f"] = null.global_embed
    tensors["null.m"] = null.frame_embeds
    if prefix == "classifier":
        tensors["classifier.input_shape"] = np.array(
            [model.n_mels, model.n_frames], dtype=np.float32)
    return CheckpointState(T=s.T, beta1=beta1, betaT=betaT,
                           stats_min=stats_min, stats_max=stats_max,
                           null_d_f=null_dims[0], null_d_m=null_dims[1],
                           null_frames=null_dims[2], null_seed=null_dims[3],
                           train_step=step, tensors=tensors)


def unpack_checkpoint(state: CheckpointState):
    """Rebuild (model, adam) from a CheckpointState; the model kind is
    inferred from the tensor name prefix."""
    names = state.tensors
    if any(n.startswith("denoiser.") for n in names):
        prefix = "denoiser"
        f, h = names["denoiser.in.W"].shape
        e = names["denoiser.time.W"].shape[0]
        blocks = sum(1 for n in names if n.startswith("denoiser.block")
                     and n.endswith(".W1"))
        params = {n.removeprefix("denoiser."): arr.copy()
                  for n, arr in names.items() if n.startswith("denoiser.")}
        model = ToyDenoiser(n_mels=f, d_f=state.null_d_f, d_m=state.null_d_m,
                            cond_frames=state.null_frames, hidden=h,
                            blocks=blocks, time_dim=e,
                            null_seed=state.null_seed, params=params)
        model.null = merge_embeddings(names["null.f"], names["null.m"],
                                      is_null=True)
    elif any(n.startswith("classifier.") for n in names):
        f, n_frames = (int(v) for v in names["classifier.input_shape"])
        h, k = names["classifier.out.W"].shape
        e = names["classifier.time.W"].shape[0]
        params = {n.removeprefix("classifier."): arr.copy()
                  for n, arr in names.items()
                  if n.startswith("classifier.") and n != "classifier.input_shape"}
        model = ToyClassifier(n_mels=f, n_frames=n_frames, n_classes=k,
                              hidden=h, time_dim=e, params=params)
    else:
        raise ValueError("checkpoint contains neither denoiser nor classifier tensors")
    model.train_steps = state.train_step
    adam = Adam()
    adam.t = state.train_step
    adam.m = {n.removeprefix("adam.m."): arr.copy()
              for n, arr in names.items() if n.startswith("adam.m.")}
    adam.v = {n.removeprefix("adam.v."): arr.copy()
              for n, arr in names.items() if n.startswith("adam.v.")}
    return model, adam
