"""Fused conditioning signal: merge, temporal upsampling, null tokens.

A conditioning bundle pairs one global embedding f (speaker-like, width
D_f) with a sequence of per-frame embeddings m (N x D_m).  The fused
matrix replicates f across all N frames and concatenates it to m,
giving N x (D_m + D_f); frame columns come first, the global block
last.  Conditioning frames run at a quarter of the mel frame rate, so
two x2 upsampling stages align them before injection into the denoiser.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConditioningBundle:
    global_embed: np.ndarray   # (D_f,)
    frame_embeds: np.ndarray   # (N, D_m)
    fused: np.ndarray          # (N, D_m + D_f)
    is_null: bool = False

    def __post_init__(self):
        for arr in (self.global_embed, self.frame_embeds, self.fused):
            arr.setflags(write=False)

    @property
    def n_frames(self) -> int:
        return self.frame_embeds.shape[0]

    @property
    def d_f(self) -> int:
        return self.global_embed.shape[0]

    @property
    def d_m(self) -> int:
        return self.frame_embeds.shape[1]


def merge_embeddings(f: np.ndarray, m: np.ndarray,
                     is_null: bool = False) -> ConditioningBundle:
    """Replicate f over the N frames of m and concatenate: [m | f]."""
    f = np.asarray(f)
    m = np.asarray(m)
    if f.ndim != 1 or f.size == 0:
        raise ValueError(f"global embedding must be a nonempty vector, got shape {f.shape}")
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] == 0:
        raise ValueError(f"frame embeddings must be a nonempty N x D_m matrix, got shape {m.shape}")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(m))):
        raise ValueError("embeddings must be finite")
    tiled = np.broadcast_to(f, (m.shape[0], f.shape[0]))
    fused = np.concatenate([m, tiled], axis=1)
    return ConditioningBundle(global_embed=f.copy(), frame_embeds=m.copy(),
                              fused=fused, is_null=is_null)


def temporal_upsample(v: np.ndarray) -> np.ndarray:
    """Two x2 repetition stages: each of the N rows appears 4 times."""
    v = np.asarray(v)
    if v.ndim != 2 or v.shape[0] < 1:
        raise ValueError(f"expected a nonempty N x D matrix, got shape {v.shape}")
    return np.repeat(np.repeat(v, 2, axis=0), 2, axis=0)


def _transposed_conv_x2(v: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # kernel (2, D, D): out[2i + j] = v[i] @ kernel[j]
    if kernel.shape != (2, v.shape[1], v.shape[1]):
        raise ValueError(f"kernel shape {kernel.shape} incompatible with input width {v.shape[1]}")
    out = np.empty((2 * v.shape[0], v.shape[1]), dtype=np.result_type(v, kernel))
    out[0::2] = v @ kernel[0]
    out[1::2] = v @ kernel[1]
    return out


def temporal_upsample_learned(v: np.ndarray, kernel1: np.ndarray,
                              kernel2: np.ndarray) -> np.ndarray:
    """Two stride-2 transposed-convolution stages (kernel length 2)."""
    v = np.asarray(v)
    if v.ndim != 2 or v.shape[0] < 1:
        raise ValueError(f"expected a nonempty N x D matrix, got shape {v.shape}")
    return _transposed_conv_x2(_transposed_conv_x2(v, kernel1), kernel2)


def make_duplication_kernels(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Identity-initialized kernels; learned mode then equals repetition."""
    k = np.stack([np.eye(d), np.eye(d)])
    return k, k.copy()


def null_condition(d_f: int, d_m: int, n_frames: int, seed: int,
                   dtype=np.float64) -> ConditioningBundle:
    """Fixed standard-normal null tokens; the same seed always yields the
    same bundle, so persisted tokens can be regenerated bit-exactly."""
    if d_f < 1 or d_m < 1 or n_frames < 1:
        raise ValueError("null-token dimensions must be positive")
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(d_f).astype(dtype)
    m = rng.standard_normal((n_frames, d_m)).astype(dtype)
    return merge_embeddings(f, m, is_null=True)
