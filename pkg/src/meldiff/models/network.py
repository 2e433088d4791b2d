"""Small trainable denoiser and noised-input classifier, numpy only.

Both networks are residual MLPs over mel frames with hand-written
backpropagation; every gradient is validated against central finite
differences in the test suite.  tanh activations keep the functions
smooth so those checks hold at tight tolerance.

The denoiser mirrors the role split of a full diffusion backbone at
desk scale: per-frame input projection, a stack of residual blocks that
each receive the projected diffusion-time embedding and the projected
(temporally upsampled) conditioning rows, and an output projection
back to mel bins.  The output projection starts at zero so the initial
noise prediction is zero.

The classifier consumes the noised mel plus the same sinusoidal time
embedding and produces class log-probabilities; its gradient with
respect to the input drives classifier guidance.
"""

from __future__ import annotations

import numpy as np

from ..conditioning import ConditioningBundle, null_condition, temporal_upsample

UPSAMPLE_FACTOR = 4


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal step encoding.

    Component 2k is sin(t / 10000^(2k/dim)) and component 2k+1 the
    matching cos.  ``t`` may be a scalar step or an integer array; the
    embedding axis is appended last.
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding width must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 1):
        raise ValueError("step index must be >= 1")
    k = np.arange(dim // 2, dtype=np.float64)
    phase = t[..., None] / (10000.0 ** (2.0 * k / dim))
    emb = np.empty(t.shape + (dim,), dtype=np.float64)
    emb[..., 0::2] = np.sin(phase)
    emb[..., 1::2] = np.cos(phase)
    return emb


def _init_params(layout, seed, dtype):
    """layout: name -> (shape, fan_in or None for zero init)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, (shape, fan_in) in layout.items():
        if fan_in is None:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)
    return params


def _as_batched_frames(x, n_mels):
    """(F, N) or (B, F, N) -> (B, N, F) plus a squeeze flag."""
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != n_mels:
        raise ValueError(f"expected (F={n_mels}, N) mel tensors, got shape {x.shape}")
    return np.swapaxes(x, 1, 2), squeeze


class ToyDenoiser:
    """Residual per-frame denoiser with conditioning and time injection."""

    def __init__(self, n_mels: int, d_f: int, d_m: int, cond_frames: int,
                 hidden: int = 64, blocks: int = 3, time_dim: int = 128,
                 seed: int = 0, null_seed: int = 0, dtype=np.float32,
                 learned_upsample: bool = False,
                 params: dict[str, np.ndarray] | None = None):
        self.n_mels = n_mels
        self.d_f = d_f
        self.d_m = d_m
        self.d_cond = d_f + d_m
        self.cond_frames = cond_frames
        self.hidden = hidden
        self.blocks = blocks
        self.time_dim = time_dim
        self.null_seed = null_seed
        self.dtype = np.dtype(dtype)
        self.train_steps = 0
        if params is None:
            params = _init_params(self._layout(), seed, self.dtype)
            if learned_upsample:
                # identity (duplication) init: starts equal to repetition
                eye = np.stack([np.eye(self.d_cond), np.eye(self.d_cond)])
                params["upsample.k1"] = eye.astype(self.dtype)
                params["upsample.k2"] = eye.astype(self.dtype).copy()
        self.params = params
        self.null = null_condition(d_f, d_m, cond_frames, null_seed,
                                   dtype=self.dtype)

    def _layout(self):
        f, h, e, d = self.n_mels, self.hidden, self.time_dim, self.d_cond
        layout = {
            "in.W": ((f, h), f), "in.b": ((h,), None),
            "time.W": ((e, h), e), "time.b": ((h,), None),
            "cond.W": ((d, h), d), "cond.b": ((h,), None),
        }
        for i in range(self.blocks):
            layout[f"block{i}.W1"] = ((h, h), h)
            layout[f"block{i}.b1"] = ((h,), None)
            layout[f"block{i}.W2"] = ((h, h), h)
            layout[f"block{i}.b2"] = ((h,), None)
        layout["out.W"] = ((h, f), None)   # zero init: eps-hat starts at 0
        layout["out.b"] = ((f,), None)
        return layout

    @staticmethod
    def _tconv_x2(v, kernel):
        # stride-2 length-2 transposed convolution along the frame axis
        out = np.empty(v.shape[:-2] + (2 * v.shape[-2], v.shape[-1]),
                       dtype=np.result_type(v, kernel))
        out[..., 0::2, :] = v @ kernel[0]
        out[..., 1::2, :] = v @ kernel[1]
        return out

    def null_fused(self, cond_frames: int) -> np.ndarray:
        """Null-token rows for an arbitrary frame count.  Rows are a
        prefix-stable function of the null seed, so longer inputs extend
        the persisted tokens rather than redrawing them."""
        if cond_frames == self.cond_frames:
            return self.null.fused
        return null_condition(self.d_f, self.d_m, cond_frames, self.null_seed,
                              dtype=self.dtype).fused

    def _fused_rows(self, cond, n_frames):
        """Returns (vup, stage_cache); stage_cache is None in repetition
        mode, else (fused, stage1) for the kernel backward."""
        if n_frames % UPSAMPLE_FACTOR != 0:
            raise ValueError(
                f"mel frame count {n_frames} is not a multiple of {UPSAMPLE_FACTOR}")
        need = n_frames // UPSAMPLE_FACTOR
        if cond is None:
            fused = self.null_fused(need)
        elif isinstance(cond, ConditioningBundle):
            fused = cond.fused
        else:
            fused = np.asarray(cond)
        if fused.shape[-2] != need or fused.shape[-1] != self.d_cond:
            raise ValueError(
                f"conditioning shape {fused.shape} incompatible: need "
                f"({need}, {self.d_cond}) rows for {n_frames} mel frames")
        if "upsample.k1" in self.params:
            stage1 = self._tconv_x2(fused, self.params["upsample.k1"])
            return self._tconv_x2(stage1, self.params["upsample.k2"]), \
                (fused, stage1)
        if fused.ndim == 2:
            return temporal_upsample(fused), None
        return np.repeat(np.repeat(fused, 2, axis=1), 2, axis=1), None

    def forward(self, x, t, cond=None, record: bool = False):
        p = self.params
        xb, squeeze = _as_batched_frames(x, self.n_mels)
        b, n_frames, _ = xb.shape
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (b,))
        temb = time_embedding(t_arr, self.time_dim).astype(xb.dtype, copy=False)
        tproj = (temb @ p["time.W"] + p["time.b"])[:, None, :]
        vup, stage_cache = self._fused_rows(cond, n_frames)
        cproj = vup @ p["cond.W"] + p["cond.b"]
        if cproj.ndim == 2:
            cproj = cproj[None]
        inject = tproj + cproj

        h = np.tanh(xb @ p["in.W"] + p["in.b"])
        cache = {"xb": xb, "temb": temb, "vup": vup, "stages": stage_cache,
                 "h0": h, "blocks": [], "squeeze": squeeze} if record else None
        for i in range(self.blocks):
            g = np.tanh(h @ p[f"block{i}.W1"] + p[f"block{i}.b1"] + inject)
            h_next = h + g @ p[f"block{i}.W2"] + p[f"block{i}.b2"]
            if record:
                cache["blocks"].append((h, g))
            h = h_next
        if record:
            cache["h_last"] = h
        out = h @ p["out.W"] + p["out.b"]
        eps = np.swapaxes(out, 1, 2)
        if squeeze:
            eps = eps[0]
        return (eps, cache) if record else eps

    def predict_eps(self, x_t, t, cond=None) -> np.ndarray:
        return self.forward(x_t, t, cond=cond, record=False)

    def backward(self, cache, d_eps) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss wrt every parameter, given the
        upstream gradient wrt the predicted eps."""
        if cache is None:
            raise ValueError("backward requires a forward pass recorded with record=True")
        p = self.params
        d_eps = np.asarray(d_eps)
        if cache["squeeze"]:
            d_eps = d_eps[None]
        d_out = np.swapaxes(d_eps, 1, 2)        # (B, N, F)
        h_last = cache["h_last"]

        def flat(a):
            return a.reshape(-1, a.shape[-1])

        grads = {}
        grads["out.W"] = flat(h_last).T @ flat(d_out)
        grads["out.b"] = d_out.sum(axis=(0, 1))
        dh = d_out @ p["out.W"].T
        d_inject = np.zeros_like(dh)
        for i in reversed(range(self.blocks)):
            h_in, g = cache["blocks"][i]
            grads[f"block{i}.W2"] = flat(g).T @ flat(dh)
            grads[f"block{i}.b2"] = dh.sum(axis=(0, 1))
            du = (dh @ p[f"block{i}.W2"].T) * (1.0 - g * g)
            grads[f"block{i}.W1"] = flat(h_in).T @ flat(du)
            grads[f"block{i}.b1"] = du.sum(axis=(0, 1))
            d_inject += du
            dh = dh + du @ p[f"block{i}.W1"].T
        dz0 = dh * (1.0 - cache["h0"] * cache["h0"])
        grads["in.W"] = flat(cache["xb"]).T @ flat(dz0)
        grads["in.b"] = dz0.sum(axis=(0, 1))

        dtproj = d_inject.sum(axis=1)           # (B, H)
        grads["time.W"] = cache["temb"].T @ dtproj
        grads["time.b"] = dtproj.sum(axis=0)
        vup = cache["vup"]
        if vup.ndim == 2:
            dc = d_inject.sum(axis=0)
            grads["cond.W"] = vup.T @ dc
            grads["cond.b"] = dc.sum(axis=0)
            d_vup = dc @ p["cond.W"].T
        else:
            grads["cond.W"] = flat(vup).T @ flat(d_inject)
            grads["cond.b"] = d_inject.sum(axis=(0, 1))
            d_vup = d_inject @ p["cond.W"].T
        if cache["stages"] is not None:
            fused, stage1 = cache["stages"]
            k2 = p["upsample.k2"]
            grads["upsample.k2"] = np.stack([
                flat(stage1).T @ flat(d_vup[..., j::2, :]) for j in (0, 1)])
            d_stage1 = (d_vup[..., 0::2, :] @ k2[0].T
                        + d_vup[..., 1::2, :] @ k2[1].T)
            grads["upsample.k1"] = np.stack([
                flat(fused).T @ flat(d_stage1[..., j::2, :]) for j in (0, 1)])
        return grads


class ToyClassifier:
    """Two-hidden-layer classifier over (noised mel, time embedding)."""

    def __init__(self, n_mels: int, n_frames: int, n_classes: int,
                 hidden: int = 64, time_dim: int = 128, seed: int = 0,
                 dtype=np.float32, params: dict[str, np.ndarray] | None = None):
        self.n_mels = n_mels
        self.n_frames = n_frames
        self.n_classes = n_classes
        self.hidden = hidden
        self.time_dim = time_dim
        self.dtype = np.dtype(dtype)
        self.train_steps = 0      # 0 marks an untrained (uniform) classifier
        if params is None:
            d_in = n_mels * n_frames
            layout = {
                "in.W": ((d_in, hidden), d_in), "in.b": ((hidden,), None),
                "time.W": ((time_dim, hidden), time_dim), "time.b": ((hidden,), None),
                "h.W": ((hidden, hidden), hidden), "h.b": ((hidden,), None),
                "out.W": ((hidden, n_classes), None),   # zero init: uniform posterior
                "out.b": ((n_classes,), None),
            }
            params = _init_params(layout, seed, self.dtype)
        self.params = params

    def check_label(self, label: int) -> int:
        label = int(label)
        if not 0 <= label < self.n_classes:
            raise ValueError(f"label {label} outside 0..{self.n_classes - 1}")
        return label

    def _forward(self, x, t):
        p = self.params
        xb, squeeze = _as_batched_frames(x, self.n_mels)
        b, n_frames, _ = xb.shape
        if n_frames != self.n_frames:
            raise ValueError(f"expected {self.n_frames} frames, got {n_frames}")
        xf = xb.reshape(b, -1)    # frame-major flattening
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (b,))
        temb = time_embedding(t_arr, self.time_dim).astype(xf.dtype, copy=False)
        z1 = np.tanh(xf @ p["in.W"] + p["in.b"] + temb @ p["time.W"] + p["time.b"])
        z2 = np.tanh(z1 @ p["h.W"] + p["h.b"])
        logits = z2 @ p["out.W"] + p["out.b"]
        shift = logits - logits.max(axis=1, keepdims=True)
        log_probs = shift - np.log(np.exp(shift).sum(axis=1, keepdims=True))
        return {"xf": xf, "temb": temb, "z1": z1, "z2": z2,
                "log_probs": log_probs, "squeeze": squeeze, "batch": b}

    def log_probs(self, x, t) -> np.ndarray:
        fwd = self._forward(x, t)
        lp = fwd["log_probs"]
        return lp[0] if fwd["squeeze"] else lp

    def _backward_dlogits(self, fwd, d_logits, want_input_grad, want_param_grads):
        p = self.params
        dz2 = d_logits @ p["out.W"].T * (1.0 - fwd["z2"] * fwd["z2"])
        dz1 = dz2 @ p["h.W"].T * (1.0 - fwd["z1"] * fwd["z1"])
        out = {}
        if want_param_grads:
            out["grads"] = {
                "out.W": fwd["z2"].T @ d_logits, "out.b": d_logits.sum(axis=0),
                "h.W": fwd["z1"].T @ dz2, "h.b": dz2.sum(axis=0),
                "in.W": fwd["xf"].T @ dz1, "in.b": dz1.sum(axis=0),
                "time.W": fwd["temb"].T @ dz1, "time.b": dz1.sum(axis=0),
            }
        if want_input_grad:
            dxf = dz1 @ p["in.W"].T
            b = fwd["batch"]
            dx = np.swapaxes(dxf.reshape(b, self.n_frames, self.n_mels), 1, 2)
            out["dx"] = dx[0] if fwd["squeeze"] else dx
        return out

    def log_prob_and_grad(self, x_t, t, label):
        """Log-probability of ``label`` and its gradient wrt the input."""
        label = self.check_label(label)
        fwd = self._forward(x_t, t)
        probs = np.exp(fwd["log_probs"])
        d_logits = -probs
        d_logits[:, label] += 1.0     # d log p_label / d logits = e_label - p
        back = self._backward_dlogits(fwd, d_logits, True, False)
        logp = fwd["log_probs"][:, label]
        if fwd["squeeze"]:
            return float(logp[0]), back["dx"]
        return logp, back["dx"]

    def loss_and_grads(self, x, t, labels):
        """Mean cross-entropy over a batch plus parameter gradients."""
        fwd = self._forward(x, t)
        labels = np.asarray(labels, dtype=np.int64)
        b = fwd["batch"]
        probs = np.exp(fwd["log_probs"])
        d_logits = probs.copy()
        d_logits[np.arange(b), labels] -= 1.0
        d_logits /= b
        back = self._backward_dlogits(fwd, d_logits, False, True)
        loss = -float(fwd["log_probs"][np.arange(b), labels].mean())
        return loss, back["grads"]

    def accuracy(self, x, t, labels) -> float:
        fwd = self._forward(x, t)
        pred = fwd["log_probs"].argmax(axis=1)
        return float((pred == np.asarray(labels)).mean())
