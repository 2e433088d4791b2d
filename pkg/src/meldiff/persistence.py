"""Bit-exact file formats: mel tensors, checkpoints, text config.

All binary fields are little-endian regardless of platform; golden
files in the test suite guard the layouts against drift.  Writes go to
a temporary file in the target directory followed by an atomic rename,
so readers never observe partial files.

Mel file (.melb):  "MELB" | version u32 | n_mels u32 | n_frames u32 |
n_frames * n_mels float32, frame-major (frames can be appended without
rewriting).

Checkpoint (.ckpt): "CKPT" | version u32 | metadata | tensor table.
Metadata: T u32, beta1 f64, betaT f64, stats_min f64, stats_max f64,
null d_f u32, null d_m u32, null frames u32, null seed u64, train step
u64.  Tensor table: count u32, then per tensor: name length u32, name
bytes (utf-8), rank u32, dims u32 each, float32 payload.  Every
checkpoint carries the null-token tensors ("null.f", "null.m").

Config: line-oriented UTF-8 "key = value"; '#' starts a comment line;
unknown and duplicate keys are rejected with the offending line number.
"""

from __future__ import annotations

import dataclasses
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

MEL_MAGIC = b"MELB"
CKPT_MAGIC = b"CKPT"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Base for malformed-file errors."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class ConfigError(ValueError):
    pass


def _atomic_write(path, payload: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"{self.what}: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def done(self) -> None:
        if self.pos != len(self.data):
            raise TruncatedPayloadError(
                f"{self.what}: {len(self.data) - self.pos} trailing bytes")


# --------------------------------------------------------------------------
# mel tensors


def write_mel(m: np.ndarray, path) -> None:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"mel tensor must be 2-D (mels, frames), got {m.shape}")
    n_mels, n_frames = m.shape
    header = MEL_MAGIC + struct.pack("<III", FORMAT_VERSION, n_mels, n_frames)
    payload = np.ascontiguousarray(m.T, dtype="<f4").tobytes()
    _atomic_write(path, header + payload)


def read_mel(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, f"mel file {path}")
    magic = r.take(4)
    if magic != MEL_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    n_mels, n_frames = r.u32(), r.u32()
    raw = r.take(4 * n_mels * n_frames)
    r.done()
    flat = np.frombuffer(raw, dtype="<f4")
    return flat.reshape(n_frames, n_mels).T.copy()


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class CheckpointState:
    T: int
    beta1: float
    betaT: float
    stats_min: float
    stats_max: float
    null_d_f: int
    null_d_m: int
    null_frames: int
    null_seed: int
    train_step: int
    tensors: dict[str, np.ndarray]


def write_checkpoint(state: CheckpointState, path) -> None:
    if isinstance(state.tensors, dict):
        items = list(state.tensors.items())
    else:
        items = list(state.tensors)
    names = [name for name, _ in items]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ValueError(f"duplicate tensor names: {sorted(dupes)}")
    parts = [CKPT_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<Idddd", state.T, state.beta1, state.betaT,
                             state.stats_min, state.stats_max))
    parts.append(struct.pack("<IIIQQ", state.null_d_f, state.null_d_m,
                             state.null_frames, state.null_seed,
                             state.train_step))
    parts.append(struct.pack("<I", len(items)))
    for name, arr in items:
        arr = np.asarray(arr)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    _atomic_write(path, b"".join(parts))


def read_checkpoint(path) -> CheckpointState:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, f"checkpoint {path}")
    magic = r.take(4)
    if magic != CKPT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    T = r.u32()
    beta1, betaT, stats_min, stats_max = (r.f64() for _ in range(4))
    null_d_f, null_d_m, null_frames = r.u32(), r.u32(), r.u32()
    null_seed, train_step = r.u64(), r.u64()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        flat = np.frombuffer(r.take(4 * count), dtype="<f4")
        tensors[name] = flat.reshape(dims).copy()
    r.done()
    return CheckpointState(T=T, beta1=beta1, betaT=betaT,
                           stats_min=stats_min, stats_max=stats_max,
                           null_d_f=null_d_f, null_d_m=null_d_m,
                           null_frames=null_frames, null_seed=null_seed,
                           train_step=train_step, tensors=tensors)


# --------------------------------------------------------------------------
# normalization stats (two-number text file)


def write_stats(global_min: float, global_max: float, path) -> None:
    _atomic_write(path, f"{global_min:.17g} {global_max:.17g}\n".encode())


def read_stats(path):
    with open(path, "r", encoding="utf-8") as fh:
        parts = fh.read().split()
    if len(parts) != 2:
        raise FormatError(f"{path}: expected two numbers, got {len(parts)} tokens")
    return float(parts[0]), float(parts[1])


# --------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class EngineConfig:
    # diffusion and guidance operating point
    T: int = 400
    beta1: float = 1e-4
    betaT: float = 0.02
    w1: float = 2.0
    w2: float = 1.5
    t_start: int = 270
    normalize: bool = True
    # mel front-end
    sample_rate: int = 16000
    win_length: int = 640
    hop_length: int = 160
    dft_length: int = 640
    n_mels: int = 80
    fmin: float = 20.0
    fmax: float = 8000.0
    clip_floor: float = 1e-5
    mel_scale: str = "htk"
    # desk-scale data and networks
    data_mels: int = 16
    data_frames: int = 16
    cond_frames: int = 4
    d_f: int = 3
    d_m: int = 5
    n_classes: int = 2
    hidden: int = 64
    blocks: int = 3
    time_dim: int = 128
    # training
    learning_rate: float = 2e-4
    batch_size: int = 16
    dropout_p: float = 0.2
    loss: str = "l1"


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(EngineConfig)}


def _coerce(key: str, raw: str, lineno: int):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"line {lineno}: cannot parse {raw!r} as {kind} for key {key!r}") from None


def parse_config_text(text: str) -> EngineConfig:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not raw:
            raise ConfigError(f"line {lineno}: empty value for key {key!r}")
        values[key] = _coerce(key, raw, lineno)
    return EngineConfig(**values)


def load_config(path) -> EngineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def write_config(cfg: EngineConfig, path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}"
             for f in dataclasses.fields(EngineConfig)]
    _atomic_write(path, ("\n".join(lines) + "\n").encode())
