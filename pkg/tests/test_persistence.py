"""File formats: size arithmetic, bitwise round-trips, corruption
errors, committed golden bytes, and the strict config parser."""

import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meldiff.persistence import (BadMagicError, CheckpointState, ConfigError,
                                 EngineConfig, FormatError,
                                 TruncatedPayloadError, VersionError,
                                 parse_config_text, read_checkpoint, read_mel,
                                 read_stats, write_checkpoint, write_config,
                                 write_mel, write_stats)

GOLDEN = Path(__file__).parent / "golden"


# -------------------------------------------------------------------- mel


def test_mel_size_arithmetic(tmp_path):
    path = tmp_path / "one.melb"
    write_mel(np.array([[0.5]], dtype=np.float32), path)
    assert path.stat().st_size == 16 + 4     # header + one f32


def test_mel_round_trip_bitwise(tmp_path, rng):
    m = rng.standard_normal((80, 100)).astype(np.float32)
    path = tmp_path / "m.melb"
    write_mel(m, path)
    back = read_mel(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, m)


def test_mel_frame_major_layout(tmp_path):
    # payload is frame-major: frame 0's mel column comes first
    m = np.array([[1.0, 3.0], [2.0, 4.0]], dtype=np.float32)
    path = tmp_path / "m.melb"
    write_mel(m, path)
    payload = path.read_bytes()[16:]
    assert struct.unpack("<4f", payload) == (1.0, 2.0, 3.0, 4.0)


def test_mel_truncated_payload(tmp_path):
    path = tmp_path / "m.melb"
    write_mel(np.ones((4, 4), dtype=np.float32), path)
    data = path.read_bytes()
    path.write_bytes(data[:-1])
    with pytest.raises(TruncatedPayloadError):
        read_mel(path)


def test_mel_bad_magic(tmp_path):
    path = tmp_path / "m.melb"
    write_mel(np.ones((2, 2), dtype=np.float32), path)
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(BadMagicError):
        read_mel(path)


def test_mel_version_mismatch(tmp_path):
    path = tmp_path / "m.melb"
    write_mel(np.ones((2, 2), dtype=np.float32), path)
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 2)
    path.write_bytes(bytes(data))
    with pytest.raises(VersionError):
        read_mel(path)


def test_mel_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "m.melb"
    write_mel(np.ones((2, 2), dtype=np.float32), path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(TruncatedPayloadError):
        read_mel(path)


@settings(max_examples=25, deadline=None)
@given(n_mels=st.integers(1, 12), n_frames=st.integers(1, 12),
       seed=st.integers(0, 2**31))
def test_mel_round_trip_property(tmp_path_factory, n_mels, n_frames, seed):
    m = (np.random.default_rng(seed)
         .standard_normal((n_mels, n_frames)).astype(np.float32))
    path = tmp_path_factory.mktemp("mel") / "p.melb"
    write_mel(m, path)
    assert np.array_equal(read_mel(path), m)


# -------------------------------------------------------------- checkpoints


def sample_state(tensors):
    return CheckpointState(T=4, beta1=0.1, betaT=0.2, stats_min=-11.5129,
                           stats_max=0.0, null_d_f=2, null_d_m=3,
                           null_frames=1, null_seed=9, train_step=7,
                           tensors=tensors)


def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {
        "null.f": rng.standard_normal(2).astype(np.float32),
        "null.m": rng.standard_normal((1, 3)).astype(np.float32),
        "denoiser.in.W": rng.standard_normal((4, 6)).astype(np.float32),
        "adam.m.in.W": rng.standard_normal((4, 6)).astype(np.float32),
    }
    path = tmp_path / "c.ckpt"
    write_checkpoint(sample_state(tensors), path)
    back = read_checkpoint(path)
    assert back.T == 4 and back.train_step == 7 and back.null_seed == 9
    assert back.beta1 == 0.1 and back.stats_max == 0.0
    assert set(back.tensors) == set(tensors)
    for name, arr in tensors.items():
        assert np.array_equal(back.tensors[name], arr), name


def test_checkpoint_empty_tensor_table(tmp_path):
    path = tmp_path / "e.ckpt"
    write_checkpoint(sample_state({}), path)
    back = read_checkpoint(path)
    assert back.tensors == {}


def test_checkpoint_duplicate_name_rejected_before_write(tmp_path):
    path = tmp_path / "d.ckpt"
    dupe = [("w", np.ones(1, np.float32)), ("w", np.zeros(1, np.float32))]
    with pytest.raises(ValueError, match="duplicate"):
        write_checkpoint(sample_state(dupe), path)
    assert not path.exists()


def test_checkpoint_duplicate_name_on_read(tmp_path):
    path = tmp_path / "d.ckpt"
    write_checkpoint(sample_state([("w", np.ones(1, np.float32))]), path)
    data = path.read_bytes()
    # graft a second copy of the tensor record and bump the count
    record_start = data.index(b"w", 60) - 4
    grafted = data[:record_start] + data[record_start:] + data[record_start:]
    grafted = (grafted[:57] + struct.pack("<I", 2) + grafted[61:])
    path.write_bytes(grafted)
    with pytest.raises(FormatError, match="duplicate"):
        read_checkpoint(path)


def test_checkpoint_truncation(tmp_path):
    path = tmp_path / "t.ckpt"
    write_checkpoint(sample_state({"w": np.ones((2, 2), np.float32)}), path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(TruncatedPayloadError):
        read_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "b.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 60)
    with pytest.raises(BadMagicError):
        read_checkpoint(path)


# ------------------------------------------------------------------- golden


def test_golden_mel_bytes_stable(tmp_path):
    mel = np.array([[0.5, -1.0, 0.25],
                    [2.0, 3.5, -0.125]], dtype=np.float32)
    fresh = tmp_path / "fresh.melb"
    write_mel(mel, fresh)
    assert fresh.read_bytes() == (GOLDEN / "golden.melb").read_bytes()
    back = read_mel(GOLDEN / "golden.melb")
    assert np.array_equal(back, mel)


def test_golden_checkpoint_bytes_stable(tmp_path):
    state = CheckpointState(
        T=4, beta1=0.1, betaT=0.2,
        stats_min=-11.512925464970229, stats_max=0.0,
        null_d_f=2, null_d_m=3, null_frames=1, null_seed=9, train_step=7,
        tensors={
            "null.f": np.array([0.5, -0.25], dtype=np.float32),
            "null.m": np.array([[1.0, 2.0, -3.0]], dtype=np.float32),
            "denoiser.in.W": np.array([[0.125, -0.5], [1.5, 0.0625]],
                                      dtype=np.float32),
        })
    fresh = tmp_path / "fresh.ckpt"
    write_checkpoint(state, fresh)
    assert fresh.read_bytes() == (GOLDEN / "golden.ckpt").read_bytes()
    back = read_checkpoint(GOLDEN / "golden.ckpt")
    assert back.train_step == 7
    assert np.array_equal(back.tensors["denoiser.in.W"],
                          state.tensors["denoiser.in.W"])


# -------------------------------------------------------------------- stats


def test_stats_round_trip(tmp_path):
    path = tmp_path / "s.txt"
    write_stats(-11.512925464970229, 1.75, path)
    lo, hi = read_stats(path)
    assert lo == -11.512925464970229 and hi == 1.75


def test_stats_malformed(tmp_path):
    path = tmp_path / "s.txt"
    path.write_text("1.0\n")
    with pytest.raises(FormatError):
        read_stats(path)


# ------------------------------------------------------------------- config


def test_config_defaults_match_operating_point():
    cfg = EngineConfig()
    assert (cfg.T, cfg.beta1, cfg.betaT) == (400, 1e-4, 0.02)
    assert (cfg.w1, cfg.w2, cfg.t_start) == (2.0, 1.5, 270)
    assert (cfg.win_length, cfg.hop_length, cfg.n_mels) == (640, 160, 80)
    assert (cfg.fmin, cfg.fmax) == (20.0, 8000.0)
    assert cfg.dropout_p == 0.2 and cfg.learning_rate == 2e-4
    assert cfg.loss == "l1" and cfg.batch_size == 16


def test_config_parse_and_defaults():
    cfg = parse_config_text("""
# comment line
T = 50
w2 = 0.7
normalize = false
mel_scale = slaney
""")
    assert cfg.T == 50 and cfg.w2 == 0.7
    assert cfg.normalize is False and cfg.mel_scale == "slaney"
    assert cfg.beta1 == 1e-4      # untouched default


@pytest.mark.parametrize("text, fragment", [
    ("bogus_key = 1", "line 1: unknown key"),
    ("T = 10\nT = 20", "line 2: duplicate key"),
    ("T = ten", "line 1: cannot parse"),
    ("just some words", "line 1: expected"),
    ("T =", "line 1: empty value"),
    ("normalize = maybe", "line 1: cannot parse"),
])
def test_config_errors_name_lines(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config_text(text)


def test_config_write_read_round_trip(tmp_path):
    cfg = EngineConfig(T=123, w1=-1.0, normalize=False, mel_scale="slaney")
    path = tmp_path / "c.cfg"
    write_config(cfg, path)
    from meldiff.persistence import load_config
    assert load_config(path) == cfg
