"""End-to-end operator flows through main(): exit codes, file outputs,
byte determinism, the sweep report, and the verify negative control."""

import math

import numpy as np
import pytest

from meldiff import audiodsp, persistence
from meldiff.cli import main


def run(args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def wav_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("wavs")
    sr = 16000
    t = np.arange(sr) / sr
    for i, f0 in enumerate((220.0, 330.0)):
        x = np.sin(2 * np.pi * f0 * t) * (0.5 + 0.4 * np.sin(2 * np.pi * 2 * t))
        audiodsp.save_wav(audiodsp.AudioSignal(0.8 * x), d / f"tone{i}.wav")
    return d


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Small denoiser + classifier checkpoints shared by CLI tests."""
    d = tmp_path_factory.mktemp("ckpts")
    den, clf = d / "den.ckpt", d / "clf.ckpt"
    assert run(["train", "--steps", 60, "--seed", 5, "--out", den]) == 0
    assert run(["train", "--model", "classifier", "--steps", 60, "--seed", 6,
                "--out", clf]) == 0
    return den, clf


def test_stats_then_preprocess(tmp_path, wav_dir):
    stats = tmp_path / "stats.txt"
    assert run(["stats", "--wav-dir", wav_dir, "--out", stats]) == 0
    lo, hi = persistence.read_stats(stats)
    assert lo < hi
    mel = tmp_path / "tone.melb"
    assert run(["preprocess", "--wav", wav_dir / "tone0.wav",
                "--stats", stats, "--out", mel]) == 0
    m = persistence.read_mel(mel)
    assert m.shape == (80, 97)
    assert m.min() >= -1.0 - 1e-6 and m.max() <= 1.0 + 1e-6


def test_stats_empty_dir(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run(["stats", "--wav-dir", empty, "--out", tmp_path / "s.txt"]) == 2


def test_preprocess_missing_wav(tmp_path, wav_dir):
    stats = tmp_path / "stats.txt"
    run(["stats", "--wav-dir", wav_dir, "--out", stats])
    assert run(["preprocess", "--wav", tmp_path / "nope.wav",
                "--stats", stats, "--out", tmp_path / "o.melb"]) == 3


def test_sample_deterministic_bytes(tmp_path, trained):
    den, _ = trained
    outs = []
    for name in ("a.melb", "b.melb"):
        out = tmp_path / name
        assert run(["sample", "--checkpoint", den, "--shape", "16x16",
                    "--seed", 9, "--out", out]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    other = tmp_path / "c.melb"
    assert run(["sample", "--checkpoint", den, "--shape", "16x16",
                "--seed", 10, "--out", other]) == 0
    assert other.read_bytes() != outs[0]


def test_sample_trace_format(tmp_path, trained):
    den, clf = trained
    trace = tmp_path / "t.trace"
    assert run(["sample", "--checkpoint", den, "--classifier", clf,
                "--label", 1, "--shape", "16x16", "--seed", 2,
                "--trace", trace, "--out", tmp_path / "s.melb"]) == 0
    lines = trace.read_text().splitlines()
    assert lines[0].startswith("#")
    rows = [line.split() for line in lines[1:]]
    assert len(rows) == 400
    assert [int(r[0]) for r in rows] == list(range(400, 0, -1))
    for t, gamma, eps_norm, gate in rows:
        assert math.isfinite(float(gamma)) and math.isfinite(float(eps_norm))
        assert gate in ("0", "1")
        assert (gate == "1") == (int(t) <= 270)


def test_sample_conditional_input(tmp_path, trained):
    den, _ = trained
    assert run(["sample", "--checkpoint", den, "--shape", "16x16", "--seed", 3,
                "--cond-index", 0, "--out", tmp_path / "cond.melb"]) == 0


def test_sample_flag_validation(tmp_path, trained):
    den, clf = trained
    assert run(["sample", "--checkpoint", den, "--shape", "16x16",
                "--label", 1, "--seed", 0, "--out", tmp_path / "x.melb"]) == 2
    assert run(["sample", "--checkpoint", den, "--shape", "banana",
                "--seed", 0, "--out", tmp_path / "x.melb"]) == 2
    assert run(["sample", "--checkpoint", clf, "--shape", "16x16",
                "--seed", 0, "--out", tmp_path / "x.melb"]) == 2


def test_sample_alt_update_mode_aborts_cleanly(tmp_path, trained):
    # the alternative coefficients compound 1/sqrt(abar) per step and
    # overflow float32 on the full 400-step schedule; the run must fail
    # as a numerical failure, not crash
    den, _ = trained
    code = run(["sample", "--checkpoint", den, "--shape", "16x16", "--seed", 1,
                "--alt-update", "--out", tmp_path / "sp.melb"])
    assert code == 1
    assert not (tmp_path / "sp.melb").exists()


def test_griffinlim_roundtrip(tmp_path, wav_dir, trained):
    den, _ = trained
    stats = tmp_path / "stats.txt"
    run(["stats", "--wav-dir", wav_dir, "--out", stats])
    mel = tmp_path / "g.melb"
    run(["preprocess", "--wav", wav_dir / "tone0.wav", "--stats", stats,
         "--out", mel])
    wav = tmp_path / "rec.wav"
    assert run(["griffinlim", "--mel", mel, "--stats", stats, "--out", wav,
                "--iterations", 8, "--seed", 0]) == 0
    sig = audiodsp.load_wav(wav)
    assert len(sig.samples) > 15000
    assert np.max(np.abs(sig.samples)) > 0.1


def test_train_resume_cli(tmp_path):
    full = tmp_path / "full.ckpt"
    half = tmp_path / "half.ckpt"
    assert run(["train", "--steps", 20, "--seed", 3, "--out", full]) == 0
    assert run(["train", "--steps", 10, "--seed", 3, "--out", half]) == 0
    resumed = tmp_path / "resumed.ckpt"
    assert run(["train", "--steps", 20, "--seed", 3, "--resume", half,
                "--out", resumed]) == 0
    # resumed file only differs from the unbroken run in nothing at all
    assert resumed.read_bytes() == full.read_bytes()


def test_sweep_report(tmp_path, trained):
    den, clf = trained
    out = tmp_path / "sweep"
    assert run(["sweep", "--checkpoint", den, "--classifier", clf,
                "--axis", "w2", "--values", "0,1.5", "--samples-per-value", 4,
                "--seed", 0, "--out-dir", out]) == 0
    rows = [line.split() for line in
            (out / "summary.txt").read_text().splitlines()
            if not line.startswith("#")]
    assert [float(r[0]) for r in rows] == [0.0, 1.5]
    for row in rows:
        assert 0.0 <= float(row[1]) <= 1.0
        assert row[3] == "0"      # no cell failures
    assert len(list(out.glob("*.melb"))) == 8
    assert len(list(out.glob("*.trace"))) == 8


def test_sweep_w1_axis_allows_minus_one(tmp_path, trained, capsys):
    den, clf = trained
    out = tmp_path / "sweep_w1"
    assert run(["sweep", "--checkpoint", den, "--classifier", clf,
                "--axis", "w1", "--values=-1,2", "--samples-per-value", 2,
                "--seed", 1, "--jobs", 2, "--out-dir", out]) == 0
    captured = capsys.readouterr().out
    assert "(unconditional-only)" in captured


def test_sweep_empty_values_rejected(tmp_path, trained):
    den, clf = trained
    assert run(["sweep", "--checkpoint", den, "--classifier", clf,
                "--axis", "w2", "--values", ",", "--samples-per-value", 2,
                "--seed", 0, "--out-dir", tmp_path / "x"]) == 2


def test_verify_corrupt_negative_control(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MELDIFF_VERIFY_CORRUPT", "schedule")
    assert run(["verify"]) == 1
    out = capsys.readouterr().out
    assert "FAIL sampling-moments" in out
    assert "mean[" in out or "var[" in out


def test_verify_report_is_byte_stable(capsys):
    reports = []
    for _ in range(2):
        assert run(["verify"]) == 0
        reports.append(capsys.readouterr().out)
    assert reports[0] == reports[1]
    assert reports[0].count("ok  ") == 6


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
