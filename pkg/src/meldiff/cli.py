"""Operator surface.

Subcommands: preprocess, stats, train, sample, sweep, verify,
griffinlim.  Exit codes: 0 success, 1 invariant/check failure, 2 usage
error, 3 I/O error.  All inputs are validated before any output file is
created; the verify report on stdout is byte-stable across runs (per-
check timings go to stderr).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import audiodsp, persistence, sampler, trainer, verify
from .guidance import GuidanceConfig
from .models.network import ToyClassifier, ToyDenoiser
from .persistence import ConfigError, EngineConfig, FormatError
from .schedule import build_linear_schedule


class CheckFailure(Exception):
    """A verification or generation invariant failed (exit code 1)."""


def _load_engine_config(path) -> EngineConfig:
    if path is None:
        return EngineConfig()
    return persistence.load_config(path)


def _filterbank(cfg: EngineConfig) -> audiodsp.MelFilterbank:
    return audiodsp.build_mel_filterbank(
        n_mels=cfg.n_mels, dft_len=cfg.dft_length, sample_rate=cfg.sample_rate,
        fmin=cfg.fmin, fmax=cfg.fmax, scale=cfg.mel_scale)


def _load_stats(path) -> audiodsp.NormalizationStats:
    lo, hi = persistence.read_stats(path)
    return audiodsp.NormalizationStats(lo, hi)


def _parse_shape(text: str) -> tuple[int, int]:
    try:
        f, n = text.lower().split("x")
        shape = (int(f), int(n))
    except ValueError:
        raise ConfigError(f"--shape must look like 80x100, got {text!r}") from None
    if shape[0] < 1 or shape[1] < 1:
        raise ConfigError(f"--shape dimensions must be positive, got {text!r}")
    return shape


def _guidance_from_args(cfg: EngineConfig, args) -> GuidanceConfig:
    return GuidanceConfig(
        w1=cfg.w1 if args.w1 is None else args.w1,
        w2=cfg.w2 if args.w2 is None else args.w2,
        t_start=cfg.t_start if args.t_start is None else args.t_start,
        normalize=cfg.normalize and not args.no_guidance_norm)


# --------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args) -> int:
    cfg = _load_engine_config(args.config)
    stats = _load_stats(args.stats)
    sig = audiodsp.load_wav(args.wav)
    if sig.sample_rate != cfg.sample_rate:
        raise ConfigError(f"{args.wav}: sample rate {sig.sample_rate} != "
                          f"configured {cfg.sample_rate}")
    sig = audiodsp.peak_normalize(sig)
    mel = audiodsp.mel_spectrogram(sig, _filterbank(cfg), stats,
                                   win=cfg.win_length, hop=cfg.hop_length,
                                   dft_len=cfg.dft_length,
                                   clip_floor=cfg.clip_floor)
    persistence.write_mel(mel, args.out)
    print(f"wrote {args.out}: {mel.shape[0]} mels x {mel.shape[1]} frames")
    return 0


def cmd_stats(args) -> int:
    cfg = _load_engine_config(args.config)
    fb = _filterbank(cfg)
    wavs = sorted(p for p in os.listdir(args.wav_dir) if p.endswith(".wav"))
    if not wavs:
        raise ConfigError(f"no .wav files in {args.wav_dir}")
    lo, hi = math.inf, -math.inf
    for name in wavs:
        sig = audiodsp.peak_normalize(audiodsp.load_wav(os.path.join(args.wav_dir, name)))
        lm = audiodsp.log_mel(sig, fb, win=cfg.win_length, hop=cfg.hop_length,
                              dft_len=cfg.dft_length, clip_floor=cfg.clip_floor)
        lo = min(lo, float(lm.min()))
        hi = max(hi, float(lm.max()))
    if not lo < hi:
        raise CheckFailure(f"degenerate stats over {len(wavs)} files: {lo} >= {hi}")
    persistence.write_stats(lo, hi, args.out)
    print(f"wrote {args.out}: min {lo:.6g} max {hi:.6g} over {len(wavs)} files")
    return 0


def _dataset_from_config(cfg: EngineConfig, kind: str, size: int, seed: int):
    return trainer.make_synthetic_dataset(
        kind, size, seed, n_mels=cfg.data_mels, n_frames=cfg.data_frames,
        cond_frames=cfg.cond_frames, d_f=cfg.d_f, d_m=cfg.d_m,
        n_classes=cfg.n_classes)


def cmd_train(args) -> int:
    cfg = _load_engine_config(args.config)
    s = build_linear_schedule(cfg.T, cfg.beta1, cfg.betaT)
    dataset = _dataset_from_config(cfg, args.dataset_kind, args.dataset_size,
                                   args.dataset_seed)
    tcfg = trainer.TrainConfig(
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
        dropout_p=cfg.dropout_p if args.dropout_p is None else args.dropout_p,
        loss_kind=cfg.loss if args.loss is None else args.loss,
        step_budget=args.steps, seed=args.seed)
    stats_min, stats_max = math.log(1e-5), 0.0
    if args.stats:
        stats_min, stats_max = persistence.read_stats(args.stats)

    start_step = 0
    adam = None
    if args.resume:
        state = persistence.read_checkpoint(args.resume)
        model, adam = trainer.unpack_checkpoint(state)
        adam.lr = tcfg.learning_rate
        start_step = state.train_step
    elif args.model == "denoiser":
        model = ToyDenoiser(n_mels=cfg.data_mels, d_f=cfg.d_f, d_m=cfg.d_m,
                            cond_frames=cfg.cond_frames, hidden=cfg.hidden,
                            blocks=cfg.blocks, time_dim=cfg.time_dim,
                            seed=args.seed, null_seed=args.seed + 1)
    else:
        model = ToyClassifier(n_mels=cfg.data_mels, n_frames=cfg.data_frames,
                              n_classes=dataset.n_classes, hidden=cfg.hidden,
                              time_dim=cfg.time_dim, seed=args.seed)

    def save(mdl, opt, step):
        state = trainer.pack_checkpoint(mdl, opt, s, cfg.beta1, cfg.betaT,
                                        step, stats_min, stats_max)
        persistence.write_checkpoint(state, args.out)

    def log(step, loss):
        print(f"step {step} loss {loss:.6f}")

    trainer.train_loop(model, dataset, s, tcfg, adam=adam,
                       start_step=start_step,
                       checkpoint_every=args.checkpoint_every,
                       checkpoint_fn=save, log_every=args.log_every,
                       log_fn=log)
    print(f"wrote {args.out} at step {tcfg.step_budget}")
    return 0


def _load_denoiser(path) -> tuple[ToyDenoiser, persistence.CheckpointState]:
    state = persistence.read_checkpoint(path)
    model, _ = trainer.unpack_checkpoint(state)
    if not isinstance(model, ToyDenoiser):
        raise ConfigError(f"{path} does not contain a denoiser")
    return model, state


def _load_classifier(path) -> ToyClassifier:
    model, _ = trainer.unpack_checkpoint(persistence.read_checkpoint(path))
    if not isinstance(model, ToyClassifier):
        raise ConfigError(f"{path} does not contain a classifier")
    if model.train_steps == 0:
        print("warning: classifier checkpoint is untrained; guidance "
              "gradients will be uninformative", file=sys.stderr)
    return model


def _resolve_cond(args, cfg: EngineConfig, model: ToyDenoiser):
    if args.cond_index is None:
        return None   # null tokens: unconditional branch
    if not 0 <= args.cond_index < args.dataset_size:
        raise ConfigError(f"--cond-index {args.cond_index} outside the "
                          f"{args.dataset_size}-sample dataset")
    dataset = _dataset_from_config(cfg, args.dataset_kind, args.dataset_size,
                                   args.dataset_seed)
    from .conditioning import merge_embeddings
    return merge_embeddings(dataset.global_embeds[args.cond_index],
                            dataset.frame_embeds[args.cond_index])


def cmd_sample(args) -> int:
    cfg = _load_engine_config(args.config)
    model, state = _load_denoiser(args.checkpoint)
    s = build_linear_schedule(state.T, state.beta1, state.betaT)
    gcfg = _guidance_from_args(cfg, args)
    classifier = _load_classifier(args.classifier) if args.classifier else None
    label = args.label
    if (classifier is None) != (label is None):
        raise ConfigError("--classifier and --label must be given together")
    shape = _parse_shape(args.shape)
    cond = _resolve_cond(args, cfg, model)
    x0, trace = sampler.sample(s, model, cond, shape, args.seed,
                               classifier=classifier, label=label, cfg=gcfg,
                               trace=args.trace is not None,
                               alt_update=args.alt_update)
    with np.errstate(over="ignore"):
        mel = x0.astype(np.float32)
    if not np.all(np.isfinite(mel)):
        raise FloatingPointError(
            "sampled mel exceeds float32 range; refusing to write it")
    persistence.write_mel(mel, args.out)
    if args.trace is not None:
        sampler.write_trace(trace, args.trace)
        print(f"wrote {args.trace}")
    print(f"wrote {args.out}: {shape[0]} mels x {shape[1]} frames, seed {args.seed}")
    return 0


def _parse_values(axis: str, text: str) -> list[float]:
    parts = [p for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("--values must be a nonempty comma-separated list")
    vals = [float(p) for p in parts]
    if axis == "t_start" and any(v != int(v) or v < 0 for v in vals):
        raise ConfigError("t_start values must be nonnegative integers")
    return vals


def _sweep_cell(s, model, classifier, dataset, gcfg, shape, label, seed,
                out_dir, tag):
    x0, trace = sampler.sample(s, model, None, shape, seed,
                               classifier=classifier, label=label, cfg=gcfg,
                               trace=True)
    persistence.write_mel(x0.astype(np.float32),
                          os.path.join(out_dir, f"{tag}.melb"))
    sampler.write_trace(trace, os.path.join(out_dir, f"{tag}.trace"))
    measured = int(dataset.nearest_centroid(x0[None])[0])
    gammas = [r.gamma for r in trace.steps if r.gate_open]
    return measured == label, (float(np.mean(gammas)) if gammas else 0.0)


def cmd_sweep(args) -> int:
    cfg = _load_engine_config(args.config)
    model, state = _load_denoiser(args.checkpoint)
    classifier = _load_classifier(args.classifier)
    s = build_linear_schedule(state.T, state.beta1, state.betaT)
    values = _parse_values(args.axis, args.values)
    dataset = _dataset_from_config(cfg, args.dataset_kind, args.dataset_size,
                                   args.dataset_seed)
    shape = (model.n_mels, cfg.data_frames)
    os.makedirs(args.out_dir, exist_ok=True)

    rows = []
    for value in values:
        over = {args.axis: int(value) if args.axis == "t_start" else value}
        gcfg = GuidanceConfig(
            w1=over.get("w1", cfg.w1), w2=over.get("w2", cfg.w2),
            t_start=over.get("t_start", cfg.t_start), normalize=cfg.normalize)
        cells = []
        for i in range(args.samples_per_value):
            label = i % dataset.n_classes
            seed = args.seed + i
            tag = f"{args.axis}_{value:g}_seed{seed}"
            cells.append((label, seed, tag))

        def run(cell):
            label, seed, tag = cell
            try:
                return _sweep_cell(s, model, classifier, dataset, gcfg, shape,
                                   label, seed, args.out_dir, tag)
            except Exception as exc:   # cell failures recorded, sweep continues
                return exc

        if args.jobs > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(run, cells))
        else:
            results = [run(c) for c in cells]
        failures = [r for r in results if isinstance(r, Exception)]
        hits = [r[0] for r in results if not isinstance(r, Exception)]
        gammas = [r[1] for r in results if not isinstance(r, Exception)]
        acc = float(np.mean(hits)) if hits else math.nan
        gmean = float(np.mean(gammas)) if gammas else math.nan
        rows.append((value, acc, gmean, len(failures)))
        unconditional = " (unconditional-only)" if args.axis == "w1" and value == -1 else ""
        print(f"{args.axis}={value:g} accuracy={acc:.3f} "
              f"gamma_mean={gmean:.4g} failures={len(failures)}{unconditional}")

    report = os.path.join(args.out_dir, "summary.txt")
    with open(report, "w", encoding="utf-8") as fh:
        fh.write(f"# axis={args.axis} samples_per_value={args.samples_per_value}\n")
        fh.write("# value accuracy gamma_mean failures\n")
        for value, acc, gmean, nfail in rows:
            fh.write(f"{value:g} {acc:.6f} {gmean:.6g} {nfail}\n")
    print(f"wrote {report}")
    return 0


def cmd_verify(args) -> int:
    # report (stdout) is byte-stable across runs; timings go to stderr
    corrupt = os.environ.get("MELDIFF_VERIFY_CORRUPT") or None
    results = []
    for check_fn in verify.ALL_CHECKS:
        t0 = time.perf_counter()
        result = check_fn(corrupt=corrupt)
        print(f"[{time.perf_counter() - t0:6.2f}s] {result.name}",
              file=sys.stderr)
        results.append(result)
    failed = [r for r in results if not r.ok]
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name}: {r.detail}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_griffinlim(args) -> int:
    cfg = _load_engine_config(args.config)
    stats = _load_stats(args.stats)
    mel = persistence.read_mel(args.mel)
    if mel.shape[0] != cfg.n_mels:
        raise ConfigError(f"{args.mel} has {mel.shape[0]} mel bins, "
                          f"config expects {cfg.n_mels}")
    sig = audiodsp.griffin_lim(mel.astype(np.float64), _filterbank(cfg), stats,
                               iterations=args.iterations, seed=args.seed,
                               win=cfg.win_length, hop=cfg.hop_length,
                               dft_len=cfg.dft_length)
    audiodsp.save_wav(audiodsp.peak_normalize(sig), args.out)
    print(f"wrote {args.out}: {len(sig.samples)} samples")
    return 0


# --------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meldiff",
        description="Guided-diffusion mel-spectrogram engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="wav -> normalized mel tensor")
    p.add_argument("--wav", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("stats", help="scan wavs for normalization stats")
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("train", help="train the toy denoiser or classifier")
    p.add_argument("--config")
    p.add_argument("--dataset-kind", default="harmonic-mel",
                   choices=trainer.DATASET_KINDS)
    p.add_argument("--dataset-size", type=int, default=256)
    p.add_argument("--dataset-seed", type=int, default=1234)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--loss", choices=("l1", "l2"))
    p.add_argument("--dropout-p", type=float)
    p.add_argument("--model", default="denoiser",
                   choices=("denoiser", "classifier"))
    p.add_argument("--resume")
    p.add_argument("--stats")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="run the guided reverse chain")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shape", required=True, help="FxN, e.g. 16x16")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--w1", type=float)
    p.add_argument("--w2", type=float)
    p.add_argument("--t-start", type=int)
    p.add_argument("--no-guidance-norm", action="store_true")
    p.add_argument("--trace")
    p.add_argument("--classifier")
    p.add_argument("--label", type=int)
    p.add_argument("--cond-index", type=int,
                   help="condition on this synthetic dataset sample "
                        "(default: null tokens)")
    p.add_argument("--dataset-kind", default="harmonic-mel",
                   choices=trainer.DATASET_KINDS)
    p.add_argument("--dataset-size", type=int, default=256)
    p.add_argument("--dataset-seed", type=int, default=1234)
    p.add_argument("--alt-update", action="store_true",
                   help="use the alternative reverse-step coefficients "
                        "(cumulative root, un-rooted noise; numerically "
                        "divergent, comparison only)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("sweep", help="guidance ablation sweep")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--axis", required=True, choices=("w1", "w2", "t_start"))
    p.add_argument("--values", required=True)
    p.add_argument("--samples-per-value", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dataset-kind", default="harmonic-mel",
                   choices=trainer.DATASET_KINDS)
    p.add_argument("--dataset-size", type=int, default=256)
    p.add_argument("--dataset-seed", type=int, default=1234)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("verify", help="run the oracle check suite")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("griffinlim", help="mel tensor -> wav via phase "
                                          "reconstruction")
    p.add_argument("--mel", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_griffinlim)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        code = args.fn(args)
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except (OSError, FormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"done in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

