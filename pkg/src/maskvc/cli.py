"""Command-line interface: the full pipeline as one executable.

Subcommands: synth, featurize, stats, train, convert, evaluate, ablate,
inspect-checkpoint. Every command validates its inputs before touching
data, exits 0 on success, and on failure prints a single
"ErrorClass: message" line to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, features, synth
from .features import StftConfig, NormStats, compute_norm_stats, \
    load_waveform, mel_spectrogram, normalize, read_feature_file, \
    write_feature_file
from .masks import MaskPolicy
from .models import count_params
from .objectives import LossWeights
from .runtime import ConversionBundle, convert_corpus
from .training import TrainConfig, config_hash, load_checkpoint, \
    run_training, save_checkpoint


def _read_feature_dir(path) -> list:
    path = Path(path)
    files = sorted(path.glob("*.mel"))
    if not files:
        raise FileNotFoundError(f"no feature files (*.mel) in {path}")
    return [read_feature_file(p)[0] for p in files]


def _add_stft_flags(parser):
    parser.add_argument("--mel-bins", type=int, default=80)
    parser.add_argument("--window", type=int, default=1024)
    parser.add_argument("--hop", type=int, default=256)
    parser.add_argument("--fmin", type=float, default=0.0)
    parser.add_argument("--fmax", type=float, default=11025.0)
    parser.add_argument("--log-floor", type=float, default=1e-5)


def _stft_from_args(args) -> StftConfig:
    return StftConfig(window_length=args.window, hop_length=args.hop,
                      mel_bins=args.mel_bins, fmin_hz=args.fmin,
                      fmax_hz=args.fmax, log_floor=args.log_floor)


def _cmd_synth(args) -> int:
    voice_a = synth.VoiceParams(f0_hz=args.f0_a)
    voice_b = synth.VoiceParams(f0_hz=args.f0_b)
    spec = synth.SynthSpec(
        n_utterances=args.n, n_eval_utterances=args.n_eval,
        duration_range_s=(args.min_duration, args.max_duration),
        voice_a=voice_a, voice_b=voice_b, noise_floor=args.noise_floor,
        seed=args.seed)
    rows = synth.generate(spec, args.out)
    print(f"wrote {len(rows)} files under {args.out}")
    return 0


def _cmd_featurize(args) -> int:
    cfg = _stft_from_args(args)
    in_dir, out_dir = Path(args.in_dir), Path(args.out)
    wavs = sorted(in_dir.rglob("*.wav"))
    if not wavs:
        raise FileNotFoundError(f"no .wav files under {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    for wav_path in wavs:
        wav = load_waveform(wav_path, expected_rate=args.sample_rate,
                            resample=args.resample)
        mel = mel_spectrogram(wav, cfg)
        write_feature_file(out_dir / (wav_path.stem + ".mel"), mel, cfg)
    print(f"featurized {len(wavs)} files -> {out_dir}")
    return 0


def _cmd_stats(args) -> int:
    corpus = _read_feature_dir(args.features)
    stats = compute_norm_stats(corpus, corpus_id=args.corpus_id)
    stats.save(args.out)
    print(f"stats over {len(corpus)} files -> {args.out}")
    return 0


def _train_config_from(args) -> TrainConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
        base.pop("data", None)
    cfg_dict = TrainConfig().to_dict()
    cfg_dict.update(base)
    weights = dict(cfg_dict["weights"])
    policy = dict(cfg_dict["mask_policy"])
    overrides = {
        "iterations": args.iterations,
        "seed": args.seed,
        "preset": args.preset,
        "model_mode": args.model_mode,
        "crop_frames": args.crop_frames,
        "checkpoint_every": args.checkpoint_every,
    }
    for key, value in overrides.items():
        if value is not None:
            cfg_dict[key] = value
    if args.lambda_cyc is not None:
        weights["lambda_cyc"] = args.lambda_cyc
    if args.lambda_id is not None:
        weights["lambda_id"] = args.lambda_id
    if args.id_active_until is not None:
        weights["id_active_until"] = args.id_active_until
    if args.mask_family is not None:
        policy["family"] = args.mask_family
    if args.mask_size_mode is not None:
        policy["size_mode"] = args.mask_size_mode
    if args.mask_percent is not None:
        policy["x_percent"] = args.mask_percent
    cfg_dict["weights"] = weights
    cfg_dict["mask_policy"] = policy
    return TrainConfig.from_dict(cfg_dict)


def _data_paths_from(args) -> dict:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text()).get("data", {})
    for key, value in (("corpus_x", args.corpus_x),
                       ("corpus_y", args.corpus_y),
                       ("stats_x", args.stats_x), ("stats_y", args.stats_y),
                       ("out_dir", args.out)):
        if value is not None:
            data[key] = value
    for key in ("corpus_x", "corpus_y", "out_dir"):
        if key not in data:
            raise ValueError(f"missing data path {key!r} (flag or config file)")
    return data


def _cmd_train(args) -> int:
    cfg = _train_config_from(args)
    data = _data_paths_from(args)
    corpus_x = _read_feature_dir(data["corpus_x"])
    corpus_y = _read_feature_dir(data["corpus_y"])
    if data.get("stats_x"):
        stats_x = NormStats.load(data["stats_x"])
    else:
        stats_x = compute_norm_stats(corpus_x, corpus_id="x")
    if data.get("stats_y"):
        stats_y = NormStats.load(data["stats_y"])
    else:
        stats_y = compute_norm_stats(corpus_y, corpus_id="y")
    norm_x = [normalize(m, stats_x) for m in corpus_x]
    norm_y = [normalize(m, stats_y) for m in corpus_y]
    out_dir = Path(data["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(
        json.dumps({**cfg.to_dict(), "data": {k: str(v) for k, v in
                                              data.items()}}, indent=2))
    stats_x.save(out_dir / "stats_x.json")
    stats_y.save(out_dir / "stats_y.json")
    run_training(cfg, norm_x, norm_y, out_dir=out_dir, resume=args.resume,
                 stats_x=stats_x, stats_y=stats_y, progress=not args.quiet)
    print(f"finished {cfg.iterations} iterations -> "
          f"{out_dir / 'checkpoint_final.pt'}")
    return 0


def _cmd_convert(args) -> int:
    bundle = ConversionBundle.load(args.checkpoint, force=args.force)
    stft = StftConfig(mel_bins=bundle.cfg.n_mels)
    report = convert_corpus(bundle, args.in_dir, args.out, args.direction,
                            write_wav=args.wav, stft=stft,
                            gl_iterations=args.gl_iterations, seed=args.seed)
    failed = [r for r in report if r.status != "ok"]
    for row in report:
        line = f"{row.file}: {row.status}"
        if row.detail:
            line += f" ({row.detail})"
        print(line)
    print(f"converted {len(report) - len(failed)}/{len(report)} files")
    return 0


def _cmd_evaluate(args) -> int:
    rows = evaluation.mcd_between_dirs(args.converted, args.target,
                                       order=args.order)
    if args.out:
        import csv

        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["file", "mcd_db", "status"])
            writer.writeheader()
            writer.writerows(rows)
    scored = [r["mcd_db"] for r in rows if r["status"] == "ok"]
    for row in rows:
        print(f"{row['file']}: {row['mcd_db']:.4f} ({row['status']})")
    if scored:
        print(f"mean MCD over {len(scored)} files: {float(np.mean(scored)):.4f} dB")
    return 0


def _cmd_ablate(args) -> int:
    matrix_cfg = json.loads(Path(args.matrix).read_text())
    base = TrainConfig().to_dict()
    base.update(matrix_cfg.get("base", {}))
    if args.iterations is not None:
        base["iterations"] = args.iterations
    if args.seed is not None:
        base["seed"] = args.seed
    variants = []
    for entry in matrix_cfg["variants"]:
        entry = dict(entry)
        label = entry.pop("label")
        cell = dict(base)
        for key, value in entry.items():
            if key == "mask_policy":
                merged = dict(cell["mask_policy"])
                merged.update(value)
                cell["mask_policy"] = merged
            elif key == "weights":
                merged = dict(cell["weights"])
                merged.update(value)
                cell["weights"] = merged
            else:
                cell[key] = value
        variants.append(evaluation.AblationVariant(
            label, TrainConfig.from_dict(cell)))
    data = matrix_cfg["data"]
    train_x = _read_feature_dir(data["corpus_x"])
    train_y = _read_feature_dir(data["corpus_y"])
    eval_x = _read_feature_dir(data["eval_x"])
    eval_y = _read_feature_dir(data["eval_y"])
    if len(eval_x) != len(eval_y):
        raise ValueError("eval_x and eval_y must pair up one-to-one")
    stats_x = compute_norm_stats(train_x, corpus_id="x")
    stats_y = compute_norm_stats(train_y, corpus_id="y")
    corpora = evaluation.AblationCorpora(
        train_x=train_x, train_y=train_y,
        eval_pairs_xy=list(zip(eval_x, eval_y)),
        eval_pairs_yx=list(zip(eval_y, eval_x)),
        stats_x=stats_x, stats_y=stats_y)
    report = evaluation.run_ablation(variants, corpora, order=args.order,
                                     workers=args.workers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / "ablation.csv")
    table = report.render_table()
    (out_dir / "ablation.txt").write_text(table + "\n")
    print(table)
    if report.failures:
        return 3
    return 0


def _cmd_inspect(args) -> int:
    state, cfg, stats_x, stats_y = load_checkpoint(args.checkpoint,
                                                   force=True)
    summary = {
        "iteration": state.iteration,
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "param_counts": {
            "conv_xy": count_params(state.conv_xy),
            "conv_yx": count_params(state.conv_yx),
            "disc_x": count_params(state.disc_x),
            "disc_y": count_params(state.disc_y),
            "disc2_x": count_params(state.disc2_x),
            "disc2_y": count_params(state.disc2_y),
        },
        "has_stats_x": stats_x is not None,
        "has_stats_y": stats_y is not None,
    }
    print(json.dumps(summary, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskvc",
        description="masked cycle-adversarial voice conversion pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-domain corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10, help="train utterances/domain")
    p.add_argument("--n-eval", type=int, default=0,
                   help="paired eval utterances/domain")
    p.add_argument("--f0-a", type=float, default=160.0)
    p.add_argument("--f0-b", type=float, default=260.0)
    p.add_argument("--min-duration", type=float, default=1.2)
    p.add_argument("--max-duration", type=float, default=2.0)
    p.add_argument("--noise-floor", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("featurize", help="WAV directory -> feature files")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-rate", type=int, default=22050)
    p.add_argument("--resample", action="store_true",
                   help="resample instead of rejecting other rates")
    _add_stft_flags(p)
    p.set_defaults(func=_cmd_featurize)

    p = sub.add_parser("stats", help="normalization statistics of a corpus")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--corpus-id", default="")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("train", help="train the dual-direction converter")
    p.add_argument("--config", help="run config JSON; flags override")
    p.add_argument("--corpus-x")
    p.add_argument("--corpus-y")
    p.add_argument("--stats-x")
    p.add_argument("--stats-y")
    p.add_argument("--out")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=("full", "desk", "micro"))
    p.add_argument("--model-mode", choices=("mask", "v2"))
    p.add_argument("--crop-frames", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--lambda-cyc", type=float)
    p.add_argument("--lambda-id", type=float)
    p.add_argument("--id-active-until", type=int)
    p.add_argument("--mask-family", choices=("fif", "fif_ns", "fis", "fip"))
    p.add_argument("--mask-size-mode", choices=("constant", "uniform"))
    p.add_argument("--mask-percent", type=float)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("convert", help="convert a directory of feature files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--direction", choices=("xy", "yx"), required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--wav", action="store_true",
                   help="also write audition-quality WAVs")
    p.add_argument("--gl-iterations", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true",
                   help="ignore checkpoint/config hash mismatch")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("evaluate",
                       help="MCD between name-paired feature directories")
    p.add_argument("--converted", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--order", type=int, default=35)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score a variant matrix")
    p.add_argument("--matrix", required=True, help="matrix config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--order", type=int, default=35)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("inspect-checkpoint", help="checkpoint summary")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
