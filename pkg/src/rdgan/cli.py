"""Command-line entry point.

Commands: make-data, train, generate, classify, gradcheck, print-config.
Flags override config-file values, which override built-in defaults; the
environment variable RDGAN_SEED replaces the built-in default seed. Exit
codes: 0 success, 1 usage, 2 data/format, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .classifier import label_fraction_sweep, format_sweep, train_classifier
from .config import RunConfig, build_model_configs, format_config, head_config, load_config, parse_config, synthetic_spec
from .data import VideoTensor, export_frames, make_synthetic_dataset, read_dataset, write_dataset, write_video_file
from .errors import DataError, InputError, RDGANError, UsageError
from .generator import transplant_spatial_weights
from .gradcheck import standard_suite
from .rng import Rng
from .trainer import load_checkpoint, make_train_state, pretrain_image_gan, run_training, sample_videos, save_checkpoint

METRICS_HEADER = "step\td_loss\tg_loss\treal_score\tfake_score\tseconds"
LOG_EVERY = 100


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; usage errors are exit 1 here
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    raw = os.environ.get("RDGAN_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"RDGAN_SEED must be an integer, got {raw!r}") from None


def _effective_config(args, overrides: dict | None = None) -> RunConfig:
    """defaults <- RDGAN_SEED <- config file <- command-line flags."""
    base = RunConfig(seed=_default_seed())
    if args.config:
        base = load_config(args.config, base)
    lines = []
    if getattr(args, "seed", None) is not None:
        lines.append(f"seed = {args.seed}")
    for key, value in (overrides or {}).items():
        if value is not None:
            lines.append(f"{key} = {value}")
    return parse_config("\n".join(lines), base) if lines else base


def _parse_fraction(token: str) -> float:
    token = token.strip()
    try:
        if "/" in token:
            num, den = token.split("/", 1)
            value = float(num) / float(den)
        else:
            value = float(token)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"bad fraction {token!r}; use forms like 1/8 or 0.125") from None
    if not 0.0 < value <= 1.0:
        raise UsageError(f"fraction must lie in (0, 1], got {token!r}")
    return value


def _load_segments(run: RunConfig):
    manifest = Path(run.data_dir) / "manifest.tsv"
    segments = read_dataset(manifest)
    if not segments:
        raise DataError(f"{manifest}: dataset is empty")
    videos = np.concatenate([s.video.data for s in segments], axis=0)
    captions = [s.caption for s in segments]
    labels = np.asarray([s.class_label for s in segments], dtype=np.int64)
    return videos, captions, labels


def _require_file(path_str: str, what: str) -> Path:
    path = Path(path_str)
    if not path.exists():
        raise DataError(f"{path}: {what} not found")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_make_data(args) -> int:
    run = _effective_config(
        args,
        {
            "shapes": args.shapes,
            "colors": args.colors,
            "directions": args.directions,
            "count": args.count,
            "frame_size": args.frame_size,
            "timesteps": args.timesteps,
            "data_dir": args.out,
        },
    )
    spec = synthetic_spec(run)
    if run.count == 0:
        print("warning: count is 0, writing an empty manifest", file=sys.stderr)
    segments = make_synthetic_dataset(spec, run.count, Rng(run.seed))
    manifest = write_dataset(segments, run.data_dir)
    print(f"wrote {len(segments)} segments ({spec.class_count} classes) to {manifest}")
    return 0


def cmd_train(args) -> int:
    run = _effective_config(
        args,
        {
            "steps": args.steps,
            "batch_size": args.batch_size,
            "data_dir": args.data,
            "out_dir": args.out,
            "checkpoint_every": args.checkpoint_every,
            "pretrain_steps": args.pretrain_steps,
        },
    )
    g_cfg, d_cfg = build_model_configs(run)
    videos, captions, _ = _load_segments(run)
    expected = (g_cfg.out_channels, run.timesteps, run.frame_size, run.frame_size)
    if videos.shape[1:] != expected:
        raise DataError(f"dataset segments are {videos.shape[1:]}, config wants {expected}")

    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.rdgc"
    metrics_path = out / "metrics.tsv"

    if args.resume:
        _require_file(args.resume, "checkpoint")
        state = load_checkpoint(args.resume, g_cfg, d_cfg, lr=run.lr, beta1=run.beta1, g_loss_mode=run.g_loss)
        # the snapshot describes the config active when a checkpoint is
        # written, so a continuation stamps its own effective config
        state.config_text = format_config(run)
        print(f"resumed from {args.resume} at step {state.step}")
        metrics_mode = "a" if metrics_path.exists() else "w"
    else:
        state = make_train_state(
            g_cfg, d_cfg, seed=run.seed, lr=run.lr, beta1=run.beta1, g_loss_mode=run.g_loss, config_text=format_config(run)
        )
        metrics_mode = "w"
        pretrain = run.pretrain if args.pretrain is None else args.pretrain
        if pretrain and run.pretrain_steps > 0:
            t = videos.shape[2]
            frames = np.moveaxis(videos, 2, 1).reshape(-1, videos.shape[1], videos.shape[3], videos.shape[4])
            frame_captions = [c for c in captions for _ in range(t)]
            print(f"pretraining image stage: {run.pretrain_steps} steps on {frames.shape[0]} frames")
            image_params = pretrain_image_gan(
                frames, frame_captions, g_cfg, d_cfg, state.rng,
                steps=run.pretrain_steps, batch_size=run.batch_size,
                lr=run.lr, beta1=run.beta1, g_loss_mode=run.g_loss,
            )
            transplant_spatial_weights(image_params, state.g_params)

    remaining = run.steps - state.step
    if remaining <= 0:
        print(f"checkpoint already at step {state.step} (target {run.steps}); nothing to do")
        return 0

    with open(metrics_path, metrics_mode, encoding="utf-8") as fh:
        if metrics_mode == "w":
            fh.write(METRICS_HEADER + "\n")

        def on_metrics(m):
            fh.write(f"{m.step}\t{m.d_loss:.6f}\t{m.g_loss:.6f}\t{m.real_score_mean:.6f}\t{m.fake_score_mean:.6f}\t{m.wall_time:.3f}\n")
            if m.step % LOG_EVERY == 0 or m.step == run.steps:
                fh.flush()
                print(f"step {m.step}: d_loss {m.d_loss:.4f} g_loss {m.g_loss:.4f} "
                      f"D(real) {m.real_score_mean:.3f} D(fake) {m.fake_score_mean:.3f}")

        run_training(
            state, videos, captions,
            steps=remaining, batch_size=run.batch_size,
            dump_path=str(out / "dump.rdgc"),
            checkpoint_path=str(ckpt_path), checkpoint_every=run.checkpoint_every,
            on_metrics=on_metrics,
        )
    save_checkpoint(state, str(ckpt_path))
    print(f"trained to step {state.step}; checkpoint {ckpt_path}, metrics {metrics_path}")
    return 0


def cmd_generate(args) -> int:
    if not args.text.strip():
        raise InputError("empty caption")
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    run = _effective_config(args)
    g_cfg, d_cfg = build_model_configs(run)
    _require_file(args.ckpt, "checkpoint")
    state = load_checkpoint(args.ckpt, g_cfg, d_cfg, lr=run.lr, beta1=run.beta1, g_loss_mode=run.g_loss)
    videos = sample_videos(state, [args.text] * args.count, Rng(run.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        sample = VideoTensor(videos[i : i + 1])
        write_video_file(sample, out / f"sample_{i:02d}.rdgv")
        export_frames(sample, out / f"sample_{i:02d}")
    print(f"wrote {args.count} videos for {args.text!r} to {out}")
    return 0


def cmd_classify(args) -> int:
    run = _effective_config(args, {"data_dir": args.data})
    g_cfg, d_cfg = build_model_configs(run)
    _require_file(args.ckpt, "checkpoint")
    state = load_checkpoint(args.ckpt, g_cfg, d_cfg, lr=run.lr, beta1=run.beta1, g_loss_mode=run.g_loss)
    videos, _, labels = _load_segments(run)
    class_count = args.classes if args.classes is not None else int(labels.max()) + 1
    if args.sweep:
        fractions = [_parse_fraction(tok) for tok in args.sweep.split(",")]
        base = head_config(run, "linear", class_count, fractions[-1])
        rows = label_fraction_sweep(state.d_params, d_cfg, videos, labels, fractions, base, seed=run.seed)
        text = format_sweep(rows)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
            print(f"wrote sweep table to {args.out}")
        else:
            print(text, end="")
    else:
        fraction = _parse_fraction(args.label_fraction)
        cfg = head_config(run, args.head, class_count, fraction)
        _, accuracy = train_classifier(state.d_params, d_cfg, videos, labels, cfg, seed=run.seed)
        print(f"variant={args.head} fraction={fraction:g} accuracy={accuracy:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    run = _effective_config(args)
    precision = args.precision if args.precision else run.precision
    report = standard_suite(rtol=args.tolerance, precision=precision, max_entries=args.samples, seed=run.seed)
    print(report.summary())
    verdict = "passed" if report.passed else "FAILED"
    print(f"gradcheck {verdict}: {len(report.params)} parameter tensors, "
          f"tolerance {args.tolerance:g} ({precision}), max relative error {report.max_rel_err:.3e}")
    return 0 if report.passed else 3


def cmd_print_config(args) -> int:
    print(format_config(_effective_config(args)), end="")
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rdgan", description="Text-conditioned video GAN toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def common(p):
        p.add_argument("--config", help="key = value config file; flags override it")
        p.add_argument("--seed", type=int, help="RNG seed (default: RDGAN_SEED or 0)")

    p = sub.add_parser("make-data", help="render the synthetic moving-shapes dataset")
    common(p)
    p.add_argument("--shapes", help="comma list, e.g. square,circle")
    p.add_argument("--colors", help="comma list, e.g. red,blue")
    p.add_argument("--directions", help="comma list, e.g. left,right")
    p.add_argument("--count", type=int, help="number of segments")
    p.add_argument("--frame-size", type=int, dest="frame_size")
    p.add_argument("--timesteps", type=int)
    p.add_argument("--out", help="output directory (data_dir)")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="adversarial training with optional image pretraining")
    common(p)
    p.add_argument("--steps", type=int, help="total step target")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="run directory for checkpoints and metrics")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--pretrain-steps", type=int, dest="pretrain_steps")
    phase = p.add_mutually_exclusive_group()
    phase.add_argument("--pretrain-images", dest="pretrain", action="store_true", default=None,
                       help="image-GAN pretraining then transplant (default from config)")
    phase.add_argument("--no-pretrain", dest="pretrain", action="store_false",
                       help="skip straight to video training")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample videos from a checkpoint")
    common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--text", required=True, help="caption to condition on")
    p.add_argument("--count", type=int, default=1, help="videos to sample")
    p.add_argument("--out", default="samples", help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("classify", help="train a softmax head on frozen discriminator features")
    common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--head", choices=("conv", "linear"), default="linear")
    p.add_argument("--label-fraction", dest="label_fraction", default="0.125",
                   help="labeled fraction, e.g. 1/8 or 0.125")
    p.add_argument("--sweep", help="comma list of fractions; emits a TSV table")
    p.add_argument("--classes", type=int, help="class count (default: inferred from labels)")
    p.add_argument("--out", help="write the sweep TSV here instead of stdout")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the full model")
    common(p)
    p.add_argument("--tolerance", type=float, default=1e-4, help="relative tolerance")
    p.add_argument("--precision", choices=("single", "double"), help="arithmetic (default from config)")
    p.add_argument("--samples", type=int, default=6, help="checked entries per tensor")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("print-config", help="print the effective configuration")
    common(p)
    p.set_defaults(func=cmd_print_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except RDGANError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
