"""Command-line entry points: synth, train, dehaze, eval.

Every command exits 0 on success. Failures print a single machine-parsable
line to stderr — ``<category>: <detail>`` — and exit nonzero, where the
category names the error class (config-error, not-found, dimension-error,
domain-error, version-error, training-diverged, value-error, io-error).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import build_extractor, load_run_config, save_resolved
from .errors import (
    CheckpointVersionError,
    ConfigError,
    DimensionError,
    DomainError,
    NonFiniteLossError,
)
from .frames import (
    list_frame_files,
    load_paired_clips,
    load_sequence,
    save_frame,
)
from .haze import HazeFieldSpec, generate_haze_sequence, synthesize_hazy
from .metrics import aggregate_summaries, evaluate_clip, write_summary_json
from .pipeline import MODE_FULL, MODES, build_model, dehaze_sequence, load_checkpoint
from .trainer import fit


def _error_category(exc: BaseException) -> str:
    # Ordered: subclasses before their bases.
    mapping = (
        (ConfigError, "config-error"),
        (DimensionError, "dimension-error"),
        (DomainError, "domain-error"),
        (CheckpointVersionError, "version-error"),
        (NonFiniteLossError, "training-diverged"),
        (FileNotFoundError, "not-found"),
        (IndexError, "index-error"),
        (ValueError, "value-error"),
        (OSError, "io-error"),
        (RuntimeError, "runtime-error"),
    )
    for klass, category in mapping:
        if isinstance(exc, klass):
            return category
    return "error"


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args: argparse.Namespace) -> int:
    clean_root = Path(args.clean_dir)
    if not clean_root.is_dir():
        raise FileNotFoundError(f"clean clip directory not found: {clean_root}")
    clip_dirs = sorted(p for p in clean_root.iterdir() if p.is_dir())
    if not clip_dirs:
        raise FileNotFoundError(f"no clip subdirectories under {clean_root}")
    out_root = Path(args.out_dir)
    for index, clip_dir in enumerate(clip_dirs):
        seq = load_sequence(clip_dir)
        names = [p.with_suffix(".png").name for p in list_frame_files(clip_dir)]
        spec = HazeFieldSpec(
            base_transmission=args.base_transmission,
            spatial_smoothness=args.smoothness,
            temporal_drift=args.drift,
            airlight_value=args.airlight,
            seed=args.seed + index,  # one independent field per clip
        )
        params = generate_haze_sequence(spec, len(seq), seq.height, seq.width)
        clip_out = out_root / clip_dir.name
        for name, frame, p in zip(names, seq.frames, params):
            save_frame(synthesize_hazy(frame, p), clip_out / "hazy" / name)
            save_frame(frame, clip_out / "gt" / name)
        np.savez(
            clip_out / "haze_params.npz",
            transmission=np.stack([p.transmission for p in params]).astype(np.float32),
            airlight=np.float32(spec.airlight_value),
        )
        with open(clip_out / "haze_spec.json", "w") as fh:
            json.dump(dataclasses.asdict(spec), fh, indent=2)
            fh.write("\n")
        print(f"synth: clip {clip_dir.name}: {len(seq)} frames -> {clip_out}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args: argparse.Namespace) -> int:
    run = load_run_config(args.config)
    if args.mode is not None or args.seed is not None or args.epochs is not None:
        train = run.train
        if args.mode is not None:
            train = dataclasses.replace(train, mode=args.mode)
        if args.seed is not None:
            train = dataclasses.replace(train, seed=args.seed)
        if args.epochs is not None:
            train = dataclasses.replace(train, epochs=args.epochs)
        run = dataclasses.replace(run, train=train)

    if not run.data.train_root:
        raise ConfigError("data.train_root is not set")
    train_clips = load_paired_clips(run.data.train_root)
    val_clips = load_paired_clips(run.data.val_root) if run.data.val_root else []

    ckpt_dir = Path(run.train.checkpoint_dir)
    resume_from = None
    if args.resume is not None:
        resume_from = Path(args.resume) if args.resume != "" else ckpt_dir / "latest.pt"
        if not resume_from.is_file():
            raise FileNotFoundError(f"resume checkpoint not found: {resume_from}")

    model = build_model(run.fusion, run.refine, run.haze_window, seed=run.train.seed)
    extractor = build_extractor(run)
    save_resolved(run, ckpt_dir / "config.resolved.json")
    state = fit(model, train_clips, val_clips, run.train, extractor, resume_from=resume_from)
    print(f"train: finished at epoch {state.epoch}, step {state.step}; "
          f"checkpoints in {ckpt_dir}")
    return 0


# ---------------------------------------------------------------------------
# dehaze


def cmd_dehaze(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    in_dir = Path(args.input)
    files = list_frame_files(in_dir)
    seq = load_sequence(in_dir)
    restored = dehaze_sequence(model, seq, mode=args.mode or MODE_FULL)
    out_dir = Path(args.out)
    for path, frame in zip(files, restored.frames):
        save_frame(frame, out_dir / path.with_suffix(".png").name)
    print(f"dehaze: wrote {len(restored)} frames to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _pred_clips(pred_root: Path) -> list[str]:
    """Clip ids under a prediction root: subdirectories holding images, or
    '' if the root itself is a single flat clip."""
    subdirs = sorted(p.name for p in pred_root.iterdir() if p.is_dir())
    if subdirs:
        return subdirs
    return [""]


def _gt_sequence(gt_root: Path, clip: str):
    if clip:
        candidates = [gt_root / clip / "gt", gt_root / clip]
    else:
        candidates = [gt_root / "gt", gt_root]
    for cand in candidates:
        try:
            return load_sequence(cand, clip or cand.name)
        except FileNotFoundError:
            continue
    raise FileNotFoundError(f"no ground-truth frames for clip {clip!r} under {gt_root}")


def cmd_eval(args: argparse.Namespace) -> int:
    pred_root = Path(args.pred)
    gt_root = Path(args.gt)
    if not pred_root.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred_root}")
    if not gt_root.is_dir():
        raise FileNotFoundError(f"ground-truth directory not found: {gt_root}")
    reports = []
    for clip in _pred_clips(pred_root):
        pred = load_sequence(pred_root / clip if clip else pred_root, clip or pred_root.name)
        gt = _gt_sequence(gt_root, clip)
        reports.append(evaluate_clip(pred, gt))

    base = Path(args.report)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    with open(base.with_suffix(".csv"), "w") as fh:
        fh.write("clip,frame,psnr,ssim\n")
        for r in reports:
            for i, (p, s) in enumerate(zip(r.frame_psnr, r.frame_ssim)):
                fh.write(f"{r.clip_id},{i},{p!r},{s!r}\n")
    summary = aggregate_summaries(reports)
    write_summary_json(summary, base.with_suffix(".json"))
    overall = summary["overall"]
    print(f"eval: {len(reports)} clips, mean PSNR {overall['mean_psnr']}, "
          f"mean SSIM {overall['mean_ssim']}; report at {base}.csv / {base}.json")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="videodehaze",
        description="Progressive multi-frame video dehazing: synthesize data, train, restore, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render hazy versions of clean clips")
    p.add_argument("--clean-dir", required=True, help="directory of clean clip subdirectories")
    p.add_argument("--out-dir", required=True, help="output dataset root (<clip>/hazy, <clip>/gt)")
    p.add_argument("--base-transmission", type=float, default=0.6,
                   help="mean transmission; 1.0 means no haze (default 0.6)")
    p.add_argument("--smoothness", type=float, default=8.0,
                   help="spatial correlation length of the haze field in pixels (default 8)")
    p.add_argument("--drift", type=float, default=0.01,
                   help="max per-pixel transmission change between frames (default 0.01)")
    p.add_argument("--airlight", type=float, default=0.8, help="scalar airlight (default 0.8)")
    p.add_argument("--seed", type=int, default=0, help="base seed; clip i uses seed+i (default 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the three-stage model")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--mode", choices=MODES, default=None,
                   help="override train.mode (full or stage2_only)")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    p.add_argument("--resume", nargs="?", const="", default=None, metavar="CHECKPOINT",
                   help="resume from a checkpoint (default: <checkpoint_dir>/latest.pt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dehaze", help="restore a clip with a trained checkpoint")
    p.add_argument("--checkpoint", required=True, help="model checkpoint (.pt)")
    p.add_argument("--input", required=True, help="directory of hazy frames")
    p.add_argument("--out", required=True, help="directory for restored frames")
    p.add_argument("--mode", choices=MODES, default=None,
                   help="run the full pipeline or stop at stage 2 (default full)")
    p.set_defaults(func=cmd_dehaze)

    p = sub.add_parser("eval", help="PSNR/SSIM of restored frames against ground truth")
    p.add_argument("--pred", required=True, help="directory of restored clips (or one flat clip)")
    p.add_argument("--gt", required=True, help="dataset root holding the ground truth")
    p.add_argument("--report", required=True, help="report base path; writes <base>.csv and <base>.json")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not crashes
        print(f"{_error_category(exc)}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
