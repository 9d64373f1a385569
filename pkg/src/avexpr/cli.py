"""Command-line surface.

Subcommands cover the full experiment path: synth -> align -> train ->
predict -> smooth -> eval/sweep, plus the pixel-space augment/crop tools
and fold splitting. Report-producing commands (eval, sweep, train) render
a PNG figure next to their JSON/CSV output unless --no-figure is given.

Exit codes: 0 success, 1 data/validation error (one line on stderr,
"error: <Kind>: <message>"), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import (
    AlignmentConfig,
    AlignMode,
    attach_audio,
    pairs_from_sequence,
    read_audio_track,
)
from .datamodel import (
    ExpressionLabel,
    make_folds,
    read_feature_file,
    read_manifest,
    write_feature_file,
)
from .errors import ToolkitError, ValidationError
from .imageops import FaceBox, PadAugConfig, crop_scaled, padaug, read_ppm, write_ppm
from .metrics import evaluation_report
from .ndmath import Rng, read_named_tensors, write_named_tensors
from .smoothing import SmoothingConfig, Strategy, decide, read_logits, smooth_logits, sweep_windows, write_logits
from .synth import emit_dataset, make_alignment_task, make_ordering_dataset
from .trainer import HeadKind, TrainConfig, head_from_tensors, predict_logits, train_head


def parse_windows(text: str) -> list[int]:
    """Either "start:stop:step" (stop inclusive) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"window range must be start:stop:step, got {text!r}")
        start, stop, step = (int(p) for p in parts)
        if start < 1 or stop < start or step < 1:
            raise ValidationError(f"bad window range {text!r}")
        return list(range(start, stop + 1, step))
    return [int(tok) for tok in text.split(",") if tok]


def _figure_path(out_path, flag_value):
    return None if flag_value is False else Path(out_path).with_suffix(".png")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    if args.task == "ordering":
        videos = make_ordering_dataset(
            args.seed, n_videos=args.videos, n_frames=args.frames, d_v=args.d_v, d_a=args.d_a, fps=args.fps
        )
    else:
        videos = make_alignment_task(
            args.seed, n_videos=args.videos, n_frames=args.frames, d_v=args.d_v, d_a=args.d_a, fps=args.fps
        )
    manifest = emit_dataset(videos, args.out_dir)
    print(f"wrote {manifest} ({len(videos)} videos)")
    return 0


def _cmd_align(args) -> int:
    seq = read_feature_file(args.features)
    track = read_audio_track(args.audio)
    mode = AlignMode.NEAREST if args.mode == "nearest" else AlignMode.WINDOW_MEAN
    aligned = attach_audio(seq, track, AlignmentConfig(mode, args.window_s))
    write_feature_file(aligned, args.out)
    n_absent = sum(1 for r in aligned.records if r.audio is None)
    print(f"wrote {args.out} ({len(aligned.records)} frames, {n_absent} without audio)")
    return 0


def _load_dataset(manifest_path):
    base = Path(manifest_path).parent
    by_video = {}
    for entry in read_manifest(manifest_path):
        seq = read_feature_file(base / entry["path"])
        by_video[entry["id"]] = pairs_from_sequence(seq)
    return by_video


def _cmd_train(args) -> int:
    by_video = _load_dataset(args.manifest)
    val_ids = [v for v in args.val_videos.split(",") if v]
    unknown = sorted(set(val_ids) - set(by_video))
    if unknown:
        raise ValidationError(f"val videos not in manifest: {unknown}")
    if not val_ids or len(val_ids) == len(by_video):
        raise ValidationError("need at least one val video and one train video")
    val = [t for vid in val_ids for t in by_video[vid]]
    train = [
        t
        for vid in sorted(set(by_video) - set(val_ids))
        for t in by_video[vid]
        if int(t[2]) != ExpressionLabel.MISSING
    ]
    cfg = TrainConfig(
        epochs=args.epochs,
        lr_head=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        label_smoothing=args.label_smoothing,
        mixup_alpha=args.mixup_alpha,
        seed=args.seed,
        hidden=args.hidden,
        moe_experts=args.experts,
        dropout=args.dropout,
    )
    params, history = train_head(train, HeadKind(args.head), cfg, val)
    write_named_tensors(params.to_tensors(), args.out)
    best = max(h["val_macro_f1"] for h in history)
    if args.history:
        with open(args.history, "w", encoding="utf-8") as f:
            json.dump(history, f, indent=2)
            f.write("\n")
        fig = _figure_path(args.history, args.figure)
        if fig is not None:
            from .figures import save_history_figure

            save_history_figure(history, fig)
    print(f"wrote {args.out} (best val macro F1 {best:.6f} over {len(history)} epochs)")
    return 0


def _cmd_predict(args) -> int:
    kind, params = head_from_tensors(read_named_tensors(args.checkpoint))
    triples = pairs_from_sequence(read_feature_file(args.features))
    logits = predict_logits(kind, params, triples)
    write_logits(logits, args.out)
    print(f"wrote {args.out} ({logits.shape[0]}x{logits.shape[1]} logits, head={kind.value})")
    return 0


def _cmd_smooth(args) -> int:
    cfg = SmoothingConfig(Strategy(args.strategy), args.window, args.sigma)
    smoothed = smooth_logits(read_logits(args.logits), cfg)
    write_logits(smoothed, args.out)
    print(f"wrote {args.out} (strategy={args.strategy}, window={args.window})")
    return 0


def _read_truth(path):
    seq = read_feature_file(path)
    return [r.label for r in seq.records]


def _cmd_eval(args) -> int:
    logits = read_logits(args.logits)
    truth = _read_truth(args.labels)
    if logits.shape[0] != len(truth):
        raise ValidationError(f"{logits.shape[0]} logit rows vs {len(truth)} labeled frames")
    report = evaluation_report(decide(logits), truth, n_classes=logits.shape[1])
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    fig = _figure_path(args.out, args.figure)
    if fig is not None:
        from .figures import save_report_figure

        save_report_figure(report, fig)
    print(f"macro_f1 {report['macro_f1']:.6f} over {report['n_eval_frames']} frames -> {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    logits = read_logits(args.logits)
    truth = _read_truth(args.labels)
    if logits.shape[0] != len(truth):
        raise ValidationError(f"{logits.shape[0]} logit rows vs {len(truth)} labeled frames")
    rows = sweep_windows(logits, truth, Strategy(args.strategy), parse_windows(args.windows), args.sigma)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["window", "macro_f1"])
        for window, score in rows:
            writer.writerow([window, f"{score:.10f}"])
    fig = _figure_path(args.out, args.figure)
    if fig is not None:
        from .figures import save_sweep_figure

        save_sweep_figure(rows, fig, strategy=args.strategy)
    best = max(rows, key=lambda r: r[1])
    print(f"wrote {args.out} ({len(rows)} windows, best w={best[0]} macro_f1 {best[1]:.6f})")
    return 0


def _cmd_augment(args) -> int:
    cfg = PadAugConfig(
        probability=args.probability,
        sides=frozenset(args.sides.split(",")),
        fraction_range=(args.fraction_lo, args.fraction_hi),
        max_sides_per_sample=args.max_sides,
        jitter=args.jitter,
    )
    base = Path(args.manifest).parent
    root = Rng(args.seed)
    out_root = Path(args.out_dir)
    tasks = []
    for v, entry in enumerate(read_manifest(args.manifest)):
        frames_dir = base / entry["path"]
        frames = sorted(frames_dir.glob("*.ppm"))
        if not frames:
            raise ValidationError(f"no .ppm frames under {frames_dir}")
        out_dir = out_root / entry["id"]
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(frames):
            # child stream per (video, frame) so results are independent of
            # scheduling order and job count
            tasks.append((frame, out_dir / frame.name, root.child(v * 1_000_000 + i)))

    def run(task):
        src, dst, rng = task
        write_ppm(padaug(read_ppm(src), cfg, rng), dst)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(run, tasks))
    else:
        for task in tasks:
            run(task)
    print(f"wrote {len(tasks)} augmented frames under {out_root}")
    return 0


def _cmd_crop(args) -> int:
    img = read_ppm(args.image)
    box = FaceBox(args.cx, args.cy, args.box_side)
    scales = [float(s) for s in args.scales.split(",") if s]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    for scale in scales:
        out = crop_scaled(img, box, scale, args.out_side)
        write_ppm(out, out_dir / f"{stem}_s{scale}.ppm")
    print(f"wrote {len(scales)} crops under {out_dir}")
    return 0


def _cmd_folds(args) -> int:
    if args.videos:
        videos = [v for v in args.videos.split(",") if v]
    elif args.manifest:
        videos = [e["id"] for e in read_manifest(args.manifest)]
    else:
        raise ValidationError("need --videos or --manifest")
    split = make_folds(videos, args.k, args.seed)
    payload = {"k": split.k, "assignment": dict(sorted(split.assignment.items()))}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        print(f"wrote {args.out}")
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="avexpr",
        description="Audio-visual frame-level expression recognition toolkit",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a bundled synthetic dataset")
    sp.add_argument("--task", choices=["ordering", "alignment"], default="ordering")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--videos", type=int, default=8)
    sp.add_argument("--frames", type=int, default=600)
    sp.add_argument("--d-v", type=int, default=32)
    sp.add_argument("--d-a", type=int, default=32)
    sp.add_argument("--fps", type=float, default=25.0)
    sp.set_defaults(func=_cmd_synth)

    sp = sub.add_parser("align", help="fill a feature file's audio slots from an audio track")
    sp.add_argument("--features", required=True, help="input AFF1")
    sp.add_argument("--audio", required=True, help="input AFA1")
    sp.add_argument("--mode", choices=["nearest", "window"], default="window")
    sp.add_argument("--window-s", type=float, default=0.5, help="window length in seconds")
    sp.add_argument("--out", required=True, help="output AFF1")
    sp.set_defaults(func=_cmd_align)

    sp = sub.add_parser("train", help="train a classification head on aligned features")
    sp.add_argument("--manifest", required=True, help="JSON-lines manifest of aligned AFF1 files")
    sp.add_argument("--val-videos", required=True, help="comma list of held-out video ids")
    sp.add_argument(
        "--head",
        choices=[k.value for k in HeadKind],
        default="gated",
    )
    sp.add_argument("--epochs", type=int, default=12)
    sp.add_argument("--lr", type=float, default=3e-4)
    sp.add_argument("--weight-decay", type=float, default=1e-2)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--label-smoothing", type=float, default=0.1)
    sp.add_argument("--mixup-alpha", type=float, default=0.2)
    sp.add_argument("--hidden", type=int, default=512)
    sp.add_argument("--experts", type=int, default=4)
    sp.add_argument("--dropout", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output NTC1 checkpoint")
    sp.add_argument("--history", help="optional JSON training-history path")
    sp.add_argument("--no-figure", dest="figure", action="store_false")
    sp.set_defaults(func=_cmd_train, figure=True)

    sp = sub.add_parser("predict", help="run a checkpoint over a feature file")
    sp.add_argument("--checkpoint", required=True, help="NTC1 checkpoint")
    sp.add_argument("--features", required=True, help="aligned AFF1")
    sp.add_argument("--out", required=True, help="output LGT1 logits")
    sp.set_defaults(func=_cmd_predict)

    sp = sub.add_parser("smooth", help="temporally smooth a logits file")
    sp.add_argument("--logits", required=True, help="input LGT1")
    sp.add_argument("--strategy", choices=[s.value for s in Strategy], default="median")
    sp.add_argument("--window", type=int, default=101, help="odd window size in frames")
    sp.add_argument("--sigma", type=float, help="gaussian width (default window/6)")
    sp.add_argument("--out", required=True, help="output LGT1")
    sp.set_defaults(func=_cmd_smooth)

    sp = sub.add_parser("eval", help="score logits against labeled features")
    sp.add_argument("--logits", required=True, help="LGT1 predictions")
    sp.add_argument("--labels", required=True, help="AFF1 carrying ground-truth labels")
    sp.add_argument("--out", required=True, help="output JSON report")
    sp.add_argument("--no-figure", dest="figure", action="store_false")
    sp.set_defaults(func=_cmd_eval, figure=True)

    sp = sub.add_parser("sweep", help="macro-F1 versus smoothing window size")
    sp.add_argument("--logits", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--strategy", choices=[s.value for s in Strategy], default="median")
    sp.add_argument("--windows", default="3:205:2", help="start:stop:step (stop inclusive) or comma list")
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--out", required=True, help="output CSV")
    sp.add_argument("--no-figure", dest="figure", action="store_false")
    sp.set_defaults(func=_cmd_sweep, figure=True)

    sp = sub.add_parser("augment", help="black-bar padding augmentation over a frame manifest")
    sp.add_argument("--manifest", required=True, help="entries whose path is a directory of .ppm frames")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--probability", type=float, default=0.5)
    sp.add_argument("--sides", default="left,right,top,bottom")
    sp.add_argument("--fraction-lo", type=float, default=0.05)
    sp.add_argument("--fraction-hi", type=float, default=0.25)
    sp.add_argument("--max-sides", type=int, default=2)
    sp.add_argument("--jitter", type=int, default=2)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=_cmd_augment)

    sp = sub.add_parser("crop", help="multi-scale square crops from one frame")
    sp.add_argument("--image", required=True, help="input .ppm frame")
    sp.add_argument("--cx", type=float, required=True)
    sp.add_argument("--cy", type=float, required=True)
    sp.add_argument("--box-side", type=float, required=True)
    sp.add_argument("--scales", default="0.9,1.2,1.5")
    sp.add_argument("--out-side", type=int, default=224)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=_cmd_crop)

    sp = sub.add_parser("folds", help="deterministic k-fold split by video")
    sp.add_argument("--videos", help="comma list of video ids")
    sp.add_argument("--manifest", help="take video ids from a manifest")
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="output JSON (default stdout)")
    sp.set_defaults(func=_cmd_folds)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
