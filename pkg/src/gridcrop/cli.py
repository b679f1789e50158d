"""``gridcrop`` command line: generate, synth, train, evaluate, crop, baseline."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data.annotations import AnnotatedImage, format_annotations, parse_annotations, read_annotations
from .data.ppm import RawImage, load_ppm, save_ppm
from .data.synth import generate_dataset
from .geometry import BASELINE_MODES, ImageDims, baseline_crop, enumerate_candidates, format_crops
from .metrics import MetricReport, format_table, report
from .model import CropScorer, dump_checkpoint, load_checkpoint, predict_image
from .training import EpochLog, baseline_reports, fit, load_dataset, predict_scores, split_indices

log = logging.getLogger("gridcrop")


class CLIError(Exception):
    """A user-facing error; the message names the offending input."""


# ---------------------------------------------------------------------------
# helpers


def _path(arg: Optional[str], cfg: RunConfig, key: str, what: str) -> Path:
    value = arg if arg is not None else cfg.paths.get(key)
    if value is None:
        raise CLIError(f"no {what} given (use the option or set [paths] {key} in the config)")
    return Path(value)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _image_dims(args) -> Tuple[ImageDims, Optional[RawImage]]:
    if args.image is not None:
        image = load_ppm(args.image)
        return image.dims, image
    if args.dims is not None:
        return ImageDims(*args.dims), None
    raise CLIError("give either --image PATH or --dims H W")


def _read_scores(path: Path) -> List[AnnotatedImage]:
    """A PRED file, or an IMG annotation file whose MOS values act as predictions."""
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    kind = "PRED"
    for line in lines[1:]:
        if line.strip():
            kind = line.split()[0]
            break
    if kind not in ("PRED", "IMG"):
        kind = "PRED"
    return parse_annotations(text, kind, str(path))


def _align_predictions(preds: Sequence[AnnotatedImage], gts: Sequence[AnnotatedImage], source: Path) -> List[List[float]]:
    by_path = {}
    for p in preds:
        if p.path in by_path:
            raise CLIError(f"{source}: image {p.path} appears twice")
        by_path[p.path] = p
    out = []
    for g in gts:
        p = by_path.pop(g.path, None)
        if p is None:
            raise CLIError(f"{source}: no predictions for image {g.path}")
        if p.crops != g.crops:
            raise CLIError(f"{source}: image {g.path}: candidate set differs from the annotations "
                           f"({len(p.crops)} vs {len(g.crops)} crops)")
        out.append(p.scores)
    if by_path:
        raise CLIError(f"{source}: predictions for unknown image {sorted(by_path)[0]}")
    return out


def _render_reports(rows: Sequence[Tuple[str, MetricReport]], seed: int) -> str:
    blocks = [f"seed {seed}\n"]
    for name, rep in rows:
        blocks.append(f"method {name}\n" + rep.to_kv())
    return "\n".join(blocks)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args, cfg: RunConfig) -> int:
    dims, _ = _image_dims(args)
    crops = enumerate_candidates(dims, cfg.grid)
    if args.out is not None:
        _write_text(Path(args.out), format_crops(crops))
    else:
        sys.stdout.write(format_crops(crops))
    print(len(crops), file=sys.stdout if args.out is not None else sys.stderr)
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    out_dir = _path(args.out_dir, cfg, "out_dir", "output directory")
    out_dir.mkdir(parents=True, exist_ok=True)
    data = generate_dataset(args.count, args.seed, cfg.grid)
    for image, ann in data:
        save_ppm(out_dir / ann.path, image)
    _write_text(out_dir / "annotations.txt", format_annotations([ann for _, ann in data]))
    g = cfg.grid
    manifest = (f"gridcrop synthetic dataset\nseed {args.seed}\ncount {args.count}\n"
                f"grid {g.M} {g.N} {g.m} {g.n} {g.lam!r} {g.alpha1!r} {g.alpha2!r}\n")
    _write_text(out_dir / "MANIFEST", manifest)
    print(f"wrote {len(data)} images to {out_dir}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    ann_path = _path(args.annotations, cfg, "annotations", "annotation file")
    ckpt_path = _path(args.out, cfg, "checkpoint", "checkpoint path")
    log_path = Path(args.log) if args.log else ckpt_path.with_name(ckpt_path.name + ".log")
    tcfg = cfg.train
    if args.epochs is not None:
        if args.epochs < 0:
            raise CLIError("--epochs must be >= 0")
        tcfg.epochs = args.epochs
    tcfg.seed = args.seed

    samples = load_dataset(ann_path)
    if not samples:
        raise CLIError(f"{ann_path}: no images to train on")
    tr, va = split_indices(len(samples), tcfg.val_fraction, tcfg.seed)
    train = [samples[i] for i in tr]
    val = [samples[i] for i in va]
    log.info("training on %d images, validating on %d", len(train), len(val))

    lines = [f"# gridcrop train seed {tcfg.seed} threads {args.threads} epochs {tcfg.epochs} "
             f"train_images {len(train)} val_images {len(val)}",
             "# epoch train_loss val_srcc"]

    def on_epoch(e: EpochLog) -> None:
        srcc = "--" if e.val_srcc is None else f"{e.val_srcc:.6f}"
        lines.append(f"{e.epoch} {e.train_loss:.6f} {srcc}")

    try:
        model, _ = fit(train, val, tcfg, cfg.model, on_epoch)
    except FloatingPointError as exc:
        _write_text(log_path, "\n".join(lines) + "\n")
        raise CLIError(f"training aborted: {exc}") from None
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    ckpt_path.write_bytes(dump_checkpoint(model))
    _write_text(log_path, "\n".join(lines) + "\n")
    print(f"checkpoint {ckpt_path}")
    return 0


def _load_model(path: Path) -> CropScorer:
    try:
        return load_checkpoint(path.read_bytes())
    except ValueError as exc:
        raise CLIError(f"{path}: {exc}") from None


def _emit_reports(rows, args, cfg: RunConfig) -> None:
    table = format_table(rows)
    sys.stdout.write(table)
    report_path = args.report if args.report is not None else cfg.paths.get("report")
    if report_path is not None:
        _write_text(Path(report_path), _render_reports(rows, args.seed))
    if args.table is not None:
        _write_text(Path(args.table), table)


def cmd_evaluate(args, cfg: RunConfig) -> int:
    if args.annotations is not None:
        ann_path = Path(args.annotations)
    else:
        ann_path = _path(cfg.paths.get("test_annotations"), cfg, "annotations", "annotation file")
    ckpt = args.checkpoint if args.checkpoint is not None else cfg.paths.get("checkpoint")
    rows: List[Tuple[str, MetricReport]] = []

    if ckpt is not None and not args.no_model:
        model = _load_model(Path(ckpt))
        samples = load_dataset(ann_path)
        items = [item for _, item in samples]
        preds = predict_scores(model, samples)
        rows.append(("Model", report(preds, [it.scores for it in items], names=[it.path for it in items])))
    else:
        items = read_annotations(ann_path)
    if not items:
        raise CLIError(f"{ann_path}: no images to evaluate")
    gts = [it.scores for it in items]
    names = [it.path for it in items]

    if args.predictions is not None:
        pred_path = Path(args.predictions)
        preds = _align_predictions(_read_scores(pred_path), items, pred_path)
        rows.append(("Predictions", report(preds, gts, names=names)))
    if args.random:
        rng = np.random.default_rng([args.seed, 3])
        rows.append(("Random", report([rng.random(len(g)) for g in gts], gts, names=names)))
    rows.extend(baseline_reports(items, cfg.grid))
    _emit_reports(rows, args, cfg)
    return 0


def cmd_baseline(args, cfg: RunConfig) -> int:
    if args.image is not None or args.dims is not None:
        dims, _ = _image_dims(args)
        for mode in BASELINE_MODES:
            c = baseline_crop(dims, mode, cfg.grid)
            print(f"{mode} {c.x1} {c.y1} {c.x2} {c.y2}")
        return 0
    if args.annotations is not None:
        ann_path = Path(args.annotations)
    else:
        ann_path = _path(cfg.paths.get("test_annotations"), cfg, "annotations", "annotation file")
    items = read_annotations(ann_path)
    if not items:
        raise CLIError(f"{ann_path}: no images to evaluate")
    _emit_reports(baseline_reports(items, cfg.grid), args, cfg)
    return 0


def cmd_crop(args, cfg: RunConfig) -> int:
    model = _load_model(_path(args.checkpoint, cfg, "checkpoint", "checkpoint"))
    image = load_ppm(args.image)
    if args.k < 1:
        raise CLIError("-k must be >= 1")
    try:
        ranked = predict_image(model, image, cfg.grid, return_k=10 ** 9, aspect=args.aspect)
    except ValueError as exc:
        raise CLIError(f"{args.image}: {exc}") from None
    k = args.k
    if k > len(ranked):
        log.warning("requested %d crops but %s has only %d candidates; emitting all of them",
                    k, args.image, len(ranked))
        k = len(ranked)
    out_dir = _path(args.out_dir, cfg, "out_dir", "output directory")
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    width = len(str(k))
    lines = [f"# gridcrop crop image {args.image} seed {args.seed} aspect {args.aspect if args.aspect else '--'}",
             "# rank file x1 y1 x2 y2 score"]
    for sc in ranked[:k]:
        c = sc.crop
        name = f"{stem}_crop{sc.rank:0{width}d}.ppm"
        save_ppm(out_dir / name, RawImage(image.pixels[c.x1:c.x2, c.y1:c.y2].copy()))
        lines.append(f"{sc.rank} {name} {c.x1} {c.y1} {c.x2} {c.y2} {sc.score:.4f}")
    _write_text(out_dir / f"{stem}_crops.txt", "\n".join(lines) + "\n")
    print(f"wrote {k} crops to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands accept the global flags too; SUPPRESS keeps them from
    # overwriting values given before the subcommand name
    d = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=d if suppress else None, help="INI run configuration")
    common.add_argument("--seed", type=int, default=d if suppress else None,
                        help="random seed (overrides [train] seed)")
    common.add_argument("--threads", type=int, default=d if suppress else 1,
                        help="BLAS threads; 1 is the reproducible reference mode")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridcrop", description="Grid-anchor image cropping toolkit.",
                                     parents=[_global_flags(False)])
    common = _global_flags(True)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, description=help_text, parents=[common])

    p = add("generate", "enumerate grid-anchor candidate crops for an image")
    p.add_argument("--image", help="PPM image")
    p.add_argument("--dims", type=int, nargs=2, metavar=("H", "W"), help="image height and width")
    p.add_argument("--out", help="crop list file (default: stdout, count on stderr)")
    p.set_defaults(func=cmd_generate)

    p = add("synth", "write a seeded synthetic dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_synth)

    p = add("train", "train a crop scorer")
    p.add_argument("--annotations", help="GAIC-ANN v1 training file")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log", help="training log path (default: <checkpoint>.log)")
    p.add_argument("--epochs", type=int, help="override [train] epochs")
    p.set_defaults(func=cmd_train)

    p = add("evaluate", "metric report for a model, predictions and the baselines")
    p.add_argument("--annotations", help="GAIC-ANN v1 test file")
    p.add_argument("--checkpoint", help="model checkpoint (omit for baselines only)")
    p.add_argument("--no-model", action="store_true", help="ignore any configured checkpoint")
    p.add_argument("--predictions", help="PRED file (or an IMG file used as predictions)")
    p.add_argument("--random", action="store_true", help="add a seeded random-score row")
    p.add_argument("--report", help="key-value report path")
    p.add_argument("--table", help="aligned table path")
    p.set_defaults(func=cmd_evaluate)

    p = add("baseline", "Baseline_L/N/C crops or their metric report (no model needed)")
    p.add_argument("--annotations", help="GAIC-ANN v1 file to score the baselines on")
    p.add_argument("--image", help="print the baseline crops of this PPM image")
    p.add_argument("--dims", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--report", help="key-value report path")
    p.add_argument("--table", help="aligned table path")
    p.set_defaults(func=cmd_baseline)

    p = add("crop", "write the top-k crops of an image")
    p.add_argument("--checkpoint")
    p.add_argument("--image", required=True, help="PPM image")
    p.add_argument("-k", type=int, default=1, help="number of crops")
    p.add_argument("--aspect", type=float, help="keep candidates within 5%% of this width/height ratio")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_crop)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise CLIError("--threads must be >= 1")
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg.train.seed
        with threadpool_limits(limits=args.threads):
            return args.func(args, cfg)
    except (CLIError, ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
