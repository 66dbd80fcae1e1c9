"""``ctbkit`` command line.

Exit codes: 0 success, 1 I/O or parse failure, 2 validation, shape or
capacity failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path


from .baselines import BaselineConfig, baseline_predictions
from .dataset import (
    ContextualBlock,
    ImageAnnotation,
    ParseError,
    PredictionSet,
    ValidationError,
    compute_stats,
    parse_ground_truth,
    parse_predictions,
    serialize_predictions,
)
from .embeddings import (
    ArchiveError,
    CapacityError,
    EmbeddingConfig,
    FeatureMap,
    ShapeError,
    TensorArchive,
    build_tokens,
    extractor_shapes,
    load_archive,
)
from .generator import N_HEADS, N_LAYERS, GeneratorWeights, infer_blocks
from .metrics import PRESET_ALIASES, PRESETS, evaluate

log = logging.getLogger("ctbkit")

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2


class _Usage(Exception):
    pass


def write_atomic(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(args, text: str) -> None:
    if args.out:
        write_atomic(args.out, text.encode("utf-8"))
    else:
        sys.stdout.write(text)


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise _Usage(f"--{name.replace('_', '-')} is required for {args.command}")


def _read(path) -> bytes:
    return Path(path).read_bytes()


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    if args.gt is None and args.pred is None:
        raise _Usage("validate needs --gt or --pred")
    problems = []
    if args.gt is not None:
        try:
            parse_ground_truth(_read(args.gt))
        except ValidationError as exc:
            problems += [f"{args.gt}: {v}" for v in exc.violations]
    if args.pred is not None:
        try:
            parse_predictions(_read(args.pred))
        except ValidationError as exc:
            problems += [f"{args.pred}: {v}" for v in exc.violations]
    _emit(args, "".join(p + "\n" for p in problems) or "ok\n")
    return EXIT_INVALID if problems else EXIT_OK


def cmd_stats(args) -> int:
    _need(args, "gt")
    ds = parse_ground_truth(_read(args.gt))
    _emit(args, compute_stats(ds).format())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _need(args, "gt", "pred")
    gt = parse_ground_truth(_read(args.gt))
    pred = parse_predictions(_read(args.pred))
    schedule = {name: PRESETS[name] for name in PRESET_ALIASES[args.iou]}
    report = evaluate(gt, pred, schedule, mode=args.iou_mode)
    _emit(args, report.to_text() + "\n")
    return EXIT_OK


def cmd_group_baseline(args) -> int:
    _need(args, "out")
    if args.pred is not None:
        images = parse_predictions(_read(args.pred), allow_unassigned=True).images
    elif args.gt is not None:
        images = parse_ground_truth(_read(args.gt)).images
    else:
        raise _Usage("group-baseline needs --gt or --pred")
    preds = baseline_predictions(images, BaselineConfig(line_overlap=args.line_overlap))
    write_atomic(args.out, serialize_predictions(preds))
    return EXIT_OK


def _feature_map(archive: TensorArchive, image_id) -> FeatureMap:
    key = f"featmap.{image_id}"
    if key in archive:
        data, stride = archive[key], archive[f"stride.{image_id}"]
    else:
        data, stride = archive["featmap"], archive["stride"]
    if stride.size != 1:
        raise ShapeError(f"stride must be a scalar, got shape {stride.shape}")
    return FeatureMap(data, float(stride.reshape(-1)[0]))


def cmd_infer(args) -> int:
    _need(args, "pred", "features", "weights", "out")
    cfg = EmbeddingConfig(d=args.d, roi=args.roi, n_index=args.n_index)
    dets = parse_predictions(_read(args.pred), allow_unassigned=True)
    feats = load_archive(_read(args.features))
    weights = load_archive(_read(args.weights))
    gen = GeneratorWeights.from_archive(weights, cfg, layers=args.layers, heads=args.heads)

    images = []
    for im in dets.images:
        if len(im.units) > cfg.n_index:
            raise CapacityError(f"image {im.image_id!r}: {len(im.units)} detections exceed N={cfg.n_index}")
        fm = _feature_map(feats, im.image_id)
        weights.check(extractor_shapes(cfg, fm.channels))
        tokens = build_tokens([u.polygon for u in im.units], fm, weights, cfg, seed=args.seed)
        pred = infer_blocks(tokens, gen)
        kept = sorted(r for b in pred.blocks for r in b)
        blocks = tuple(
            ContextualBlock(f"b{k}", tuple(im.units[r].unit_id for r in b)) for k, b in enumerate(pred.blocks)
        )
        images.append(ImageAnnotation(im.image_id, im.width, im.height, tuple(im.units[r] for r in kept), blocks))
    write_atomic(args.out, serialize_predictions(PredictionSet(tuple(images))))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "stats": cmd_stats,
    "evaluate": cmd_evaluate,
    "group-baseline": cmd_group_baseline,
    "infer": cmd_infer,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--gt", type=Path, help="ground-truth annotation file")
    common.add_argument("--pred", type=Path, help="prediction / detection file")
    common.add_argument("--weights", type=Path, help="CTBW weight archive")
    common.add_argument("--features", type=Path, help="CTBW feature-map archive")
    common.add_argument("--out", type=Path, help="output file (stdout when omitted, where allowed)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--d", type=int, default=EmbeddingConfig.d, help="embedding width")
    common.add_argument("--roi", type=int, default=EmbeddingConfig.roi, help="ROI grid side")
    common.add_argument("--n-index", type=int, default=EmbeddingConfig.n_index, dest="n_index")
    common.add_argument("--heads", type=int, default=N_HEADS)
    common.add_argument("--layers", type=int, default=N_LAYERS)
    common.add_argument("--iou", choices=sorted(PRESET_ALIASES), default="all")
    common.add_argument("--iou-mode", choices=["polygon", "bounds"], default="polygon", dest="iou_mode")
    common.add_argument("--line-overlap", type=float, default=BaselineConfig.line_overlap, dest="line_overlap")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ctbkit", description="Contextual text block toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"ctbkit: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ShapeError, CapacityError) as exc:
        print(f"ctbkit: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ParseError, ArchiveError) as exc:
        print(f"ctbkit: parse error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"ctbkit: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"ctbkit: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
