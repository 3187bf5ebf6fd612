"""``virtualcodec`` command line: train, compress, decompress, rd-curve.

Exit status is 0 on success, 2 for bad input (missing or malformed files,
invalid arguments) and 1 for failures inside training or evaluation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import codec, evaluate, sample_data, trainer
from .image import ImageLoadError, load_image, save_image
from .networks import FDNN, PPNN, CheckpointError, OddDimensionsError, load_checkpoint

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2

INPUT_ERRORS = (ImageLoadError, CheckpointError, codec.CorruptStreamError, codec.SidecarError,
                OddDimensionsError, trainer.ConfigError, FileNotFoundError, ValueError)

log = logging.getLogger("virtualcodec")


class InputError(Exception):
    pass


def _checkpoint(args, attr, network_id, final_name):
    path = getattr(args, attr)
    if path is None:
        path = Path(args.checkpoint_dir) / final_name
    if not Path(path).is_file():
        raise InputError(f"checkpoint not found: {path}")
    return load_checkpoint(path, network_id)


def cmd_train(args) -> int:
    overrides = dict(seed=args.seed, checkpoint_dir=args.checkpoint_dir, corpus_path=args.corpus)
    cfg = trainer.load_config(args.config, **overrides) if args.config else \
        trainer.TrainingConfig(**{k: v for k, v in overrides.items() if v is not None})
    corpus = None
    if cfg.corpus_path is None:
        log.info("no corpus_path configured; using the bundled desk corpus")
        corpus = sample_data.desk_corpus(n=cfg.n or 32, size=cfg.patch_size, seed=cfg.seed)

    def progress(k, phase):
        print(f"[iteration {k}/{cfg.K}] {phase}", flush=True)

    try:
        res = trainer.run_algorithm1(cfg, corpus, resume=args.resume, progress=progress)
    except trainer.TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    results = res.values() if isinstance(res, dict) else [res]
    for r in results:
        print(f"checkpoints in {r.checkpoint_dir}, log {r.log_path}")
    return EXIT_OK


def cmd_compress(args) -> int:
    fdnn = _checkpoint(args, "fdnn", FDNN, "fdnn_final.ckpt")
    x = load_image(args.input)
    bs = evaluate.compress(x, fdnn, args.quality)
    out = Path(args.output) if args.output else Path(args.input).with_suffix(".jpg")
    if out.resolve() == Path(args.input).resolve():
        raise InputError("output would overwrite the input")
    codec.write_bitstream(out, bs)
    print(f"{out}\t{bs.coded_dims[0]}x{bs.coded_dims[1]}\tbpp={codec.bpp(bs):.6f}")
    return EXIT_OK


def cmd_decompress(args) -> int:
    ppnn = _checkpoint(args, "ppnn", PPNN, "ppnn_final.ckpt")
    bs = codec.read_bitstream(args.input)
    restored = evaluate.decompress(bs, ppnn)
    out = Path(args.output) if args.output else Path(args.input).with_suffix(".restored.png")
    save_image(out, restored)
    print(f"{out}\t{restored.shape[0]}x{restored.shape[1]}")
    return EXIT_OK


def cmd_rd_curve(args) -> int:
    if args.test_dir:
        images = evaluate.load_test_images(args.test_dir)
        if not images:
            raise InputError(f"no test images in {args.test_dir}")
    else:
        images = sample_data.test_images()
    fdnn = ppnn = None
    if not args.baseline_only:
        fdnn = _checkpoint(args, "fdnn", FDNN, "fdnn_final.ckpt")
        ppnn = _checkpoint(args, "ppnn", PPNN, "ppnn_final.ckpt")
    rows = evaluate.rd_curve(images, fdnn, ppnn, qualities=args.quality,
                             baseline_qualities=args.baseline_quality, bicubic=args.bicubic,
                             restored_dir=args.save_restored)
    if args.mean:
        rows = rows + evaluate.mean_rows(rows)
    if args.output:
        evaluate.write_csv(args.output, rows)
        print(f"{len(rows)} rows -> {args.output}")
    else:
        evaluate.write_csv(sys.stdout, rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="virtualcodec", description="Learned half-size coding around a baseline JPEG codec.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the alternating training schedule")
    p.add_argument("--config", help="INI file with a [training] section")
    p.add_argument("--checkpoint-dir", help="override checkpoint_dir")
    p.add_argument("--corpus", help="override corpus_path (directory of training images)")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true", help="skip phases already completed")
    p.set_defaults(func=cmd_train)

    def add_ckpt(p, which):
        p.add_argument("--checkpoint-dir", default="checkpoints",
                       help="directory holding fdnn_final.ckpt / ppnn_final.ckpt")
        for w in which:
            p.add_argument(f"--{w}", help=f"explicit {w.upper()} checkpoint file")

    p = sub.add_parser("compress", help="image -> half-size JPEG plus sidecar")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="output .jpg (default: input name with .jpg)")
    p.add_argument("--quality", type=int, required=True, help="JPEG quality factor 1..100")
    add_ckpt(p, ["fdnn"])
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="JPEG plus sidecar -> restored image")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="output image (default: <input>.restored.png)")
    add_ckpt(p, ["ppnn"])
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("rd-curve", help="rate-distortion table as CSV")
    p.add_argument("test_dir", nargs="?", help="directory of test images (default: bundled set)")
    p.add_argument("--quality", type=int, nargs="+", default=list(evaluate.DEFAULT_QUALITIES))
    p.add_argument("--baseline-quality", type=int, nargs="+",
                   default=list(evaluate.DEFAULT_BASELINE_QUALITIES),
                   help="quality list for the full-resolution JPEG series")
    p.add_argument("--bicubic", action="store_true",
                   help="also emit the bicubic-down, JPEG, bicubic-up series")
    p.add_argument("--baseline-only", action="store_true", help="skip the learned pipeline")
    p.add_argument("--mean", action="store_true", help="append per-method mean rows")
    p.add_argument("--save-restored", help="write restored images of the learned pipeline here")
    p.add_argument("-o", "--output", help="CSV path (default: stdout)")
    add_ckpt(p, ["fdnn", "ppnn"])
    p.set_defaults(func=cmd_rd_curve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (InputError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - the exit code is the contract
        log.debug("internal failure", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
