"""Deployable pipeline (FDNN -> JPEG -> PPNN), baselines and RD tables."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import codec
from .image import ResampleMethod, as_image, load_image, psnr, resample, save_image, ssim
from .networks import Network, OddDimensionsError, forward

METHOD_OURS = "ours"
METHOD_JPEG = "jpeg"
METHOD_BICUBIC = "bicubic_jpeg"
DEFAULT_QUALITIES = (5, 10, 20, 40)
DEFAULT_BASELINE_QUALITIES = (2, 3, 4, 5, 10)


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    method: str
    quality: int
    psnr_db: float
    ssim: float
    bpp: float


def _even(x):
    if x.shape[0] % 2 or x.shape[1] % 2:
        raise OddDimensionsError(f"image dims must be even, got {x.shape}")


def compress(x, fdnn: Network, quality: int) -> codec.Bitstream:
    """Half-size description through FDNN, then baseline JPEG."""
    x = as_image(x)
    _even(x)
    y = forward(fdnn, x)
    return codec.jpeg_encode(codec.quantize8(y), quality, original_dims=x.shape)


def decompress(bs: codec.Bitstream, ppnn: Network) -> np.ndarray:
    """Decode and post-process; output clamped to [0, 1] at the original size."""
    z = codec.jpeg_decode(bs)
    out = np.clip(forward(ppnn, z), 0.0, 1.0)
    if bs.original_dims is not None and out.shape != tuple(bs.original_dims):
        raise codec.SidecarError(
            f"restored size {out.shape} differs from the original {tuple(bs.original_dims)}")
    return out


def pipeline(x, fdnn, ppnn, quality):
    bs = compress(x, fdnn, quality)
    return decompress(bs, ppnn), bs


def bicubic_jpeg(x, quality):
    """No-learning baseline: bicubic down, JPEG, bicubic up."""
    x = as_image(x)
    _even(x)
    y = resample(x, 0.5, ResampleMethod.BICUBIC)
    bs = codec.jpeg_encode(codec.quantize8(y), quality, original_dims=x.shape)
    z = codec.jpeg_decode(bs)
    return np.clip(resample(z, 2, ResampleMethod.BICUBIC), 0.0, 1.0), bs


def jpeg_only(x, quality):
    """Full-resolution JPEG of the input."""
    x = as_image(x)
    bs = codec.jpeg_encode(codec.quantize8(x), quality, original_dims=x.shape)
    return codec.jpeg_decode(bs), bs


def _record(image_id, method, quality, x, out, bs):
    return EvalRecord(image_id, method, int(quality), psnr(out, x), ssim(out, x), codec.bpp(bs))


def rd_curve(images, fdnn=None, ppnn=None, qualities=DEFAULT_QUALITIES,
             baseline_qualities=DEFAULT_BASELINE_QUALITIES, bicubic=False,
             restored_dir=None) -> list[EvalRecord]:
    """Rows ordered by image id, then method, then quality.

    ``images`` maps image id to a 2-D array. The learned pipeline is only
    evaluated when both networks are given; its outputs are also saved as
    ``<id>_q<quality>.png`` when ``restored_dir`` is set.
    """
    rows = []
    if restored_dir is not None:
        Path(restored_dir).mkdir(parents=True, exist_ok=True)
    for image_id in sorted(images):
        x = as_image(images[image_id])
        if fdnn is not None and ppnn is not None:
            for q in qualities:
                out, bs = pipeline(x, fdnn, ppnn, q)
                rows.append(_record(image_id, METHOD_OURS, q, x, out, bs))
                if restored_dir is not None:
                    save_image(Path(restored_dir) / f"{image_id}_q{q:03d}.png", out)
        if bicubic:
            for q in qualities:
                out, bs = bicubic_jpeg(x, q)
                rows.append(_record(image_id, METHOD_BICUBIC, q, x, out, bs))
        for q in baseline_qualities:
            out, bs = jpeg_only(x, q)
            rows.append(_record(image_id, METHOD_JPEG, q, x, out, bs))
    return sorted(rows, key=lambda r: (r.image_id, r.method, r.quality))


def mean_rows(rows) -> list[EvalRecord]:
    """One ``image_id="mean"`` row per (method, quality)."""
    groups = {}
    for r in rows:
        groups.setdefault((r.method, r.quality), []).append(r)
    return [EvalRecord("mean", m, q, float(np.mean([r.psnr_db for r in g])),
                       float(np.mean([r.ssim for r in g])), float(np.mean([r.bpp for r in g])))
            for (m, q), g in sorted(groups.items())]


CSV_COLUMNS = tuple(f.name for f in fields(EvalRecord))


def _write_rows(fh, rows):
    w = csv.DictWriter(fh, CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        d = asdict(r)
        d["psnr_db"] = f"{r.psnr_db:.6f}"
        d["ssim"] = f"{r.ssim:.6f}"
        d["bpp"] = f"{r.bpp:.6f}"
        w.writerow(d)


def write_csv(path_or_file, rows) -> None:
    """Write rows to a path or an open text file."""
    if hasattr(path_or_file, "write"):
        _write_rows(path_or_file, rows)
        return
    with open(path_or_file, "w", newline="") as fh:
        _write_rows(fh, rows)


def read_csv(path) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        return [EvalRecord(r["image_id"], r["method"], int(r["quality"]), float(r["psnr_db"]),
                           float(r["ssim"]), float(r["bpp"])) for r in csv.DictReader(fh)]


def load_test_images(directory, suffixes=(".png", ".bmp", ".pgm", ".tif", ".tiff", ".jpg")):
    """``{stem: image}`` for every raster in ``directory``, cropped to even dims."""
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in suffixes) \
        if directory.is_dir() else []
    out = {}
    for f in files:
        img = load_image(f)
        out[f.stem] = img[:img.shape[0] // 2 * 2, :img.shape[1] // 2 * 2]
    return out
