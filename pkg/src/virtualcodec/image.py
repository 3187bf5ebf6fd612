"""Grayscale image utilities: loading, resampling, patches, PSNR and SSIM.

Images are plain 2-D ``float64`` arrays of shape ``(height, width)`` with
intensities nominally in ``[0, 1]``.
"""

from __future__ import annotations

import enum
import math
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError
from scipy import ndimage

PSNR_CAP_DB = 100.0
SSIM_C1 = 1e-4
SSIM_C2 = 9e-4


class ImageLoadError(Exception):
    """Base class for raster loading failures."""


class ImageNotFoundError(ImageLoadError, FileNotFoundError):
    pass


class ImageDecodeError(ImageLoadError, ValueError):
    pass


class ResampleMethod(enum.Enum):
    BICUBIC = "bicubic"
    NEAREST = "nearest"
    LINEAR = "linear"
    AREA = "area"
    LANCZOS4 = "lanczos4"


INTERPOLATION_METHODS = tuple(ResampleMethod)


def as_image(a) -> np.ndarray:
    img = np.asarray(a, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return img


def load_image(path) -> np.ndarray:
    """Read a raster as luma intensities in [0, 1] (8-bit value / 255)."""
    path = Path(path)
    if not path.is_file():
        raise ImageNotFoundError(f"no such image file: {path}")
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                return np.clip(arr / 65535.0, 0.0, 1.0)
            gray = im.convert("L")
            return np.asarray(gray, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc


def save_image(path, img) -> None:
    """Clamp, quantize to 8 bits and write; the format follows the suffix."""
    from .codec import quantize8

    PILImage.fromarray(quantize8(as_image(img)), mode="L").save(path)


# Resampling. Each axis gets a dense (out, in) weight matrix; rows sum to 1.

def _cubic(x, a=-0.75):
    x = np.abs(x)
    return np.where(
        x <= 1,
        ((a + 2) * x - (a + 3)) * x * x + 1,
        np.where(x < 2, ((a * x - 5 * a) * x + 8 * a) * x - 4 * a, 0.0),
    )


def _lanczos4(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < 4, np.sinc(x) * np.sinc(x / 4), 0.0)


def _tap_weights(n_in, n_out, kernel, support):
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    first = np.floor(centers).astype(int) - support + 1
    taps = first[:, None] + np.arange(2 * support)[None, :]
    w = kernel(centers[:, None] - taps)
    w /= w.sum(axis=1, keepdims=True)
    W = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), 2 * support)
    np.add.at(W, (rows, np.clip(taps, 0, n_in - 1).ravel()), w.ravel())
    return W


def _axis_weights(n_in, n_out, method):
    if method is ResampleMethod.NEAREST:
        W = np.zeros((n_out, n_in))
        src = np.minimum(np.floor(np.arange(n_out) * (n_in / n_out)).astype(int), n_in - 1)
        W[np.arange(n_out), src] = 1.0
        return W
    if method is ResampleMethod.AREA:
        scale = n_in / n_out
        lo = np.arange(n_out)[:, None] * scale
        hi = lo + scale
        left = np.arange(n_in)[None, :]
        overlap = np.clip(np.minimum(hi, left + 1) - np.maximum(lo, left), 0.0, None)
        return overlap / overlap.sum(axis=1, keepdims=True)
    if method is ResampleMethod.LINEAR:
        return _tap_weights(n_in, n_out, lambda x: np.clip(1 - np.abs(x), 0, None), 1)
    if method is ResampleMethod.BICUBIC:
        return _tap_weights(n_in, n_out, _cubic, 2)
    if method is ResampleMethod.LANCZOS4:
        return _tap_weights(n_in, n_out, _lanczos4, 4)
    raise ValueError(f"unknown resample method {method!r}")


def output_size(n, factor):
    # half-up rounding, not banker's rounding
    return int(math.floor(n * factor + 0.5))


def resample(img, factor, method=ResampleMethod.BICUBIC) -> np.ndarray:
    """Rescale by ``factor`` with one of the five interpolation kernels.

    Interpolating kernels (LINEAR, BICUBIC, LANCZOS4) sample at half-pixel
    centers and replicate the border. AREA averages the source footprint of
    each output pixel. Every kernel has unit DC gain, so constants survive.
    """
    img = as_image(img)
    method = ResampleMethod(method)
    if not factor > 0:
        raise ValueError(f"resample factor must be positive, got {factor}")
    h, w = img.shape
    oh, ow = output_size(h, factor), output_size(w, factor)
    if oh < 1 or ow < 1:
        raise ValueError(f"factor {factor} maps {h}x{w} to an empty image")
    return _axis_weights(h, oh, method) @ img @ _axis_weights(w, ow, method).T


# Patches

def _dihedral(patch, rotate, flip):
    rots = range(4) if rotate else (0,)
    flips = (False, True) if flip else (False,)
    return [np.rot90(patch[:, ::-1] if f else patch, k).copy() for f in flips for k in rots]


def extract_patches(img, size, *, stride=None, random_crops=0, rotate=False,
                    flip=False, seed=0) -> list[np.ndarray]:
    """Cut ``size x size`` patches, optionally augmented.

    Crop placement: ``random_crops > 0`` draws that many positions from
    ``seed``; else ``stride`` tiles the image; else a single center crop.
    Each crop then expands to its 90-degree rotations (``rotate``) and their
    horizontal mirrors (``flip``), so a crop yields 1, 2, 4 or 8 patches.
    """
    img = as_image(img)
    h, w = img.shape
    if size < 1 or size > min(h, w):
        raise ValueError(f"patch size {size} does not fit a {h}x{w} image")
    if random_crops:
        rng = np.random.default_rng(seed)
        tops = rng.integers(0, h - size + 1, size=random_crops)
        lefts = rng.integers(0, w - size + 1, size=random_crops)
        corners = list(zip(tops.tolist(), lefts.tolist()))
    elif stride:
        corners = [(t, l) for t in range(0, h - size + 1, stride)
                   for l in range(0, w - size + 1, stride)]
    else:
        corners = [((h - size) // 2, (w - size) // 2)]
    patches = []
    for t, l in corners:
        patches.extend(_dihedral(img[t:t + size, l:l + size], rotate, flip))
    return patches


def training_patches(images, size=160, *, seed=0) -> list[np.ndarray]:
    """Default augmentation: one random crop per image times the 8 dihedral views."""
    out = []
    for i, img in enumerate(images):
        out.extend(extract_patches(img, size, random_crops=1, rotate=True,
                                   flip=True, seed=[seed, i]))
    return out


# Quality metrics

def _check_pair(a, b):
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for peak 1.0; identical images give ``PSNR_CAP_DB``."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size=11, sigma=1.5) -> np.ndarray:
    """Normalized 1-D window; ``sigma=None`` gives a uniform box."""
    if sigma is None:
        return np.full(size, 1.0 / size)
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim_map(a, b, *, window=11, sigma=1.5, c1=SSIM_C1, c2=SSIM_C2) -> np.ndarray:
    """Per-window SSIM over the valid region (windows fully inside the image)."""
    a, b = _check_pair(a, b)
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    r = window // 2

    def filt(x):
        y = ndimage.correlate1d(x, g, axis=0, mode="reflect")
        y = ndimage.correlate1d(y, g, axis=1, mode="reflect")
        return y[r:x.shape[0] - window + 1 + r, r:x.shape[1] - window + 1 + r]

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(a, b, **kw) -> float:
    """Mean SSIM index, in [-1, 1]."""
    return float(np.mean(ssim_map(a, b, **kw)))
