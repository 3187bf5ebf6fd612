"""Offline stand-in data built from scikit-image's bundled sample images.

``test_images`` gives an 8-image evaluation set and ``desk_corpus`` small
training patches from a disjoint pool of images.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage
from skimage import data as skdata

from .image import as_image, extract_patches

TEST_NAMES = ("camera", "astronaut", "coffee", "chelsea", "rocket", "moon", "coins", "page")
TRAIN_NAMES = ("stereo_motorcycle", "hubble_deep_field", "retina",
               "immunohistochemistry", "grass", "gravel", "brick", "text", "cell",
               "microaneurysms", "clock")


def _gray(name) -> np.ndarray:
    arr = getattr(skdata, name)()
    if isinstance(arr, tuple):  # stereo pairs
        arr = arr[0]
    if arr.ndim == 3:
        arr = np.asarray(PILImage.fromarray(arr[..., :3]).convert("L"))
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    return as_image(arr / 255.0)


def _center(img, size):
    h, w = img.shape
    s = min(size, h // 2 * 2, w // 2 * 2)
    t, l = (h - s) // 2, (w - s) // 2
    return img[t:t + s, l:l + s]


def test_images(size=256) -> dict:
    """Eight grayscale images, center-cropped to at most ``size`` x ``size``."""
    return {name: _center(_gray(name), size) for name in TEST_NAMES}


def desk_corpus(n=32, size=80, seed=0, min_std=0.03) -> list[np.ndarray]:
    """``n`` random ``size`` x ``size`` crops spread over the training pool.

    Near-flat crops (intensity std below ``min_std``) are redrawn.
    """
    pool = [_gray(name) for name in TRAIN_NAMES]
    rng = np.random.default_rng(seed)
    out = []
    i = 0
    while len(out) < n:
        img = pool[i % len(pool)]
        i += 1
        for _ in range(100):
            (patch,) = extract_patches(img, size, random_crops=1, seed=int(rng.integers(2**31)))
            if patch.std() >= min_std:
                out.append(patch)
                break
    return out
