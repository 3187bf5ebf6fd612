"""
The JPEG bridge on its own
==========================

Everything the learned pipeline sends over the wire is an ordinary
baseline JPEG. This script shows what that codec does to a half-size
image at the four training qualities and how a no-learning
down/up-sampling scheme compares with coding the full image.
"""

import numpy as np

from virtualcodec import codec, evaluate
from virtualcodec.image import ResampleMethod, psnr, resample, ssim
from virtualcodec.sample_data import test_images

images = test_images()
x = images["camera"]
print("test image", x.shape)

# The quantization table is the only thing the quality factor changes.
for q in (5, 10, 20, 40):
    t = codec.quantization_table(q)
    print(f"q={q:3d}  DC step {t[0, 0]:3d}  largest step {t.max():3d}")

# Half-size description: bicubic down, then the codec.
y = resample(x, 0.5, ResampleMethod.BICUBIC)
for q in (5, 10, 20, 40):
    bs = codec.jpeg_encode(codec.quantize8(y), q, original_dims=x.shape)
    z = codec.jpeg_decode(bs)
    up = np.clip(resample(z, 2, ResampleMethod.BICUBIC), 0, 1)
    print(f"half-size q={q:3d}: {codec.bpp(bs):.3f} bpp  "
          f"PSNR {psnr(up, x):.2f} dB  SSIM {ssim(up, x):.3f}")

# The full-resolution baseline at the low qualities used for comparison.
for q in evaluate.DEFAULT_BASELINE_QUALITIES:
    out, bs = evaluate.jpeg_only(x, q)
    print(f"full-size q={q:3d}: {codec.bpp(bs):.3f} bpp  "
          f"PSNR {psnr(out, x):.2f} dB  SSIM {ssim(out, x):.3f}")

# Streams are standard files; write one next to its sidecar.
bs = codec.jpeg_encode(codec.quantize8(y), 10, original_dims=x.shape)
side = codec.write_bitstream("camera_half_q10.jpg", bs)
print("wrote camera_half_q10.jpg and", side)
