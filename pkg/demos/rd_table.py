"""
A rate-distortion table
=======================

Rows of (image, method, quality, PSNR, SSIM, bpp) for the bundled test
images. With checkpoints from ``desk_training.py`` the learned pipeline
is included; otherwise only the two JPEG baselines are measured.
"""

from pathlib import Path

from virtualcodec import evaluate, sample_data
from virtualcodec.networks import FDNN, PPNN, load_checkpoint

ckdir = Path("checkpoints/desk")
fdnn = ppnn = None
if (ckdir / "fdnn_final.ckpt").exists():
    fdnn = load_checkpoint(ckdir / "fdnn_final.ckpt", FDNN)
    ppnn = load_checkpoint(ckdir / "ppnn_final.ckpt", PPNN)

images = sample_data.test_images(size=128)
rows = evaluate.rd_curve(images, fdnn, ppnn, bicubic=True)
means = evaluate.mean_rows(rows)

for r in means:
    print(f"{r.method:13s} q={r.quality:3d}  {r.bpp:.3f} bpp  {r.psnr_db:.2f} dB  SSIM {r.ssim:.3f}")

evaluate.write_csv("rd_table.csv", rows + means)
print("full table in rd_table.csv")
