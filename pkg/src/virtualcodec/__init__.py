"""Learned image down/up-sampling around a standard JPEG codec.

A feature description network (FDNN) shrinks the image to half size, a
baseline JPEG codec stores it, and a post-processing network (PPNN)
restores full resolution. Because the codec has no useful gradient, the
FDNN is trained through a virtual codec network (VCNN) that imitates
"JPEG then PPNN".
"""

from .codec import Bitstream, bpp, jpeg_decode, jpeg_encode, quantize8
from .evaluate import EvalRecord, compress, decompress, pipeline, rd_curve
from .image import ResampleMethod, load_image, psnr, resample, save_image, ssim
from .networks import FDNN, PPNN, VCNN, build_network, load_checkpoint, save_checkpoint
from .trainer import TrainingConfig, load_config, run_algorithm1

__version__ = "0.1.0"
