"""
Training the three networks at desk scale
=========================================

32 crops of 80x80, two outer iterations with five epochs per phase. On
one CPU core this takes about four minutes. Afterwards the trained
FDNN/PPNN pair is compared with the same networks before training and
with plain bicubic resampling around the codec.
"""

import logging

import numpy as np

from virtualcodec import evaluate, sample_data, trainer
from virtualcodec.image import psnr
from virtualcodec.networks import FDNN, PPNN, build_network

logging.basicConfig(level=logging.INFO, format="%(message)s")

corpus = sample_data.desk_corpus(n=32, size=80, seed=0)
cfg = trainer.TrainingConfig(K=2, p=5, q=5, m=4, n=32, patch_size=80,
                             checkpoint_dir="checkpoints/desk")
print("log rows expected:", cfg.total_epochs)

result = trainer.run_algorithm1(cfg, corpus)

# Loss per epoch, straight from the CSV log.
for row in trainer.read_log(result.log_path):
    print(row["outer_iter"], row["phase"], row["epoch"], row["loss"])

# End-to-end quality on the training crops, averaged over qualities.
untrained = build_network(FDNN, seed=cfg.seed), build_network(PPNN, seed=cfg.seed + 1)
for q in cfg.quality_factors:
    ours = np.mean([psnr(evaluate.pipeline(x, result.fdnn, result.ppnn, q)[0], x) for x in corpus])
    init = np.mean([psnr(evaluate.pipeline(x, *untrained, q)[0], x) for x in corpus])
    bic = np.mean([psnr(evaluate.bicubic_jpeg(x, q)[0], x) for x in corpus])
    print(f"q={q:2d}  trained {ours:.2f} dB  untrained {init:.2f} dB  bicubic {bic:.2f} dB")
