#!/usr/bin/env python3
"""
gleason_gan.py - Train and sample a conditional DCGAN for 32x32 Gleason-score images.

    python gan/gleason_gan.py phantom --n 128 --seed 1 --out data/phantoms
    python gan/gleason_gan.py train --data data/phantoms/manifest.tsv --epochs 30 --seed 11
    python gan/gleason_gan.py generate --ckpt runs/latest/checkpoints/epoch_030.ckpt --score 9 --n 8
"""
import sys

from cgan.cli import run

if __name__ == '__main__':
    sys.exit(run())
