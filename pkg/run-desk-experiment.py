#!/usr/bin/env python3
"""
Run the desk-scale experiment: phantom dataset, training, evaluation and comparison grid.
"""
import subprocess
import sys
from pathlib import Path

SEED = sys.argv[1] if len(sys.argv) > 1 else "0"
EPOCHS = sys.argv[2] if len(sys.argv) > 2 else "30"

TOOL = [sys.executable, "gan/gleason_gan.py"]
data_dir = Path("data/phantoms")
run_dir = Path(f"runs/desk-seed{SEED}")
manifest = data_dir / "manifest.tsv"

# Generate phantoms once, reuse them for later seeds
if not manifest.exists():
    subprocess.run(TOOL + ["phantom", "--n", "128", "--seed", "0", "--out", str(data_dir)], check=True)

subprocess.run(TOOL + ["train", "--data", str(manifest), "--epochs", EPOCHS, "--seed", SEED,
                       "--out", str(run_dir)], check=True)

checkpoints = sorted((run_dir / "checkpoints").glob("epoch_*.ckpt"))
if not checkpoints:
    sys.exit("No checkpoint written, nothing to evaluate")
last = str(checkpoints[-1])

subprocess.run(TOOL + ["eval", "--ckpt", last, "--data", str(manifest), "--n", "256",
                       "--seed", SEED, "--out", str(run_dir / "eval")], check=False)
subprocess.run(TOOL + ["compare", "--ckpt", last, "--data", str(manifest),
                       "--out", str(run_dir / "compare")], check=False)
print(f"Report: {run_dir / 'report.html'}")
