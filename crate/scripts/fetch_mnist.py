#!/usr/bin/env python3
"""Build MNIST IDX files from the 10,000 digits bundled in the npm `mnist` package.

The npm package stores each digit class as a flat JSON array of 28x28 images
with pixels rounded to 3 decimals of x/255. Pixels are mapped back to bytes,
the samples are shuffled with a fixed seed, and the first 8,000 become the
training split (train-*) while the remaining 2,000 become the test split
(t10k-*). Output files are gzipped big-endian IDX, matching the layout of the
original MNIST distribution.

Usage: python3 scripts/fetch_mnist.py [OUT_DIR]   (default: data/mnist)
"""
import gzip
import json
import os
import random
import struct
import subprocess
import sys
import tarfile
import tempfile

TRAIN_SIZE = 8000
SEED = 20190101


def write_images(path, images):
    header = struct.pack(">IIII", 0x00000803, len(images), 28, 28)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header)
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    header = struct.pack(">II", 0x00000801, len(labels))
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header)
        f.write(bytes(labels))


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "data/mnist"
    os.makedirs(out_dir, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
            tar.extractall(tmp)
        samples = []
        for digit in range(10):
            with open(os.path.join(tmp, "package", "src", "digits", f"{digit}.json")) as f:
                raw = json.load(f)["data"]
            for start in range(0, len(raw), 784):
                pixels = [min(255, max(0, round(v * 255))) for v in raw[start:start + 784]]
                samples.append((pixels, digit))
    random.Random(SEED).shuffle(samples)
    splits = {"train": samples[:TRAIN_SIZE], "t10k": samples[TRAIN_SIZE:]}
    for prefix, rows in splits.items():
        write_images(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte.gz"), [p for p, _ in rows])
        write_labels(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte.gz"), [y for _, y in rows])
        print(f"{prefix}: {len(rows)} samples")


if __name__ == "__main__":
    main()
