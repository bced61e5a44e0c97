#!/usr/bin/env python3
"""Build the stratified MNIST subset used by the desk-scale experiments.

Source: the per-digit JSON files shipped in the `mnist` npm package
(https://www.npmjs.com/package/mnist), which hold real MNIST digits as
784 floats in [0, 1] rounded to three decimals. Pixels are restored to
bytes with round(v * 255).

Output (standard IDX layout, uncompressed):
  train-images-idx3-ubyte / train-labels-idx1-ubyte   2000 samples, 200 per class
  t10k-images-idx3-ubyte  / t10k-labels-idx1-ubyte     500 samples,  50 per class

Usage: make_mnist_subset.py <path to npm package/src/digits> <out dir>
"""
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 200
TEST_PER_CLASS = 50


def load_digit(src: Path, digit: int):
    flat = json.loads((src / f"{digit}.json").read_text())["data"]
    return [flat[i:i + 784] for i in range(0, len(flat), 784)]


def to_bytes(img):
    return bytes(min(255, max(0, round(v * 255))) for v in img)


def write_idx(out: Path, stem: str, samples):
    with open(out / f"{stem}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(samples), 28, 28))
        for img, _ in samples:
            f.write(img)
    with open(out / f"{stem}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        imgs = load_digit(src, digit)
        train += [(to_bytes(i), digit) for i in imgs[:TRAIN_PER_CLASS]]
        test += [(to_bytes(i), digit) for i in imgs[TRAIN_PER_CLASS:TRAIN_PER_CLASS + TEST_PER_CLASS]]
    rng = random.Random(20200101)
    rng.shuffle(train)
    rng.shuffle(test)
    write_idx(out, "train", train)
    write_idx(out, "t10k", test)


if __name__ == "__main__":
    main()
