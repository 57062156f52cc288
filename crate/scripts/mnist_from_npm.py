#!/usr/bin/env python3
"""Build MNIST IDX files from the digits bundled in the npm `mnist` package.

The package ships 10,000 real MNIST digits as JSON (pixel values rounded to
three decimals). This script splits them per class, every fifth sample going
to the test split, and writes the standard four IDX files:

    <out>/mnist/train-images-idx3-ubyte   (~8000 images)
    <out>/mnist/train-labels-idx1-ubyte
    <out>/mnist/t10k-images-idx3-ubyte    (~2000 images)
    <out>/mnist/t10k-labels-idx1-ubyte

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data
    export MAGDROP_DATA_ROOT=$PWD/data

Samples are interleaved by class so that first-K-per-class subsets are
balanced and keep the original order within each class.
"""
import json
import struct
import sys
from pathlib import Path


def load_digits(digits_dir: Path):
    per_class = []
    for d in range(10):
        flat = json.loads((digits_dir / f"{d}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        per_class.append([flat[i:i + 784] for i in range(0, len(flat), 784)])
    return per_class


def interleave(per_class):
    out = []
    longest = max(len(c) for c in per_class)
    for i in range(longest):
        for label, samples in enumerate(per_class):
            if i < len(samples):
                out.append((label, samples[i]))
    return out


def write_idx(prefix: Path, records):
    with open(str(prefix) + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(records), 28, 28))
        for _, pixels in records:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in pixels))
    with open(str(prefix) + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(records)))
        f.write(bytes(label for label, _ in records))


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    digits_dir, out = Path(sys.argv[1]), Path(sys.argv[2]) / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    per_class = load_digits(digits_dir)
    train = [[s for i, s in enumerate(c) if i % 5 != 4] for c in per_class]
    test = [[s for i, s in enumerate(c) if i % 5 == 4] for c in per_class]
    write_idx(out / "train", interleave(train))
    write_idx(out / "t10k", interleave(test))
    print(f"wrote {sum(map(len, train))} train / {sum(map(len, test))} test images to {out}")


if __name__ == "__main__":
    main()
