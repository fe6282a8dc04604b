#!/usr/bin/env python3
"""Write IDX files from the digit JSON shipped in the `mnist` npm package.

The package stores 10,000 MNIST digits as pixel/255 rounded to three decimals,
so round(v * 255) recovers the original bytes. They are shuffled with a fixed
seed and split into train/test pools.

    npm pack mnist && tar xf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package data/mnist
"""
import json
import struct
import sys
from pathlib import Path

import numpy as np

N_TRAIN = 7000


def write_idx(path, arr):
    code = 0x08  # unsigned byte
    header = struct.pack(">HBB", 0, code, arr.ndim) + b"".join(struct.pack(">I", d) for d in arr.shape)
    path.write_bytes(header + arr.astype(np.uint8).tobytes())


def main():
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    images, labels = [], []
    for digit in range(10):
        data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        pix = np.rint(np.asarray(data, dtype=np.float64) * 255).astype(np.uint8).reshape(-1, 28, 28)
        images.append(pix)
        labels.append(np.full(len(pix), digit, dtype=np.uint8))
    images, labels = np.concatenate(images), np.concatenate(labels)
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte", images[:N_TRAIN])
    write_idx(out / "train-labels-idx1-ubyte", labels[:N_TRAIN])
    write_idx(out / "t10k-images-idx3-ubyte", images[N_TRAIN:])
    write_idx(out / "t10k-labels-idx1-ubyte", labels[N_TRAIN:])
    print(f"{N_TRAIN} train / {len(labels) - N_TRAIN} test images -> {out}")


if __name__ == "__main__":
    main()
