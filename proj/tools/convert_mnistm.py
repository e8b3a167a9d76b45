#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Convert MNIST-M to the IDX cache layout.

Expects the pickled bundle produced by the usual BSDS500 blending script
(keys train/valid/test, uint8 arrays of shape (n, 28, 28, 3)). MNIST-M
images carry the MNIST labels, so a prepared mnist IDX cache is needed
for the label files; train and valid are concatenated to line up with
the 60k mnist train split.

    python3 tools/convert_mnistm.py --pkl mnistm_data.pkl --mnist-dir data/mnist --out /tmp/mnistm_idx
    adimp prepare-data --dataset mnistm --from /tmp/mnistm_idx
"""
import argparse
import os
import pickle
import struct

import numpy as np


def write_idx_images(path, arr):  # (n, c, h, w) uint8
    with open(path, "wb") as f:
        n, c, h, w = arr.shape
        f.write(struct.pack(">IIIII", 0x804, n, c, h, w))
        f.write(arr.tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def read_idx_labels(path):
    with open(path, "rb") as f:
        magic, n = struct.unpack(">II", f.read(8))
        if magic != 0x801:
            raise SystemExit(f"{path}: not an IDX label file")
        return np.frombuffer(f.read(n), dtype=np.uint8)


def to_nchw(a):
    a = np.asarray(a, dtype=np.uint8)
    return np.ascontiguousarray(a.transpose(0, 3, 1, 2))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pkl", required=True, help="mnistm_data.pkl")
    ap.add_argument("--mnist-dir", required=True, help="mnist IDX cache (for labels)")
    ap.add_argument("--out", required=True, help="output directory for the IDX files")
    args = ap.parse_args()

    with open(args.pkl, "rb") as f:
        data = pickle.load(f)
    train = to_nchw(np.concatenate([data["train"], data["valid"]]))
    test = to_nchw(data["test"])

    tr_y = read_idx_labels(os.path.join(args.mnist_dir, "train-labels-idx1-ubyte"))
    te_y = read_idx_labels(os.path.join(args.mnist_dir, "t10k-labels-idx1-ubyte"))
    if len(train) != len(tr_y) or len(test) != len(te_y):
        raise SystemExit(
            f"count mismatch: images {len(train)}/{len(test)} vs labels {len(tr_y)}/{len(te_y)}"
        )

    os.makedirs(args.out, exist_ok=True)
    write_idx_images(os.path.join(args.out, "train-images-idx4-ubyte"), train)
    write_idx_labels(os.path.join(args.out, "train-labels-idx1-ubyte"), tr_y)
    write_idx_images(os.path.join(args.out, "test-images-idx4-ubyte"), test)
    write_idx_labels(os.path.join(args.out, "test-labels-idx1-ubyte"), te_y)
    print(f"wrote {len(train)} train / {len(test)} test to {args.out}")


if __name__ == "__main__":
    main()
