#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Convert SVHN (cropped 32x32 .mat files) to the IDX cache layout.

Inputs are the official train_32x32.mat and test_32x32.mat. Label 10 is
remapped to digit 0.

    python3 tools/convert_svhn.py --train train_32x32.mat --test test_32x32.mat --out /tmp/svhn_idx
    adimp prepare-data --dataset svhn --from /tmp/svhn_idx
"""
import argparse
import os
import struct

import numpy as np
import scipy.io


def write_idx_images(path, arr):  # (n, c, h, w) uint8
    with open(path, "wb") as f:
        n, c, h, w = arr.shape
        f.write(struct.pack(">IIIII", 0x804, n, c, h, w))
        f.write(arr.tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_split(path):
    m = scipy.io.loadmat(path)
    x = m["X"]  # (32, 32, 3, n)
    y = m["y"].reshape(-1).astype(np.int64)
    y[y == 10] = 0
    x = np.ascontiguousarray(x.transpose(3, 2, 0, 1))  # (n, 3, 32, 32)
    return x.astype(np.uint8), y.astype(np.uint8)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train", required=True, help="train_32x32.mat")
    ap.add_argument("--test", required=True, help="test_32x32.mat")
    ap.add_argument("--out", required=True, help="output directory for the IDX files")
    args = ap.parse_args()

    tr_x, tr_y = load_split(args.train)
    te_x, te_y = load_split(args.test)
    os.makedirs(args.out, exist_ok=True)
    write_idx_images(os.path.join(args.out, "train-images-idx4-ubyte"), tr_x)
    write_idx_labels(os.path.join(args.out, "train-labels-idx1-ubyte"), tr_y)
    write_idx_images(os.path.join(args.out, "test-images-idx4-ubyte"), te_x)
    write_idx_labels(os.path.join(args.out, "test-labels-idx1-ubyte"), te_y)
    print(f"wrote {len(tr_x)} train / {len(te_x)} test to {args.out}")


if __name__ == "__main__":
    main()
