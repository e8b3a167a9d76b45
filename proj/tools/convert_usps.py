#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Convert USPS to the IDX cache layout.

Accepts either the HDF5 bundle (usps.h5 with train/test groups holding
flattened 16x16 digits) or the classic zip.train(.gz) / zip.test(.gz)
text files. The combined 9298 digits are resplit in file order into
7438 train / 1860 test, the counts the benchmark harness expects.

    python3 tools/convert_usps.py --h5 usps.h5 --out /tmp/usps_idx
    python3 tools/convert_usps.py --zip-train zip.train.gz --zip-test zip.test.gz --out /tmp/usps_idx
    adimp prepare-data --dataset usps --from /tmp/usps_idx
"""
import argparse
import gzip
import os
import struct

import numpy as np

TRAIN_COUNT = 7438
TEST_COUNT = 1860


def write_idx_images(path, arr):
    with open(path, "wb") as f:
        n, h, w = arr.shape
        f.write(struct.pack(">IIII", 0x803, n, h, w))
        f.write(arr.tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def read_zip_file(path):
    opener = gzip.open if path.endswith(".gz") else open
    rows = []
    with opener(path, "rt") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            rows.append([float(v) for v in parts])
    a = np.asarray(rows)
    labels = a[:, 0].astype(np.uint8)
    # pixels arrive in [-1, 1]
    imgs = np.clip((a[:, 1:] + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    return imgs.reshape(-1, 16, 16), labels


def read_h5(path):
    import h5py

    with h5py.File(path, "r") as f:
        xs, ys = [], []
        for split in ("train", "test"):
            x = np.asarray(f[split]["data"])
            y = np.asarray(f[split]["target"]).astype(np.uint8)
            xs.append(x)
            ys.append(y)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if x.max() <= 1.0 + 1e-6:  # stored in [0, 1]
        x = x * 255.0
    x = np.clip(x, 0, 255).round().astype(np.uint8)
    return x.reshape(-1, 16, 16), y


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h5", help="usps.h5 bundle")
    ap.add_argument("--zip-train", help="zip.train or zip.train.gz")
    ap.add_argument("--zip-test", help="zip.test or zip.test.gz")
    ap.add_argument("--out", required=True, help="output directory for the IDX files")
    args = ap.parse_args()

    if args.h5:
        images, labels = read_h5(args.h5)
    elif args.zip_train and args.zip_test:
        tr_x, tr_y = read_zip_file(args.zip_train)
        te_x, te_y = read_zip_file(args.zip_test)
        images = np.concatenate([tr_x, te_x])
        labels = np.concatenate([tr_y, te_y])
    else:
        ap.error("pass --h5 or both --zip-train and --zip-test")

    total = TRAIN_COUNT + TEST_COUNT
    if len(images) != total:
        raise SystemExit(f"expected {total} digits, got {len(images)}")

    os.makedirs(args.out, exist_ok=True)
    write_idx_images(os.path.join(args.out, "train-images-idx3-ubyte"), images[:TRAIN_COUNT])
    write_idx_labels(os.path.join(args.out, "train-labels-idx1-ubyte"), labels[:TRAIN_COUNT])
    write_idx_images(os.path.join(args.out, "test-images-idx3-ubyte"), images[TRAIN_COUNT:])
    write_idx_labels(os.path.join(args.out, "test-labels-idx1-ubyte"), labels[TRAIN_COUNT:])
    print(f"wrote {TRAIN_COUNT} train / {TEST_COUNT} test to {args.out}")


if __name__ == "__main__":
    main()
