#!/usr/bin/env python3
"""Build MNIST IDX files for the training runs.

If the official gzip IDX files are already available, point MNIST_DATA_DIR at
them and skip this script. Otherwise this pulls the `mnist` npm package
(10,000 real MNIST digits, stored as /255 floats rounded to 3 decimals),
recovers the bytes and writes

    train-images-idx3-ubyte.gz
    train-labels-idx1-ubyte.gz

into the output directory. Samples are grouped by class in the output file;
the split builder shuffles per class, so the ordering does not matter.

usage: fetch_mnist.py OUT_DIR [--package-dir DIR]
"""
import argparse
import gzip
import json
import os
import struct
import subprocess
import tarfile
import tempfile

ROWS = COLS = 28


def locate_package(package_dir):
    if package_dir:
        return package_dir
    work = tempfile.mkdtemp(prefix="mnist-npm-")
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=work, check=True,
                   stdout=subprocess.DEVNULL)
    with tarfile.open(os.path.join(work, "mnist-1.1.0.tgz")) as tar:
        tar.extractall(work)
    return os.path.join(work, "package")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--package-dir")
    args = ap.parse_args()

    pkg = locate_package(args.package_dir)
    images = bytearray()
    labels = bytearray()
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
            data = json.load(f)["data"]
        assert len(data) % (ROWS * COLS) == 0
        images.extend(min(255, max(0, round(v * 255))) for v in data)
        labels.extend([digit] * (len(data) // (ROWS * COLS)))

    count = len(labels)
    os.makedirs(args.out_dir, exist_ok=True)
    with gzip.GzipFile(os.path.join(args.out_dir, "train-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, count, ROWS, COLS))
        f.write(images)
    with gzip.GzipFile(os.path.join(args.out_dir, "train-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, count))
        f.write(labels)
    print(f"wrote {count} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
