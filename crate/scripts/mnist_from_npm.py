#!/usr/bin/env python3
"""Build a desk-scale MNIST split in IDX format from the 10k digits bundled in
the `mnist` npm package (src/digits/<d>.json, pixels stored as round(p/255, 3)).

usage: mnist_from_npm.py <package/src/digits> <out_dir> [n_train]
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    n_train = int(sys.argv[3]) if len(sys.argv) > 3 else 8000
    samples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        for i in range(len(flat) // 784):
            px = bytes(min(255, round(v * 255)) for v in flat[i * 784:(i + 1) * 784])
            samples.append((px, digit))
    random.Random(20210907).shuffle(samples)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", samples[:n_train]), ("t10k", samples[n_train:])):
        write_idx(out / f"{name}-images-idx3-ubyte.gz", 0x803, (len(part), 28, 28),
                  b"".join(p for p, _ in part))
        write_idx(out / f"{name}-labels-idx1-ubyte.gz", 0x801, (len(part),),
                  bytes(l for _, l in part))
        print(name, len(part))


if __name__ == "__main__":
    main()
