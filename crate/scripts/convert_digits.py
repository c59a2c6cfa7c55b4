"""Convert the JSON digit files of the `mnist` npm package into gzipped IDX.

Each digit file holds between 863 and 1127 images of 784 pixels scaled to [0, 1] with three decimals.
Pixels are mapped back to bytes with round(v * 255). The first 800 images of every
digit form the training split and the remaining ones the test split; both are
interleaved by digit in round-robin order.

usage: python3 scripts/convert_digits.py <package/src/digits> <out-dir>
"""
import gzip
import json
import struct
import sys
from pathlib import Path

TRAIN_PER_DIGIT = 800


def write(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main(src, out):
    digits = []
    for d in range(10):
        flat = json.loads((Path(src) / f"{d}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        digits.append([bytes(round(v * 255) for v in flat[i:i + 784]) for i in range(0, len(flat), 784)])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    longest = max(len(x) for x in digits)
    for name, lo, hi in [("train", 0, TRAIN_PER_DIGIT), ("test", TRAIN_PER_DIGIT, longest)]:
        imgs, labels = [], []
        for i in range(lo, hi):
            for d in range(10):
                if i < len(digits[d]):
                    imgs.append(digits[d][i])
                    labels.append(d)
        write(out / f"{name}-images-idx3-ubyte.gz", 0x803, [len(imgs), 28, 28], b"".join(imgs))
        write(out / f"{name}-labels-idx1-ubyte.gz", 0x801, [len(labels)], bytes(labels))
        print(name, len(imgs))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
