"""Build MNIST IDX files for the test suite and demos.

Two sources are supported:

* ``--from-idx DIR``: copy/compress the four standard IDX files already on disk
  (train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-...).
* default: ``npm pack mnist`` (10 000 genuine MNIST digits stored as pixel/255
  with three decimals, which round-trips exactly to uint8). The digits are
  shuffled with a fixed seed and split 8 000 train / 2 000 test.

Output is gzip-compressed IDX in ``data/mnist/`` by default.
"""

from __future__ import annotations

import argparse
import gzip
import json
import shutil
import subprocess
import tarfile
import tempfile
from pathlib import Path

import numpy as np

NAMES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}


def write_idx_images(path: Path, images: np.ndarray) -> None:
    n, rows, cols = images.shape
    header = np.array([0x00000803, n, rows, cols], dtype=">u4").tobytes()
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + images.astype(np.uint8).tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    header = np.array([0x00000801, len(labels)], dtype=">u4").tobytes()
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + labels.astype(np.uint8).tobytes())


def from_npm(out: Path, n_test: int, seed: int) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        with tarfile.open(next(Path(tmp).glob("mnist-*.tgz"))) as tar:
            tar.extractall(tmp)
        images, labels = [], []
        for digit in range(10):
            raw = json.loads((Path(tmp) / f"package/src/digits/{digit}.json").read_text())
            pix = np.asarray(raw["data"], dtype=np.float64).reshape(-1, 28, 28)
            images.append(np.rint(pix * 255.0).astype(np.uint8))
            labels.append(np.full(len(pix), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(seed).permutation(len(labels))
    images, labels = images[order], labels[order]
    train, test = slice(n_test, None), slice(0, n_test)
    write_idx_images(out / NAMES["train_images"], images[train])
    write_idx_labels(out / NAMES["train_labels"], labels[train])
    write_idx_images(out / NAMES["test_images"], images[test])
    write_idx_labels(out / NAMES["test_labels"], labels[test])
    print(f"wrote {len(labels) - n_test} train / {n_test} test samples to {out}")


def from_idx(src: Path, out: Path) -> None:
    for name in NAMES.values():
        plain = src / name[:-3]
        packed = src / name
        if packed.exists():
            shutil.copyfile(packed, out / name)
        else:
            with open(plain, "rb") as fin, gzip.GzipFile(out / name, "wb", mtime=0) as fout:
                shutil.copyfileobj(fin, fout)
    print(f"copied standard IDX files from {src} to {out}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "data" / "mnist")
    parser.add_argument("--from-idx", type=Path, default=None)
    parser.add_argument("--test-size", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    if args.from_idx is not None:
        from_idx(args.from_idx, args.out)
    else:
        from_npm(args.out, args.test_size, args.seed)


if __name__ == "__main__":
    main()
