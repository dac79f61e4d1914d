"""Dataset loading, normalization and client partitioning.

File layouts
------------
MNIST
    The four standard IDX files (``train-images-idx3-ubyte``,
    ``train-labels-idx1-ubyte``, ``t10k-images-idx3-ubyte``,
    ``t10k-labels-idx1-ubyte``), optionally gzip-compressed with a ``.gz``
    suffix. Big-endian header: magic ``0x00000803`` (images) or ``0x00000801``
    (labels), then one uint32 per dimension, then raw uint8 data.
ISOLET
    ``isolet1+2+3+4.data`` / ``isolet5.data``: one sample per line, 617
    comma-separated features already scaled to ``[-1, 1]`` followed by the
    letter label ``1..26``.
UCI-HAR
    ``X_train.txt``, ``y_train.txt``, ``X_test.txt``, ``y_test.txt``:
    whitespace-delimited rows of 561 features; one integer label (``1..6``) per
    line in the ``y`` files.

Labels are remapped to ``0..S-1`` in ascending order of the training labels.
After the dataset-specific transform each sample is scaled to unit l2 norm by
default (``sample_norm="l2"``); the cosine encoder needs inputs of moderate
norm to produce informative hypervectors.
"""

from __future__ import annotations

import csv
import gzip
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, LoadError, PartitionError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
ISOLET_FILES = {"train": "isolet1+2+3+4.data", "test": "isolet5.data"}
UCI_HAR_FILES = {
    "train_x": "X_train.txt",
    "train_y": "y_train.txt",
    "test_x": "X_test.txt",
    "test_y": "y_test.txt",
}
SAMPLE_NORMS = ("l2", "none")


@dataclass
class Dataset:
    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    class_count: int
    transforms: list[str] = field(default_factory=list)

    @property
    def feature_dim(self) -> int:
        return self.train_x.shape[1]

    def subset(self, train: int | None = None, test: int | None = None) -> Dataset:
        """First ``train`` / ``test`` samples of each split."""
        out = Dataset(
            self.name,
            self.train_x[:train],
            self.train_y[:train],
            self.test_x[:test],
            self.test_y[:test],
            self.class_count,
            list(self.transforms),
        )
        if train is not None or test is not None:
            out.transforms.append(f"subset(train={train}, test={test})")
        return out


# -- IDX ---------------------------------------------------------------------

def _open_bytes(path: Path) -> bytes:
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except (OSError, EOFError) as exc:
        raise LoadError(f"{path}: offset 0: cannot read file ({exc})") from None


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse an IDX file of unsigned bytes into an array of its declared shape."""
    raw = _open_bytes(path)
    if len(raw) < 4:
        raise LoadError(f"{path}: offset 0: truncated header")
    magic = int.from_bytes(raw[:4], "big")
    if expected_magic is not None and magic != expected_magic:
        raise LoadError(f"{path}: offset 0: bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 8 != 0x08:
        raise LoadError(f"{path}: offset 0: unsupported IDX type in magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise LoadError(f"{path}: offset 4: truncated dimension header")
    dims = tuple(int.from_bytes(raw[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim))
    need = header_end + math.prod(dims)
    if len(raw) < need:
        raise LoadError(f"{path}: offset {len(raw)}: truncated data, expected {need} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=math.prod(dims), offset=header_end).reshape(dims)


def _find(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise LoadError(f"{directory / stem}: offset 0: file not found (also tried .gz)")


# -- shared helpers ----------------------------------------------------------

def remap_labels(train_labels, test_labels, source: str = "") -> tuple[np.ndarray, np.ndarray, int]:
    """Map the sorted distinct training labels onto ``0..S-1``."""
    classes = np.unique(train_labels)
    lookup = {v: i for i, v in enumerate(classes.tolist())}
    unseen = sorted(set(np.unique(test_labels).tolist()) - set(lookup))
    if unseen:
        first = int(np.flatnonzero(np.asarray(test_labels) == unseen[0])[0])
        raise LoadError(f"{source}: line {first + 1}: test label {unseen[0]!r} does not occur in training data")
    train = np.searchsorted(classes, train_labels).astype(np.int64)
    test = np.searchsorted(classes, test_labels).astype(np.int64)
    return train, test, len(classes)


def normalize_samples(x: np.ndarray, how: str) -> np.ndarray:
    if how == "none":
        return x
    if how == "l2":
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        return x / np.where(norms > 0, norms, 1.0)
    raise ConfigError(f"unknown sample_norm {how!r}; expected one of {SAMPLE_NORMS}")


def _read_table(path: Path, delimiter: str | None) -> np.ndarray:
    """Rows of floats; ``delimiter=None`` splits on any whitespace."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise LoadError(f"{path}: line 0: cannot read file ({exc})") from None
    rows = []
    width = None
    lines = csv.reader(io.StringIO(text), delimiter=delimiter) if delimiter else (ln.split() for ln in text.splitlines())
    for lineno, parts in enumerate(lines, start=1):
        parts = [p.strip() for p in parts if p.strip()]
        if not parts:
            continue
        try:
            row = [float(p) for p in parts]
        except ValueError as exc:
            raise LoadError(f"{path}: line {lineno}: non-numeric field ({exc})") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise LoadError(f"{path}: line {lineno}: expected {width} fields, found {len(row)}")
        rows.append(row)
    if not rows:
        raise LoadError(f"{path}: line 0: no data rows")
    return np.asarray(rows, dtype=np.float64)


# -- loaders -----------------------------------------------------------------

def load_mnist(directory, sample_norm: str = "l2") -> Dataset:
    """MNIST from IDX files; pixels become ``byte / 255``."""
    directory = Path(directory)
    paths = {key: _find(directory, stem) for key, stem in MNIST_FILES.items()}
    train_img = read_idx(paths["train_images"], IDX_IMAGES_MAGIC)
    train_lab = read_idx(paths["train_labels"], IDX_LABELS_MAGIC)
    test_img = read_idx(paths["test_images"], IDX_IMAGES_MAGIC)
    test_lab = read_idx(paths["test_labels"], IDX_LABELS_MAGIC)
    for img, lab, key in ((train_img, train_lab, "train"), (test_img, test_lab, "test")):
        if img.shape[0] != lab.shape[0]:
            raise LoadError(
                f"{paths[key + '_labels']}: offset 4: {lab.shape[0]} labels for {img.shape[0]} images"
            )
    train_y, test_y, classes = remap_labels(train_lab, test_lab, str(paths["test_labels"]))
    train_x = train_img.reshape(len(train_img), -1) / 255.0
    test_x = test_img.reshape(len(test_img), -1) / 255.0
    transforms = ["pixels/255"]
    if sample_norm != "none":
        transforms.append(f"sample_norm={sample_norm}")
    return Dataset(
        "mnist",
        normalize_samples(train_x, sample_norm),
        train_y,
        normalize_samples(test_x, sample_norm),
        test_y,
        classes,
        transforms,
    )


def load_isolet(directory, sample_norm: str = "l2") -> Dataset:
    """ISOLET; features are used as given (already in ``[-1, 1]``)."""
    directory = Path(directory)
    train = _read_table(directory / ISOLET_FILES["train"], ",")
    test = _read_table(directory / ISOLET_FILES["test"], ",")
    if train.shape[1] != test.shape[1]:
        raise LoadError(f"{directory / ISOLET_FILES['test']}: line 1: width {test.shape[1]} != train width {train.shape[1]}")
    train_y, test_y, classes = remap_labels(train[:, -1], test[:, -1], str(directory / ISOLET_FILES["test"]))
    transforms = [] if sample_norm == "none" else [f"sample_norm={sample_norm}"]
    return Dataset(
        "isolet",
        normalize_samples(train[:, :-1], sample_norm),
        train_y,
        normalize_samples(test[:, :-1], sample_norm),
        test_y,
        classes,
        transforms,
    )


def load_uci_har(directory, sample_norm: str = "l2") -> Dataset:
    """UCI-HAR, z-scored per feature with training-split statistics only."""
    directory = Path(directory)
    tx = _read_table(directory / UCI_HAR_FILES["train_x"], None)
    ty = _read_table(directory / UCI_HAR_FILES["train_y"], None)
    vx = _read_table(directory / UCI_HAR_FILES["test_x"], None)
    vy = _read_table(directory / UCI_HAR_FILES["test_y"], None)
    if ty.shape != (len(tx), 1) or vy.shape != (len(vx), 1):
        raise LoadError(f"{directory}: line 1: label files must hold one label per feature row")
    if tx.shape[1] != vx.shape[1]:
        raise LoadError(f"{directory / UCI_HAR_FILES['test_x']}: line 1: width {vx.shape[1]} != train width {tx.shape[1]}")
    mean = tx.mean(axis=0)
    std = tx.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    train_y, test_y, classes = remap_labels(ty[:, 0], vy[:, 0], str(directory / UCI_HAR_FILES["test_y"]))
    transforms = ["zscore(train statistics)"]
    if sample_norm != "none":
        transforms.append(f"sample_norm={sample_norm}")
    return Dataset(
        "uci_har",
        normalize_samples((tx - mean) / std, sample_norm),
        train_y,
        normalize_samples((vx - mean) / std, sample_norm),
        test_y,
        classes,
        transforms,
    )


def synthetic(
    n: int,
    feature_dim: int,
    class_count: int,
    seed: int,
    *,
    n_test: int = 0,
    separation: float = 3.0,
    sample_norm: str = "none",
) -> Dataset:
    """Gaussian class blobs with balanced labels.

    Class centres are drawn with standard deviation ``separation`` around the
    origin and each sample is its centre plus unit Gaussian noise. Labels cycle
    ``0, 1, ..., S-1`` before the split is shuffled, so every class receives
    ``n // S`` or ``n // S + 1`` samples.
    """
    if n < 0 or n_test < 0 or feature_dim < 1 or class_count < 1:
        raise ConfigError("synthetic dataset needs n, n_test >= 0 and feature_dim, class_count >= 1")
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, separation, size=(class_count, feature_dim))

    def split(size: int):
        labels = rng.permutation(np.arange(size) % class_count)
        return centres[labels] + rng.standard_normal((size, feature_dim)), labels.astype(np.int64)

    train_x, train_y = split(n)
    test_x, test_y = split(n_test)
    transforms = [f"synthetic(separation={separation})"]
    if sample_norm != "none":
        transforms.append(f"sample_norm={sample_norm}")
    return Dataset(
        "synthetic",
        normalize_samples(train_x, sample_norm),
        train_y,
        normalize_samples(test_x, sample_norm),
        test_y,
        class_count,
        transforms,
    )


def load(name: str, path=None, *, sample_norm: str = "l2", **synthetic_args) -> Dataset:
    """Load a dataset by name: ``mnist``, ``isolet``, ``uci_har`` or ``synthetic``."""
    if sample_norm not in SAMPLE_NORMS:
        raise ConfigError(f"unknown sample_norm {sample_norm!r}; expected one of {SAMPLE_NORMS}")
    loaders = {"mnist": load_mnist, "isolet": load_isolet, "uci_har": load_uci_har}
    if name == "synthetic":
        return synthetic(sample_norm=sample_norm, **synthetic_args)
    if name not in loaders:
        raise ConfigError(f"unknown dataset {name!r}; expected mnist, isolet, uci_har or synthetic")
    if path is None:
        raise ConfigError(f"dataset {name!r} needs a path")
    return loaders[name](path, sample_norm=sample_norm)


# -- partitioning ------------------------------------------------------------

@dataclass
class PartitionPlan:
    """Which training samples each client holds.

    ``assignments[i]`` lists the sample indices of client ``i + 1`` in the order
    the client presents them.
    """

    mode: str
    assignments: list[np.ndarray]
    samples_per_client: int
    seed: int

    @property
    def clients(self) -> int:
        return len(self.assignments)

    def to_csv(self) -> str:
        lines = ["client,sample_index"]
        for k, idx in enumerate(self.assignments, start=1):
            lines.extend(f"{k},{int(i)}" for i in idx)
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())


def class_groups(class_count: int) -> list[tuple[int, ...]]:
    """``(0, 1), (2, 3), ...``; an odd class count ends with a singleton."""
    return [tuple(range(s, min(s + 2, class_count))) for s in range(0, class_count, 2)]


def partition(labels, mode: str, clients: int, samples_per_client: int | None, seed: int,
              class_count: int | None = None) -> PartitionPlan:
    """Split training indices across ``clients``.

    ``iid``: a seeded permutation is cut into consecutive blocks of
    ``samples_per_client``. With ``samples_per_client=None`` the whole split is
    used, each block holding ``ceil(n / K)`` samples and the last client the
    remainder.

    ``noniid``: class pairs are dealt to clients round-robin; clients sharing a
    pair take disjoint consecutive chunks of a seeded shuffle of that pair's
    samples. With ``samples_per_client=None`` every client takes the largest
    count all pools can supply.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if clients < 1:
        raise ConfigError(f"clients must be >= 1, got {clients}")
    if samples_per_client is not None and samples_per_client < 1:
        raise ConfigError(f"samples_per_client must be >= 1, got {samples_per_client}")
    rng = np.random.default_rng(seed)

    if mode == "iid":
        order = rng.permutation(n)
        if samples_per_client is None:
            size = math.ceil(n / clients)
            blocks = [order[i * size:(i + 1) * size] for i in range(clients)]
            if len(blocks[-1]) == 0:
                raise PartitionError(f"{n} samples cannot give each of {clients} clients at least one sample")
            return PartitionPlan(mode, blocks, size, seed)
        if clients * samples_per_client > n:
            raise PartitionError(
                f"iid split needs {clients} x {samples_per_client} samples but the training split has {n}"
            )
        blocks = [order[i * samples_per_client:(i + 1) * samples_per_client] for i in range(clients)]
        return PartitionPlan(mode, blocks, samples_per_client, seed)

    if mode == "noniid":
        s = int(class_count if class_count is not None else labels.max() + 1)
        groups = class_groups(s)
        members = [list(range(g, clients, len(groups))) for g in range(len(groups))]
        pools = [rng.permutation(np.flatnonzero(np.isin(labels, grp))) for grp in groups]
        if samples_per_client is None:
            samples_per_client = min(len(pools[g]) // len(members[g]) for g in range(len(groups)) if members[g])
            if samples_per_client < 1:
                raise PartitionError("some class group has fewer samples than clients assigned to it")
        blocks: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * clients
        for g, grp in enumerate(groups):
            need = samples_per_client * len(members[g])
            if need > len(pools[g]):
                raise PartitionError(
                    f"class group {set(grp)} has {len(pools[g])} samples, "
                    f"{len(members[g])} clients x {samples_per_client} needed"
                )
            for j, client in enumerate(members[g]):
                blocks[client] = pools[g][j * samples_per_client:(j + 1) * samples_per_client]
        return PartitionPlan(mode, blocks, samples_per_client, seed)

    raise ConfigError(f"unknown partition mode {mode!r}; expected 'iid' or 'noniid'")
