"""IDX image datasets, non-IID Dirichlet partitioning and batch iteration."""

from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagicError, ConfigError, CountMismatchError, TruncatedFileError

log = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, d_in) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    name: str = ""
    n_classes: int = 10

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images vs {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def d_in(self) -> int:
        return self.images.shape[1]

    def subset(self, idx, name=None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.images[idx], self.labels[idx], name or self.name, self.n_classes)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(raw: bytes, expected_magic: int) -> np.ndarray:
    """Decode an unsigned-byte IDX payload into an array of its dimensions."""
    if len(raw) < 4:
        raise TruncatedFileError("file shorter than the IDX magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError("IDX header is truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n = int(np.prod(dims))
    if len(raw) - header < n:
        raise TruncatedFileError(f"payload has {len(raw) - header} bytes, header promises {n}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def load_idx(image_path, label_path, name: str = "", n_classes: int = 10) -> Dataset:
    images = parse_idx(_read_bytes(image_path), IMAGE_MAGIC)
    labels = parse_idx(_read_bytes(label_path), LABEL_MAGIC)
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images vs {len(labels)} labels")
    if labels.size and labels.max() >= n_classes:
        raise ConfigError(f"label {labels.max()} outside [0, {n_classes})")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), name or Path(image_path).name, n_classes)


def encode_idx(array: np.ndarray, magic: int) -> bytes:
    array = np.asarray(array, dtype=np.uint8)
    ndim = magic & 0xFF
    if array.ndim != ndim:
        raise ConfigError(f"magic 0x{magic:08x} needs a {ndim}-D array, got {array.ndim}-D")
    return struct.pack(f">I{ndim}I", magic, *array.shape) + array.tobytes(order="C")


def write_idx(path, array: np.ndarray, magic: int) -> None:
    path = Path(path)
    payload = encode_idx(array, magic)
    if path.suffix == ".gz":
        # mtime=0 keeps the archive byte-stable
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def downsample(ds: Dataset, k: int) -> Dataset:
    """Average-pool square images by ``k`` in each direction."""
    if k == 1:
        return ds
    side = int(round(np.sqrt(ds.d_in)))
    if side * side != ds.d_in or side % k:
        raise ConfigError(f"cannot downsample {side}x{side} images by {k}")
    n = side // k
    pooled = ds.images.reshape(len(ds), n, k, n, k).mean(axis=(2, 4)).reshape(len(ds), n * n)
    return Dataset(pooled, ds.labels, ds.name, ds.n_classes)


# ---------------------------------------------------------------------------
# partitioning


@dataclass
class PartitionPlan:
    indices: list[np.ndarray]
    proportions: np.ndarray  # (M, C) rows drawn from Dir(alpha)
    alpha: float
    substitutions: int = 0
    class_counts: np.ndarray = field(default=None, repr=False)


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total`` that best follow ``weights``."""
    raw = np.asarray(weights, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        # stable sort: ties go to the lower class index
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(ds: Dataset, n_clients: int, alpha: float, per_client: int,
                        rng: np.random.Generator, pool=None) -> PartitionPlan:
    """Disjoint per-client index sets with Dir(alpha) class mixes.

    ``pool`` restricts the candidate indices (e.g. to exclude a held-out
    reference set); it defaults to the whole dataset.
    """
    pool = np.arange(len(ds)) if pool is None else np.asarray(pool, dtype=np.intp)
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    if n_clients < 1 or per_client < 1 or n_clients * per_client > len(pool):
        raise ConfigError(f"{n_clients} clients x {per_client} examples exceeds pool of {len(pool)}")
    n_classes = ds.n_classes
    labels = ds.labels[pool]
    class_pools = []
    for c in range(n_classes):
        members = pool[labels == c]
        class_pools.append(list(rng.permutation(members)))
    q = rng.dirichlet(np.full(n_classes, float(alpha)), size=n_clients)
    # renormalise away float drift so each row sums to 1 within 1e-12
    q = q / q.sum(axis=1, keepdims=True)
    taken = np.zeros(len(ds), dtype=bool)
    subs = 0
    plans = []
    counts = np.zeros((n_clients, n_classes), dtype=np.int64)
    for m in range(n_clients):
        want = largest_remainder(q[m], per_client)
        counts[m] = want
        chosen = []
        deficit = 0
        for c in range(n_classes):
            cp = class_pools[c]
            while want[c] > 0 and cp:
                i = cp.pop()
                if not taken[i]:
                    taken[i] = True
                    chosen.append(i)
                    want[c] -= 1
            deficit += want[c]
        if deficit:
            residual = pool[~taken[pool]]
            extra = rng.choice(residual, size=deficit, replace=False)
            taken[extra] = True
            chosen.extend(extra.tolist())
            subs += deficit
        plans.append(np.sort(np.asarray(chosen, dtype=np.intp)))
    if subs:
        log.info("dirichlet partition: %d draws substituted from the residual pool", subs)
    return PartitionPlan(plans, q, float(alpha), subs, counts)


class BatchIterator:
    """Endless minibatches over a fixed index list.

    Each epoch is a fresh permutation drawn from ``rng``; every index is
    visited exactly once per epoch.  A batch may straddle two epochs.
    """

    def __init__(self, indices, batch_size: int, rng: np.random.Generator):
        self.indices = np.asarray(indices, dtype=np.intp)
        if batch_size < 1 or len(self.indices) == 0:
            raise ConfigError("batch iterator needs a positive batch size and non-empty data")
        self.batch_size = batch_size
        self.rng = rng
        self._order = np.empty(0, dtype=np.intp)
        self._pos = 0

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        out = []
        need = self.batch_size
        while need:
            if self._pos >= len(self._order):
                self._order = self.rng.permutation(self.indices)
                self._pos = 0
            part = self._order[self._pos:self._pos + need]
            self._pos += len(part)
            need -= len(part)
            out.append(part)
        return np.concatenate(out)


# ---------------------------------------------------------------------------
# bundled fixture


def write_digits_fixture(out_dir, n_test: int = 297, seed: int = 0) -> dict[str, Path]:
    """Write scikit-learn's 8x8 digits, upsampled to 28x28, as IDX files.

    A stand-in for MNIST in offline environments.  Images are bilinearly
    resized and rescaled to the byte range.
    """
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    digits = load_digits()
    imgs = np.stack([zoom(im, 28 / 8, order=1) for im in digits.images])
    imgs = np.clip(imgs / 16.0, 0.0, 1.0)
    imgs = np.rint(imgs * 255).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    order = np.random.default_rng(seed).permutation(len(labels))
    test, train = order[:n_test], order[n_test:]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_images": out / "train-images-idx3-ubyte.gz",
        "train_labels": out / "train-labels-idx1-ubyte.gz",
        "test_images": out / "t10k-images-idx3-ubyte.gz",
        "test_labels": out / "t10k-labels-idx1-ubyte.gz",
    }
    write_idx(paths["train_images"], imgs[train], IMAGE_MAGIC)
    write_idx(paths["train_labels"], labels[train], LABEL_MAGIC)
    write_idx(paths["test_images"], imgs[test], IMAGE_MAGIC)
    write_idx(paths["test_labels"], labels[test], LABEL_MAGIC)
    return paths
