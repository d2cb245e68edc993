"""Dataset ingestion and synthetic problem generation.

IDX is the big-endian container used by MNIST and Fashion-MNIST::

    magic (u32) | dim_0 (u32) | ... | dim_{k-1} (u32) | raw uint8 payload

with magic ``0x00000803`` for image tensors and ``0x00000801`` for labels.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import ConfigError, FormatError, InputError
from .objectives import FederatedProblem, QuadraticObjective, SoftmaxObjective

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

DATASET_FILES = {
    "mnist": {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    },
}
DATASET_FILES["fashion-mnist"] = DATASET_FILES["mnist"]


@dataclass
class IdxImageSet:
    images: np.ndarray  # (N, rows, cols), float64 in [0, 1]
    labels: np.ndarray  # (N,), int64

    def __post_init__(self):
        if self.images.ndim != 3 or min(self.images.shape[1:]) <= 0:
            raise InputError(f"images must be (N, rows, cols), got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise InputError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self):
        return self.labels.shape[0]


def _read_idx(path, expected_magic, ndim):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header, need {header} bytes, have {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims, dtype=np.int64))
    actual = len(raw) - header
    if actual < expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes, got {actual}")
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> IdxImageSet:
    """Read an IDX image/label pair; pixels are scaled to ``[0, 1]``."""
    images = _read_idx(images_path, IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, LABEL_MAGIC, 1)
    return IdxImageSet(images.astype(np.float64) / 255.0, labels.astype(np.int64))


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images ``(N, rows, cols)`` and labels ``(N,)`` as IDX."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise InputError("IDX payloads must be uint8")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IMAGE_MAGIC))
        fh.write(struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">I", LABEL_MAGIC))
        fh.write(struct.pack(">I", labels.shape[0]))
        fh.write(labels.tobytes())


def resolve_data_dir(data_dir=None):
    data_dir = data_dir or os.environ.get("CPX_DATA_DIR")
    if not data_dir:
        raise ConfigError("no dataset directory: pass --data-dir or set CPX_DATA_DIR")
    return Path(data_dir)


def load_dataset(name, split="train", data_dir=None) -> IdxImageSet:
    """Load ``mnist`` or ``fashion-mnist`` from ``data_dir/<name>/``.

    Files may sit directly in ``data_dir`` or in a subdirectory named after
    the dataset.
    """
    if name not in DATASET_FILES:
        raise ConfigError(f"unknown dataset {name!r}")
    root = resolve_data_dir(data_dir)
    img, lab = DATASET_FILES[name][split]
    for base in (root / name, root):
        if (base / img).exists() and (base / lab).exists():
            return load_idx(base / img, base / lab)
    raise ConfigError(f"{name} {split} files not found under {root}")


def image_features(data: IdxImageSet, bias=True):
    """Flatten images to rows; optionally append a constant bias column."""
    X = data.images.reshape(len(data), -1)
    if bias:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
    return X


def partition_by_class(data: IdxImageSet, num_clients, batch_size=300, regularizer=0.0, bias=True):
    """One softmax client per class label, samples kept in dataset order."""
    classes = np.unique(data.labels)
    if num_clients != classes.size:
        raise ConfigError(
            f"class partitioning needs one client per label: {classes.size} labels, "
            f"{num_clients} clients requested"
        )
    num_classes = int(data.labels.max()) + 1
    X = image_features(data, bias=bias)
    clients = []
    for label in classes:
        idx = np.flatnonzero(data.labels == label)
        clients.append(
            SoftmaxObjective(
                X[idx],
                data.labels[idx],
                num_classes,
                batch_size=min(batch_size, idx.size),
                regularizer=regularizer,
            )
        )
    return clients


@dataclass(frozen=True)
class SyntheticLsSpec:
    m: int = 25
    n: int = 200
    d: int = 20
    noise_std: float = 0.5
    seed: int = 0
    rank: int | None = None  # < d gives a rank-deficient (mu = 0) problem

    def __post_init__(self):
        if min(self.m, self.n, self.d) < 1:
            raise InputError("m, n and d must be at least 1")
        if self.noise_std < 0:
            raise InputError("noise_std must be nonnegative")
        if self.rank is not None and not 1 <= self.rank <= self.d:
            raise InputError("rank must lie in [1, d]")


def gen_synthetic_ls(spec: SyntheticLsSpec, certify=True):
    """Least-squares clients ``b_i = A_i y0 + v_i`` from the counter stream.

    Client ``i`` draws ``A_i`` under stream ``i``; ``y0`` uses stream
    ``2**32 - 1``. With ``spec.rank = r < d`` every ``A_i`` is
    ``N_i M^T`` for a shared ``(d, r)`` matrix ``M``, so all clients share a
    nontrivial null space.

    Returns
    -------
    (FederatedProblem, y0)
    """
    shared = 0xFFFFFFFF
    y0 = rng.standard_normal(spec.seed, shared, rng.ROLE_TARGET, (spec.d,))
    if spec.rank is not None and spec.rank < spec.d:
        basis = rng.standard_normal(spec.seed, shared, rng.ROLE_MATRIX, (spec.d, spec.rank))
    else:
        basis = None
    clients = []
    for i in range(spec.m):
        if basis is None:
            A = rng.standard_normal(spec.seed, i, rng.ROLE_MATRIX, (spec.n, spec.d))
        else:
            coeff = rng.standard_normal(spec.seed, i, rng.ROLE_MATRIX, (spec.n, spec.rank))
            A = coeff @ basis.T / np.sqrt(spec.rank)
        v = spec.noise_std * rng.standard_normal(spec.seed, i, rng.ROLE_NOISE, (spec.n,))
        clients.append(QuadraticObjective(A, A @ y0 + v))
    problem = FederatedProblem(clients)
    if certify:
        problem.with_optimum()
    return problem, y0


def gen_synthetic_softmax(
    num_classes=4,
    per_class=60,
    num_features=6,
    batch_size=20,
    regularizer=1e-2,
    separation=1.0,
    seed=0,
    bias=True,
    certify=True,
):
    """Small class-partitioned softmax problem for desk-scale tests.

    Class ``c`` samples are Gaussian around a random centre scaled by
    ``separation``; client ``c`` holds exactly the class-``c`` samples.
    """
    shared = 0xFFFFFFFF
    centres = separation * rng.standard_normal(seed, shared, rng.ROLE_FEATURES, (num_classes, num_features))
    clients = []
    for c in range(num_classes):
        X = centres[c] + rng.standard_normal(seed, c, rng.ROLE_FEATURES, (per_class, num_features))
        if bias:
            X = np.hstack([X, np.ones((per_class, 1))])
        y = np.full(per_class, c)
        clients.append(SoftmaxObjective(X, y, num_classes, batch_size=batch_size, regularizer=regularizer))
    problem = FederatedProblem(clients)
    if certify:
        problem.with_optimum()
    return problem
