"""Embedding/label file I/O, normalization and the synthetic OOD benchmark."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, FormatError, GenerationError, PreconditionError, ShapeError


def as_embeddings(X, name: str = "X") -> np.ndarray:
    """Validate and return ``X`` as a 2-D float64 array of finite values."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and one column")
    X = X.astype(np.float64, copy=False)
    bad = ~np.isfinite(X)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"{name} has a non-finite value at row {r}, column {c}")
    return X


def is_unit_normalized(X, tol: float = 1e-6) -> bool:
    return bool(np.all(np.abs(np.linalg.norm(X, axis=1) - 1.0) <= tol))


def l2_normalize(X) -> np.ndarray:
    """Scale every row to unit Euclidean norm.

    Raises
    ------
    DataError
        If a row is entirely zero.
    """
    X = as_embeddings(X)
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DataError(f"row {zero[0]} is all zeros and cannot be normalized")
    out = X / norms[:, None]
    # a second pass makes the operation idempotent to the last bit in practice
    return out / np.linalg.norm(out, axis=1)[:, None]


# --------------------------------------------------------------------------- I/O


def _read_npy(path):
    try:
        with open(path, "rb") as f:
            version = np.lib.format.read_magic(f)
            if version == (1, 0):
                shape, fortran, dtype = np.lib.format.read_array_header_1_0(f)
            elif version in ((2, 0), (3, 0)):
                shape, fortran, dtype = np.lib.format.read_array_header_2_0(f)
            else:
                raise FormatError(f"{path}: unsupported NPY version {version}")
            if len(shape) != 2:
                raise FormatError(f"{path}: expected a 2-D array, got shape {shape}")
            if fortran:
                raise FormatError(f"{path}: Fortran-ordered arrays are not supported")
            if dtype.kind != "f" or dtype.itemsize not in (4, 8) or dtype.byteorder == ">":
                raise FormatError(f"{path}: dtype {dtype} is not little-endian f4/f8")
            count = shape[0] * shape[1]
            data = np.fromfile(f, dtype=dtype, count=count)
    except (ValueError, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise FormatError(f"{path}: {exc}") from exc
    if data.size != count:
        raise FormatError(f"{path}: truncated payload ({data.size} of {count} values)")
    return data.reshape(shape)


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _read_csv(path):
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and any(t.strip() for t in r)]
    if rows and not all(_is_number(t) for t in rows[0]):
        rows = rows[1:]
    if not rows:
        raise FormatError(f"{path}: no numeric rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise FormatError(f"{path}: row {i} has {len(r)} fields, expected {width}")
        try:
            out[i] = [float(t) for t in r]
        except ValueError as exc:
            raise FormatError(f"{path}: row {i}: {exc}") from exc
    return out


def _infer_format(path, fmt):
    if fmt is not None:
        return fmt
    ext = os.path.splitext(str(path))[1].lower()
    return "npy" if ext == ".npy" else "csv"


def load_embeddings(path, fmt: Optional[str] = None) -> np.ndarray:
    """Read an N x d embedding matrix from ``.npy`` or ``.csv``; values are widened to float64."""
    fmt = _infer_format(path, fmt)
    if fmt == "npy":
        X = _read_npy(path)
    elif fmt == "csv":
        X = _read_csv(path)
    else:
        raise FormatError(f"unknown format {fmt!r}")
    return as_embeddings(X, name=str(path))


def save_embeddings(path, X, fmt: Optional[str] = None) -> None:
    X = as_embeddings(X)
    fmt = _infer_format(path, fmt)
    if fmt == "npy":
        with open(path, "wb") as f:
            np.lib.format.write_array(f, np.ascontiguousarray(X, dtype="<f8"), version=(1, 0))
    else:
        np.savetxt(path, X, delimiter=",", fmt="%.17g")


def load_labels(path) -> np.ndarray:
    """Read one integer label per line."""
    labels = []
    with open(path) as f:
        for i, line in enumerate(f):
            tok = line.strip()
            if not tok:
                continue
            try:
                labels.append(int(tok))
            except ValueError:
                if i == 0 and not labels:
                    continue  # header line
                raise FormatError(f"{path}: line {i + 1} is not an integer: {tok!r}")
    return np.asarray(labels, dtype=np.int64)


def save_labels(path, labels) -> None:
    np.savetxt(path, np.asarray(labels, dtype=np.int64), fmt="%d")


def check_labels(labels, n_rows: int, n_classes: Optional[int] = None) -> int:
    """Validate a training label vector and return the number of classes."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != n_rows:
        raise ShapeError(f"expected {n_rows} labels, got shape {labels.shape}")
    if labels.size and labels.min() < 0:
        raise DataError("labels must be non-negative")
    C = int(labels.max()) + 1 if n_classes is None else n_classes
    if labels.max() >= C:
        raise DataError(f"label {labels.max()} out of range for {C} classes")
    missing = np.setdiff1d(np.arange(C), labels)
    if missing.size:
        raise DataError(f"class {missing[0]} has no training rows")
    return C


# ------------------------------------------------------------------ synthetic


@dataclass
class Dataset:
    """In-distribution training data plus a labelled ID/OOD test set."""

    train_id: np.ndarray
    test: np.ndarray
    test_is_ood: np.ndarray
    train_labels: Optional[np.ndarray] = None
    test_labels: Optional[np.ndarray] = None
    train_logits: Optional[np.ndarray] = None
    test_logits: Optional[np.ndarray] = None
    means: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.test_is_ood.shape[0] != self.test.shape[0]:
            raise ShapeError("test_is_ood length must equal the number of test rows")
        if self.train_logits is not None and self.train_labels is not None:
            C = int(self.train_labels.max()) + 1
            if self.train_logits.shape[1] != C:
                raise ShapeError("logit columns must match the number of classes")


def _place_means(rng, n, dim, min_dist, spread):
    attempts = 10 * n * n
    means = []
    tries = 0
    while len(means) < n:
        if tries >= attempts:
            raise GenerationError(
                f"could not place {n} means at separation {min_dist} in {attempts} attempts"
            )
        tries += 1
        c = rng.normal(0.0, spread, size=dim)
        if all(np.linalg.norm(c - m) >= min_dist for m in means):
            means.append(c)
    return np.array(means)


def _round_robin(rng, means, counts, sigma):
    rows, labels = [], []
    for c, n in enumerate(counts):
        rows.append(means[c] + sigma * rng.standard_normal((n, means.shape[1])))
        labels.append(np.full(n, c, dtype=np.int64))
    return np.concatenate(rows), np.concatenate(labels)


def _split(total, parts):
    base, extra = divmod(total, parts)
    return [base + (i < extra) for i in range(parts)]


def generate_synthetic(
    n_id_clusters: int,
    n_ood_clusters: int,
    per_cluster: int,
    dim: int,
    separation: float,
    noise_sigma: float,
    seed: int,
    n_train: Optional[int] = None,
    n_test_id: Optional[int] = None,
    n_test_ood: Optional[int] = None,
    logit_scale: float = 10.0,
) -> Dataset:
    """Isotropic Gaussian clusters split into ID training data and a mixed test set.

    Cluster means are rejection-sampled so that every pair is at least
    ``separation * noise_sigma`` apart. Clusters ``0 .. n_id_clusters - 1``
    are in-distribution; the remaining ones only appear in the test set.
    By default each ID cluster contributes ``per_cluster`` training rows and
    ``per_cluster`` held-out test rows, and each OOD cluster ``per_cluster``
    test rows; ``n_train``, ``n_test_id`` and ``n_test_ood`` override the
    totals, spread as evenly as possible over the clusters.

    The returned dataset also carries logits of a synthetic RBF classifier,
    ``logit_scale * exp(-|x - mean_c|^2 / (2 dim noise_sigma^2))`` over the
    ID classes, for the logit-based detectors.
    """
    for name, v in (("n_id_clusters", n_id_clusters), ("n_ood_clusters", n_ood_clusters),
                    ("per_cluster", per_cluster), ("dim", dim)):
        if v < 1:
            raise PreconditionError(f"{name} must be >= 1")
    if not separation > 0 or not noise_sigma > 0:
        raise PreconditionError("separation and noise_sigma must be positive")
    rng = np.random.default_rng(seed)
    n_total = n_id_clusters + n_ood_clusters
    min_dist = separation * noise_sigma
    # spread chosen so random pairs clear the separation comfortably in low dimension
    spread = min_dist * max(1.0, math.sqrt(n_total / dim)) * 1.5
    means = _place_means(rng, n_total, dim, min_dist, spread)
    id_means = means[:n_id_clusters]

    train_counts = _split(n_train, n_id_clusters) if n_train is not None else [per_cluster] * n_id_clusters
    tid_counts = _split(n_test_id, n_id_clusters) if n_test_id is not None else [per_cluster] * n_id_clusters
    tood_counts = _split(n_test_ood, n_ood_clusters) if n_test_ood is not None else [per_cluster] * n_ood_clusters

    train, train_labels = _round_robin(rng, id_means, train_counts, noise_sigma)
    test_id, test_id_labels = _round_robin(rng, id_means, tid_counts, noise_sigma)
    test_ood, ood_labels = _round_robin(rng, means[n_id_clusters:], tood_counts, noise_sigma)
    test = np.concatenate([test_id, test_ood])
    test_labels = np.concatenate([test_id_labels, ood_labels + n_id_clusters])
    is_ood = test_labels >= n_id_clusters

    def logits(Z):
        d2 = np.maximum(
            (Z**2).sum(1)[:, None] - 2.0 * Z @ id_means.T + (id_means**2).sum(1)[None, :], 0.0)
        return logit_scale * np.exp(-d2 / (2.0 * dim * noise_sigma**2))

    return Dataset(
        train_id=train,
        test=test,
        test_is_ood=is_ood,
        train_labels=train_labels,
        test_labels=test_labels,
        train_logits=logits(train),
        test_logits=logits(test),
        means=means,
    )
