"""Kernel evaluations, nearest-atom search and ridge-regularized SPD solves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .errors import PreconditionError, ShapeError, SingularError

UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class KernelSpec:
    """Kernel used to compare samples and atoms.

    ``kind`` is ``"cosine"`` (inner product of unit-norm rows) or
    ``"gaussian"`` with bandwidth ``sigma``: ``exp(-|a - b|^2 / (2 sigma^2))``.
    """

    kind: str = "cosine"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("cosine", "gaussian"):
            raise PreconditionError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not (np.isfinite(self.sigma) and self.sigma > 0):
            raise PreconditionError("gaussian kernel requires sigma > 0")

    @property
    def needs_unit_norm(self) -> bool:
        return self.kind == "cosine"


def _check_unit_rows(A, name):
    norms = np.linalg.norm(A, axis=1)
    if A.shape[0] and np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
        raise PreconditionError(f"cosine kernel requires unit-norm rows in {name}")


def gram(A, B, kernel: KernelSpec = KernelSpec()) -> np.ndarray:
    """Kernel matrix with ``values[i, j] = kernel(A[i], B[j])``.

    Parameters
    ----------
    A : array_like, shape (m, d)
    B : array_like, shape (n, d)
    kernel : KernelSpec

    Returns
    -------
    numpy.ndarray, shape (m, n)
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    if kernel.kind == "cosine":
        _check_unit_rows(A, "A")
        _check_unit_rows(B, "B")
        return A @ B.T
    # cdist differences each pair directly, so K(x, x) is exactly 1
    sq = cdist(A, B, "sqeuclidean")
    return np.exp(-sq / (2.0 * kernel.sigma**2))


def top_k_indices(similarities, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, most similar first, ties to the lower index."""
    s = np.asarray(similarities)
    m = s.shape[0]
    if k < 1 or k > m:
        raise PreconditionError(f"k={k} must lie in [1, {m}]")
    if k == m:
        return np.argsort(-s, kind="stable")
    cand = np.argpartition(-s, k - 1)[:k]
    v = s[cand].min()
    strict = np.flatnonzero(s > v)
    ties = np.flatnonzero(s == v)[: k - strict.size]
    sel = np.concatenate([strict, ties])
    # stable sort on -similarity keeps ascending index among equal values
    return sel[np.argsort(-s[sel], kind="stable")]


def knn_atoms(q, atoms, k: int, kernel: KernelSpec = KernelSpec()) -> np.ndarray:
    """Indices of the ``k`` atoms most similar to ``q`` under ``kernel``."""
    atoms = np.atleast_2d(np.asarray(atoms, dtype=np.float64))
    if k > atoms.shape[0]:
        raise PreconditionError(f"k={k} exceeds the number of atoms {atoms.shape[0]}")
    sims = gram(np.asarray(q, dtype=np.float64)[None, :], atoms, kernel)[0]
    return top_k_indices(sims, k)


def solve_spd_ridge(A, B, ridge: float = 0.0, max_retries: int = 3) -> np.ndarray:
    """Solve ``(A + ridge I) X = B`` with a Cholesky factorization.

    If the factorization fails the ridge is raised to at least
    ``1e-10 * trace(A) / m`` and then multiplied by 10 on each retry.

    Raises
    ------
    SingularError
        When no retry produces a positive definite matrix.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError("A must be square")
    if B.shape[0] != A.shape[0]:
        raise ShapeError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
    if ridge < 0:
        raise PreconditionError("ridge must be non-negative")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-10 * scale):
        raise PreconditionError("A is not symmetric")
    m = A.shape[0]
    eye = np.eye(m)
    floor = 1e-10 * max(np.trace(A), 0.0) / max(m, 1) or 1e-10
    r = ridge
    for attempt in range(max_retries + 1):
        try:
            c = scipy.linalg.cho_factor(A + r * eye, lower=True, check_finite=False)
            X = scipy.linalg.cho_solve(c, B, check_finite=False)
            if np.all(np.isfinite(X)):
                return X
        except np.linalg.LinAlgError:
            pass
        r = max(r, floor) if attempt == 0 else r * 10.0
    raise SingularError(f"matrix not positive definite with ridge up to {r / 10.0:.3g}")
