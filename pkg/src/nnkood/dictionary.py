"""Dictionary learning: NNK-Means, its entropy-constrained variant, and kMeans."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np
import scipy.sparse

from .data import as_embeddings, l2_normalize
from .errors import ConfigError, InternalError, NNKError, PreconditionError
from .kernels import KernelSpec, gram, solve_spd_ridge, top_k_indices
from .nnk import NnkSolution, ec_nnk_solve, reconstruction_error, solve_unchecked

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for dictionary training and detector fitting.

    ``lam`` is the entropy weight; ``final_plain_epochs`` trailing epochs
    run with ``lam = 0``. ``ridge=None`` selects ``1e-8 * trace(W W') / M``
    for the dictionary update. ``prune=False`` keeps atoms whose
    probability drops to zero. ``keep_support`` lets a training sample
    keep last epoch's support when it codes better than the k nearest
    atoms, which makes the alternation a descent method.
    """

    m_init: int = 64
    k_sparsity: int = 5
    lam: float = 0.0
    epochs: int = 10
    final_plain_epochs: int = 2
    kernel: KernelSpec = field(default_factory=KernelSpec)
    seed: int = 0
    ridge: Optional[float] = None
    prune: bool = True
    entropy_sign: str = "cross-entropy"
    kmeans_iters: int = 50
    knn_k: int = 1
    keep_support: bool = True

    def __post_init__(self):
        if self.m_init < 1 or self.k_sparsity < 1:
            raise ConfigError("m_init and k_sparsity must be >= 1")
        if self.k_sparsity > self.m_init:
            raise ConfigError("k_sparsity cannot exceed m_init")
        if self.epochs < 0 or not 0 <= self.final_plain_epochs <= self.epochs:
            raise ConfigError("final_plain_epochs must lie in [0, epochs]")
        if not self.lam >= 0:
            raise ConfigError("lambda must be non-negative")
        if self.ridge is not None and self.ridge < 0:
            raise ConfigError("ridge must be non-negative")
        if self.entropy_sign not in ("cross-entropy", "inverse"):
            raise ConfigError(f"unknown entropy sign {self.entropy_sign!r}")
        if self.knn_k < 1 or self.kmeans_iters < 1:
            raise ConfigError("knn_k and kmeans_iters must be >= 1")


@dataclass
class Dictionary:
    """Learned atoms in input space with their selection probabilities."""

    atoms: np.ndarray
    probs: np.ndarray
    kernel: KernelSpec
    k_sparsity: int
    trace: List[dict] = field(default_factory=list, repr=False)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def k(self) -> int:
        """Support size actually usable with the current number of atoms."""
        return min(self.k_sparsity, self.n_atoms)


@dataclass
class CodingResult:
    codes: List[NnkSolution]
    support_sets: List[np.ndarray]

    def total_error(self) -> float:
        return float(sum(c.objective for c in self.codes))


def prepare(X, kernel: KernelSpec) -> np.ndarray:
    """Validate ``X`` and project it to the unit sphere when the kernel needs it."""
    X = as_embeddings(X)
    return l2_normalize(X) if kernel.needs_unit_norm else X


def kmeanspp_init(X, M: int, seed) -> np.ndarray:
    """Pick ``M`` distinct rows of ``X`` by D^2-weighted sampling (kMeans++).

    Returns the selected row indices; ``X[idx]`` are the initial atoms.
    Sampling runs over a canonical (byte-wise) ordering of the rows, so
    permuting ``X`` permutes the returned indices and nothing else.
    """
    X = as_embeddings(X)
    order = _canonical_order(X)
    return order[_kmeanspp_sorted(X[order], M, seed)]


def _canonical_order(X):
    rows = np.ascontiguousarray(X).view(np.dtype((np.void, X.itemsize * X.shape[1]))).ravel()
    return np.argsort(rows, kind="stable")


def _kmeanspp_sorted(X, M, seed):
    N = X.shape[0]
    if M > N:
        raise PreconditionError(f"cannot choose {M} atoms from {N} rows")
    rng = np.random.default_rng(seed)
    chosen = np.empty(M, dtype=np.int64)
    taken = np.zeros(N, dtype=bool)
    chosen[0] = rng.integers(N)
    taken[chosen[0]] = True
    sq = np.sum(X * X, axis=1)
    d2 = np.maximum(sq - 2.0 * X @ X[chosen[0]] + sq[chosen[0]], 0.0)
    for m in range(1, M):
        w = np.where(taken, 0.0, d2)
        total = w.sum()
        if total > 0:
            nxt = int(rng.choice(N, p=w / total))
        else:
            # remaining rows duplicate chosen ones; fall back to uniform over the rest
            nxt = int(rng.choice(np.flatnonzero(~taken)))
        chosen[m] = nxt
        taken[nxt] = True
        d2 = np.minimum(d2, np.maximum(sq - 2.0 * X @ X[nxt] + sq[nxt], 0.0))
    return chosen


def _code_one(K_atoms, sims_i, S, log_p, lam, sign, fallback):
    K_SS = K_atoms[S][:, S]
    K_Sq = sims_i[S]
    if lam > 0:
        sol = ec_nnk_solve(K_SS, K_Sq, log_p[S], lam, sign)
        if fallback and sol.support.size == 0:
            sol = solve_unchecked(K_SS, K_Sq)
        return sol
    return solve_unchecked(K_SS, K_Sq)


def sparse_code_dataset(
    X,
    dictionary: Dictionary,
    lam: float = 0.0,
    sign: str = "cross-entropy",
    fallback: bool = True,
    previous: Optional[List[np.ndarray]] = None,
) -> CodingResult:
    """Code every row of ``X`` on its ``k`` most similar atoms.

    ``X`` must already be in the dictionary's geometry (see :func:`prepare`).
    When the entropy-constrained code of a sample is all zero and
    ``fallback`` is set, the sample is re-solved with ``lam = 0``.

    ``previous`` optionally gives, per sample, atom indices it used before;
    that set is solved as well and kept when its objective is strictly
    lower than the nearest-atom code.
    """
    atoms = dictionary.atoms
    kernel = dictionary.kernel
    k = dictionary.k
    sims = gram(X, atoms, kernel)
    K_atoms = gram(atoms, atoms, kernel)
    K_atoms = 0.5 * (K_atoms + K_atoms.T)
    use_entropy = lam > 0
    if use_entropy:
        with np.errstate(divide="ignore"):
            log_p = np.log(dictionary.probs)
    else:
        log_p = None
    codes, supports = [], []
    for i in range(X.shape[0]):
        S = top_k_indices(sims[i], k)
        try:
            sol = _code_one(K_atoms, sims[i], S, log_p, lam, sign, fallback)
            if previous is not None:
                P = previous[i]
                if P.size and not np.array_equal(np.sort(P), np.sort(S)):
                    alt = _code_one(K_atoms, sims[i], P, log_p, lam, sign, fallback)
                    if alt.objective < sol.objective:
                        S, sol = P, alt
        except NNKError as exc:
            raise type(exc)(f"sample {i}: {exc}") from exc
        codes.append(sol)
        supports.append(S)
    return CodingResult(codes=codes, support_sets=supports)


def code_matrix(coding: CodingResult, M: int) -> scipy.sparse.csr_matrix:
    """Assemble the sparse M x N weight matrix W (one column per sample)."""
    rows, cols, vals = [], [], []
    for j, (sol, S) in enumerate(zip(coding.codes, coding.support_sets)):
        pos = sol.support
        rows.append(S[pos])
        cols.append(np.full(pos.size, j))
        vals.append(sol.theta[pos])
    N = len(coding.codes)
    if rows:
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(M, N))


def update_probabilities(coding: CodingResult, M: int) -> np.ndarray:
    """Fraction of all positive assignments that land on each atom."""
    if not coding.codes:
        raise PreconditionError("empty coding")
    counts = np.zeros(M)
    for sol, S in zip(coding.codes, coding.support_sets):
        np.add.at(counts, S[sol.support], 1.0)
    total = counts.sum()
    if total == 0:
        raise InternalError("no sample selected any atom")
    return counts / total


def dictionary_update(X, coding: CodingResult, atoms, kernel: KernelSpec, ridge: Optional[float] = None) -> np.ndarray:
    """Least-squares atom update ``D = (W W' + ridge I)^-1 W X``.

    This is the input-space form of ``A = W'(W W')^-1`` with atoms
    ``A' X``. Atoms that no sample uses keep their previous value. With the
    cosine kernel the new atoms are renormalized. With the gaussian kernel
    the sample weights of each atom (the columns of ``A``) are rescaled to
    sum to one: codes there are kernel values below one, and the raw
    combination would push atoms away from the data on every epoch.
    """
    atoms = np.array(atoms, dtype=np.float64, copy=True)
    M = atoms.shape[0]
    W = code_matrix(coding, M)
    used = np.flatnonzero(W.getnnz(axis=1) > 0)
    if used.size == 0:
        return atoms
    Wu = W[used]
    G = (Wu @ Wu.T).toarray()
    G = 0.5 * (G + G.T)
    WX = np.asarray(Wu @ X)
    if ridge is None:
        ridge = 1e-8 * np.trace(G) / used.size
    if kernel.needs_unit_norm:
        new = solve_spd_ridge(G, WX, ridge)
        norms = np.linalg.norm(new, axis=1)
        ok = norms > 0
    else:
        # last column carries the weight sums A' 1
        sol = solve_spd_ridge(G, np.column_stack([WX, np.asarray(Wu.sum(axis=1)).ravel()]), ridge)
        new, norms = sol[:, :-1], sol[:, -1]
        ok = norms > 1e-12 * np.abs(norms).max()
    new[ok] /= norms[ok, None]
    new[~ok] = atoms[used[~ok]]
    atoms[used] = new
    return atoms


def _train_errors(coding: CodingResult, dictionary: Dictionary, X) -> float:
    # plain reconstruction error of the chosen codes, without the entropy term
    K_atoms = gram(dictionary.atoms, dictionary.atoms, dictionary.kernel)
    sims = gram(X, dictionary.atoms, dictionary.kernel)
    total = 0.0
    for i, (sol, S) in enumerate(zip(coding.codes, coding.support_sets)):
        total += reconstruction_error(sol.theta, K_atoms[np.ix_(S, S)], sims[i, S])
    return total


def train_nnk_means(X, config: TrainConfig) -> Dictionary:
    """Train an (entropy-constrained) NNK-Means dictionary.

    Each epoch codes all samples, recomputes atom probabilities, updates
    the atoms and, when ``config.prune`` is set, drops atoms with zero
    probability. ``lam`` is forced to zero for the last
    ``config.final_plain_epochs`` epochs. With ``lam == 0`` this is plain
    NNK-Means.

    The returned dictionary carries a per-epoch ``trace`` with the number
    of atoms, the lambda used and the total train reconstruction error.
    """
    kernel = config.kernel
    X = prepare(X, kernel)
    N = X.shape[0]
    M = min(config.m_init, N)
    idx = kmeanspp_init(X, M, config.seed)
    d = Dictionary(
        atoms=X[idx].copy(),
        probs=np.full(M, 1.0 / M),
        kernel=kernel,
        k_sparsity=min(config.k_sparsity, M),
    )
    previous = None
    for epoch in range(config.epochs):
        lam = 0.0 if epoch >= config.epochs - config.final_plain_epochs else config.lam
        coding = sparse_code_dataset(X, d, lam, config.entropy_sign, previous=previous)
        error = _train_errors(coding, d, X) if lam > 0 else coding.total_error()
        probs = update_probabilities(coding, d.n_atoms)
        atoms = dictionary_update(X, coding, d.atoms, kernel, config.ridge)
        if config.keep_support:
            previous = [S[sol.support] for sol, S in zip(coding.codes, coding.support_sets)]
        if config.prune:
            keep = probs > 0
            atoms, probs = atoms[keep], probs[keep]
            probs = probs / probs.sum()
            if previous is not None:
                # every used atom has p > 0, so retained supports survive pruning
                remap = np.cumsum(keep) - 1
                previous = [remap[P] for P in previous]
        else:
            # zero-probability atoms would yield log(0); give them the floor 1/N
            probs = np.maximum(probs, 1.0 / (N * d.n_atoms))
            probs = probs / probs.sum()
        d.trace.append({"epoch": epoch, "lambda": lam, "n_atoms_coded": d.n_atoms,
                        "train_error": error, "n_atoms": atoms.shape[0]})
        logger.debug("epoch %d: lambda=%g error=%.6g atoms=%d", epoch, lam, error, atoms.shape[0])
        d = Dictionary(atoms=atoms, probs=probs, kernel=kernel,
                       k_sparsity=config.k_sparsity, trace=d.trace)
    return d


def total_reconstruction_error(X, dictionary: Dictionary) -> float:
    """Sum of plain (``lam = 0``) reconstruction errors of ``X`` on ``dictionary``."""
    X = prepare(X, dictionary.kernel)
    return sparse_code_dataset(X, dictionary, 0.0).total_error()


class KMeansResult(NamedTuple):
    centers: np.ndarray
    labels: np.ndarray
    inertia: List[float]


def train_kmeans(X, M: int, iters: int = 50, seed=0) -> KMeansResult:
    """Lloyd's algorithm from a kMeans++ start.

    An empty cluster is re-seeded with the point farthest from its current
    center. ``inertia`` records the sum of squared distances after each
    assignment step.
    """
    X = as_embeddings(X)
    N = X.shape[0]
    if M > N:
        raise PreconditionError(f"cannot fit {M} centers to {N} rows")
    centers = X[kmeanspp_init(X, M, seed)].copy()
    sq = np.sum(X * X, axis=1)
    inertia = []
    labels = np.zeros(N, dtype=np.int64)
    for it in range(iters):
        d2 = np.maximum(sq[:, None] - 2.0 * X @ centers.T + np.sum(centers**2, axis=1)[None, :], 0.0)
        labels = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(N), labels]
        inertia.append(float(point_d2.sum()))
        new = centers.copy()
        counts = np.bincount(labels, minlength=M)
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(point_d2))
            new[c] = X[far]
            point_d2[far] = 0.0
        nonempty = counts > 0
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        new[nonempty] = sums[nonempty] / counts[nonempty, None]
        if np.array_equal(new, centers):
            break
        centers = new
    # exact distances for the final assignment
    d2 = np.maximum(sq[:, None] - 2.0 * X @ centers.T + np.sum(centers**2, axis=1)[None, :], 0.0)
    labels = np.argmin(d2, axis=1)
    return KMeansResult(centers=centers, labels=labels, inertia=inertia)
