"""OOD detectors behind one fit/score interface.

All scores are oriented so that larger means more likely out-of-distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np
import scipy.linalg
from scipy.special import logsumexp, softmax

from .data import as_embeddings, check_labels, l2_normalize
from .dictionary import Dictionary, TrainConfig, prepare, train_kmeans, train_nnk_means
from .errors import ConfigError, DataError, ShapeError
from .kernels import KernelSpec, gram, top_k_indices
from .nnk import solve_unchecked

DICTIONARY_METHODS = ("nnk", "ec_nnk", "kmeans")
CLASSWISE_METHODS = ("c_nnk", "c_ec_nnk", "c_kmeans")
LOGIT_METHODS = ("msp", "energy", "d2u")
METHODS = DICTIONARY_METHODS + CLASSWISE_METHODS + ("knn", "mahalanobis") + LOGIT_METHODS
LABEL_AWARE = CLASSWISE_METHODS + ("mahalanobis",) + LOGIT_METHODS


@dataclass
class DetectorModel:
    """A fitted detector.

    ``payload`` maps names to arrays so that every model serializes the
    same way. Class-wise models store ``atoms/<c>`` and ``probs/<c>`` for
    each class ``c``.
    """

    method: str
    kernel: KernelSpec = field(default_factory=KernelSpec)
    payload: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")

    @property
    def n_classes(self) -> int:
        return int(self.payload["n_classes"][0])

    def dictionary(self, c: Optional[int] = None) -> Dictionary:
        suffix = "" if c is None else f"/{c}"
        return Dictionary(
            atoms=self.payload["atoms" + suffix],
            probs=self.payload["probs" + suffix],
            kernel=self.kernel,
            k_sparsity=int(self.payload["k_sparsity"][0]),
        )


def _scalar(v, dtype=np.int64):
    return np.array([v], dtype=dtype)


def _kmeans_dictionary(X, config: TrainConfig) -> Dictionary:
    M = min(config.m_init, X.shape[0])
    res = train_kmeans(X, M, config.kmeans_iters, config.seed)
    centers = res.centers
    if config.kernel.needs_unit_norm:
        centers = l2_normalize(centers)
    counts = np.bincount(res.labels, minlength=M).astype(np.float64)
    return Dictionary(atoms=centers, probs=counts / counts.sum(), kernel=config.kernel, k_sparsity=1)


def _fit_dictionary(method, X, config: TrainConfig) -> Dictionary:
    base = method.removeprefix("c_")
    if base == "kmeans":
        return _kmeans_dictionary(X, config)
    m_init = min(config.m_init, X.shape[0])
    cfg = replace(config, m_init=m_init, k_sparsity=min(config.k_sparsity, m_init),
                  lam=config.lam if base == "ec_nnk" else 0.0)
    return train_nnk_means(X, cfg)


def fit(method: str, X_id=None, labels=None, logits=None, config: Optional[TrainConfig] = None) -> DetectorModel:
    """Fit a detector on in-distribution data.

    Parameters
    ----------
    method : str
        One of :data:`METHODS`.
    X_id : array_like, shape (N, d), optional
        ID embeddings. Required for every method except the logit ones.
    labels : array_like of int, shape (N,), optional
        Class ids, required by class-wise methods and Mahalanobis.
    logits : array_like, shape (N, C), optional
        Classifier logits, required by msp, energy and d2u.
    config : TrainConfig, optional

    Returns
    -------
    DetectorModel
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    config = config or TrainConfig()
    kernel = config.kernel

    if method in LOGIT_METHODS:
        if logits is None:
            raise ConfigError(f"method {method!r} requires logits")
        logits = as_embeddings(logits, "logits")
        return DetectorModel(method, kernel, {"n_classes": _scalar(logits.shape[1])})

    if X_id is None:
        raise ConfigError(f"method {method!r} requires ID embeddings")
    X = as_embeddings(X_id, "X_id")
    if method in LABEL_AWARE:
        if labels is None:
            raise ConfigError(f"method {method!r} is label-aware and requires labels")
        labels = np.asarray(labels, dtype=np.int64)
        C = check_labels(labels, X.shape[0])

    if method in DICTIONARY_METHODS:
        d = _fit_dictionary(method, X, config)
        return DetectorModel(method, kernel, {
            "atoms": d.atoms, "probs": d.probs, "k_sparsity": _scalar(d.k_sparsity)})

    if method in CLASSWISE_METHODS:
        payload = {"n_classes": _scalar(C)}
        ks = []
        for c in range(C):
            d = _fit_dictionary(method, X[labels == c], config)
            payload[f"atoms/{c}"] = d.atoms
            payload[f"probs/{c}"] = d.probs
            ks.append(d.k_sparsity)
        payload["k_sparsity"] = _scalar(max(ks))
        return DetectorModel(method, kernel, payload)

    if method == "knn":
        return DetectorModel(method, kernel, {"train": l2_normalize(X), "k": _scalar(config.knn_k)})

    # mahalanobis: class means and a shared, ridge-regularized covariance
    counts = np.bincount(labels, minlength=C)
    if counts.min() < 2:
        raise DataError(f"class {int(np.argmin(counts))} has fewer than 2 samples")
    means = np.stack([X[labels == c].mean(axis=0) for c in range(C)])
    centered = X - means[labels]
    cov = centered.T @ centered / X.shape[0]
    d = X.shape[1]
    cov += 1e-6 * np.trace(cov) / d * np.eye(d)
    chol = scipy.linalg.cholesky(cov, lower=True)
    return DetectorModel(method, kernel, {"means": means, "chol": chol})


# ------------------------------------------------------------------- scoring


def _dictionary_scores(d: Dictionary, Q) -> np.ndarray:
    k = d.k
    sims = gram(Q, d.atoms, d.kernel)
    K_atoms = gram(d.atoms, d.atoms, d.kernel)
    K_atoms = 0.5 * (K_atoms + K_atoms.T)
    out = np.empty(Q.shape[0])
    for i in range(Q.shape[0]):
        S = top_k_indices(sims[i], k)
        out[i] = solve_unchecked(K_atoms[S][:, S], sims[i, S]).objective
    return out


def _check_dim(model: DetectorModel, Q, d):
    if Q.shape[1] != d:
        raise ConfigError(f"queries have {Q.shape[1]} columns, model expects {d}")


def score_nnk(model: DetectorModel, Q) -> np.ndarray:
    """Kernel reconstruction error of each query on the fitted dictionary.

    The entropy term is never applied at inference. kMeans models score the
    same way with a single atom per query.
    """
    if model.method not in DICTIONARY_METHODS:
        raise ConfigError(f"score_nnk does not apply to {model.method!r}")
    d = model.dictionary()
    Q = as_embeddings(Q, "Q")
    _check_dim(model, Q, d.atoms.shape[1])
    return _dictionary_scores(d, prepare(Q, d.kernel))


def classwise_scores(model: DetectorModel, Q) -> np.ndarray:
    """Per-class reconstruction errors, shape (n_queries, n_classes)."""
    if model.method not in CLASSWISE_METHODS:
        raise ConfigError(f"score_classwise does not apply to {model.method!r}")
    Q = as_embeddings(Q, "Q")
    _check_dim(model, Q, model.payload["atoms/0"].shape[1])
    Qp = prepare(Q, model.kernel)
    return np.stack([_dictionary_scores(model.dictionary(c), Qp) for c in range(model.n_classes)], axis=1)


def score_classwise(model: DetectorModel, Q) -> np.ndarray:
    """Minimum over classes of the per-class reconstruction error."""
    return classwise_scores(model, Q).min(axis=1)


def score_knn(model: DetectorModel, Q) -> np.ndarray:
    """Euclidean distance to the k-th nearest (normalized) training sample.

    Candidates are ranked with one matrix product; the distances of the
    best few are then recomputed from explicit differences.
    """
    train = model.payload["train"]
    k = int(model.payload["k"][0])
    Q = as_embeddings(Q, "Q")
    _check_dim(model, Q, train.shape[1])
    Q = l2_normalize(Q)
    n = train.shape[0]
    n_cand = min(n, k + 8)
    out = np.empty(Q.shape[0])
    for start in range(0, Q.shape[0], 1024):
        block = Q[start : start + 1024]
        sims = block @ train.T
        cand = np.argpartition(-sims, n_cand - 1, axis=1)[:, :n_cand]
        for r in range(block.shape[0]):
            diff = train[cand[r]] - block[r]
            dist = np.sort(np.sqrt(np.sum(diff * diff, axis=1)))
            out[start + r] = dist[k - 1]
    return out


def score_mahalanobis(model: DetectorModel, Q) -> np.ndarray:
    """Smallest squared Mahalanobis distance to any class mean (shared covariance)."""
    means, chol = model.payload["means"], model.payload["chol"]
    Q = as_embeddings(Q, "Q")
    _check_dim(model, Q, means.shape[1])
    Zq = scipy.linalg.solve_triangular(chol, Q.T, lower=True).T
    Zm = scipy.linalg.solve_triangular(chol, means.T, lower=True).T
    d2 = np.sum(Zq**2, axis=1)[:, None] - 2.0 * Zq @ Zm.T + np.sum(Zm**2, axis=1)[None, :]
    return np.maximum(d2, 0.0).min(axis=1)


def score_logits(model: DetectorModel, logits) -> np.ndarray:
    """Logit-based scores: ``1 - max softmax``, ``-logsumexp`` or ``H(p) - log C``."""
    if model.method not in LOGIT_METHODS:
        raise ConfigError(f"score_logits does not apply to {model.method!r}")
    f = as_embeddings(logits, "logits")
    C = model.n_classes
    if f.shape[1] != C:
        raise ShapeError(f"logits have {f.shape[1]} columns, model expects {C}")
    if model.method == "energy":
        return -logsumexp(f, axis=1)
    p = softmax(f, axis=1)
    if model.method == "msp":
        return 1.0 - p.max(axis=1)
    logp = f - logsumexp(f, axis=1, keepdims=True)
    entropy = -np.sum(p * logp, axis=1)
    return entropy - math.log(C)


def score(model: DetectorModel, Q=None, logits=None) -> np.ndarray:
    """Dispatch to the scorer for ``model.method``."""
    if model.method in LOGIT_METHODS:
        if logits is None:
            raise ConfigError(f"method {model.method!r} scores logits, none given")
        return score_logits(model, logits)
    if Q is None:
        raise ConfigError(f"method {model.method!r} scores embeddings, none given")
    if model.method in DICTIONARY_METHODS:
        return score_nnk(model, Q)
    if model.method in CLASSWISE_METHODS:
        return score_classwise(model, Q)
    if model.method == "knn":
        return score_knn(model, Q)
    return score_mahalanobis(model, Q)


def decide(scores, epsilon: float) -> np.ndarray:
    """Boolean OOD flags: a query is OOD when its score exceeds ``epsilon``."""
    return np.asarray(scores) > epsilon


def threshold_for_id_recall(id_scores, recall: float = 0.95) -> float:
    """Smallest threshold that keeps at least ``recall`` of the ID scores at or below it."""
    s = np.sort(np.asarray(id_scores, dtype=np.float64))
    if s.size == 0:
        raise DataError("no ID scores")
    if not 0 < recall <= 1:
        raise ConfigError("recall must lie in (0, 1]")
    n_keep = max(1, math.ceil(recall * s.size - 1e-9))
    return float(s[n_keep - 1])
