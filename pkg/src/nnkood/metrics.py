"""Rank-based OOD metrics (OOD is the positive class) and scoring-time measurement."""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata
from threadpoolctl import threadpool_limits

from .errors import MetricError


def _split(scores, is_ood):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    is_ood = np.asarray(is_ood, dtype=bool).ravel()
    if scores.shape != is_ood.shape:
        raise MetricError(f"{scores.size} scores but {is_ood.size} flags")
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores must be finite")
    n_pos = int(is_ood.sum())
    n_neg = is_ood.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("need at least one ID and one OOD sample")
    return scores, is_ood, n_pos, n_neg


def auroc(scores, is_ood) -> float:
    """Probability that a random OOD score exceeds a random ID score, ties counting 1/2."""
    scores, is_ood, n_pos, n_neg = _split(scores, is_ood)
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[is_ood].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _descending_counts(scores, is_ood):
    # cumulative positives/negatives at each distinct threshold, highest first
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], is_ood[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    return s[last], tp, fp


def aupr(scores, is_ood) -> float:
    """Average precision: sum over distinct thresholds of recall gain times precision."""
    scores, is_ood, n_pos, _ = _split(scores, is_ood)
    _, tp, fp = _descending_counts(scores, is_ood)
    precision = tp / (tp + fp)
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return math.fsum(recall_gain * precision)


def fpr_at_tpr(scores, is_ood, tpr_target: float = 0.95) -> float:
    """ID false-positive rate at the largest threshold reaching ``tpr_target`` OOD recall.

    A sample counts as flagged when its score is strictly above the
    threshold; thresholds range over the observed scores and -inf.
    """
    if not 0 < tpr_target <= 1:
        raise MetricError("tpr_target must lie in (0, 1]")
    scores, is_ood, n_pos, n_neg = _split(scores, is_ood)
    thresholds, tp, fp = _descending_counts(scores, is_ood)
    # a threshold equal to the i-th distinct value flags everything above it,
    # i.e. the counts of the (i-1)-th entry; -inf flags everything
    tp_above = np.r_[0, tp[:-1], n_pos]
    fp_above = np.r_[0, fp[:-1], n_neg]
    ok = tp_above >= tpr_target * n_pos - 1e-9
    first = int(np.argmax(ok))  # thresholds are descending, so first hit is the largest
    return float(fp_above[first] / n_neg)


@dataclass
class MetricsReport:
    auroc: float
    aupr: float
    fpr_at_95: float
    inference_seconds: float
    n_id: int
    n_ood: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def evaluate(scores, is_ood, inference_seconds: float = 0.0) -> MetricsReport:
    is_ood = np.asarray(is_ood, dtype=bool)
    return MetricsReport(
        auroc=auroc(scores, is_ood),
        aupr=aupr(scores, is_ood),
        fpr_at_95=fpr_at_tpr(scores, is_ood, 0.95),
        inference_seconds=float(inference_seconds),
        n_id=int((~is_ood).sum()),
        n_ood=int(is_ood.sum()),
    )


def time_scoring(model, Q=None, logits=None, repeats: int = 3, single_thread: bool = True):
    """Score ``Q`` ``repeats`` times and return ``(scores, median wall seconds)``.

    Only the scoring call is timed. With ``single_thread`` the BLAS pools
    are limited to one thread for the duration.
    """
    from .detectors import score

    times = []
    scores = None
    limits = threadpool_limits(1) if single_thread else None
    try:
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            s = score(model, Q, logits)
            times.append(time.perf_counter() - t0)
            if scores is not None and not np.array_equal(scores, s):
                raise MetricError("scoring is not deterministic across repeats")
            scores = s
    finally:
        if limits is not None:
            limits.unregister()
    return scores, max(statistics.median(times), np.finfo(float).tiny)
