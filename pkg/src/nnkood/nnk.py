"""Non-negative kernel regression on a small support set.

Every function here solves or evaluates

    minimize   0.5 * theta' K_SS theta - theta' K_Sq
    subject to theta >= 0

for a handful of atoms ``S``. The entropy-constrained variant shifts the
linear term by ``lam * log p_S`` before solving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, PreconditionError, ShapeError

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class NnkSolution:
    """Result of one NNK solve.

    Attributes
    ----------
    theta : numpy.ndarray, shape (s,)
        Non-negative weights over the support set ``S``.
    support : numpy.ndarray of int
        Positions in ``S`` holding strictly positive weights.
    objective : float
        Value of the (possibly entropy-shifted) quadratic at ``theta``.
    """

    theta: np.ndarray
    support: np.ndarray
    objective: float


def _solve(K, b):
    try:
        return np.linalg.solve(K, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(K, b, rcond=None)[0]


def _sub(K, idx):
    return K[idx][:, idx]


def _active_set(K, b, max_iter):
    """Lawson-Hanson iteration on the quadratic form. Returns theta."""
    s = b.shape[0]
    tol = 1e-12 * max(1.0, float(np.abs(b).max()))

    # warm start: the unconstrained minimizer is optimal when it is feasible
    z = _solve(K, b)
    if z.min() >= 0 and np.isfinite(z).all():
        if np.abs(K @ z - b).max() <= 1e-10 * (1.0 + np.abs(b).max()):
            return z

    theta = np.zeros(s)
    passive = np.zeros(s, dtype=bool)
    # indices whose positive gradient proved to be rounding noise; cleared
    # whenever theta moves
    blocked = np.zeros(s, dtype=bool)
    w = b.copy()
    it = 0
    while True:
        cand = np.where(passive | blocked, -np.inf, w)
        j = int(np.argmax(cand))
        if cand[j] <= tol:
            break
        passive[j] = True
        idx = np.flatnonzero(passive)
        z = np.zeros(s)
        z[idx] = _solve(_sub(K, idx), b[idx])
        if z[j] <= 0:
            # the entering weight cannot grow (near-duplicate atoms): skip it
            passive[j] = False
            blocked[j] = True
            continue
        blocked[:] = False
        it += 1
        if it > max_iter:
            raise ConvergenceError(f"active set did not settle within {max_iter} iterations")
        while True:
            if np.all(z[idx] > 0):
                theta = z
                break
            # step toward z until the first passive weight hits zero
            neg = idx[z[idx] <= 0]
            alpha = np.min(theta[neg] / (theta[neg] - z[neg]))
            theta = theta + alpha * (z - theta)
            passive &= theta > tol
            theta[~passive] = 0.0
            if not passive.any():
                break
            idx = np.flatnonzero(passive)
            z = np.zeros(s)
            z[idx] = _solve(_sub(K, idx), b[idx])
        w = b - K @ theta
    return theta


def _quadratic(theta, K, b):
    return float(0.5 * theta @ K @ theta - theta @ b)


def _as_problem(K_SS, K_Sq):
    K = np.atleast_2d(np.asarray(K_SS, dtype=np.float64))
    b = np.atleast_1d(np.asarray(K_Sq, dtype=np.float64))
    s = b.shape[0]
    if s < 1:
        raise PreconditionError("support set must hold at least one atom")
    if K.shape != (s, s):
        raise ShapeError(f"K_SS has shape {K.shape}, expected {(s, s)}")
    if not np.all(np.isfinite(K)) or not np.all(np.isfinite(b)):
        raise PreconditionError("non-finite kernel values")
    if np.max(np.abs(K - K.T)) > SYMMETRY_TOL:
        raise PreconditionError("K_SS is not symmetric")
    return K, b


def _solution(theta, K, b):
    theta = np.maximum(theta, 0.0)
    support = np.flatnonzero(theta > 0)
    return NnkSolution(theta=theta, support=support, objective=_quadratic(theta, K, b))


def nnk_solve(K_SS, K_Sq) -> NnkSolution:
    """Minimize ``0.5 t'Kt - t'k`` over ``t >= 0`` with an exact active-set method.

    Parameters
    ----------
    K_SS : array_like, shape (s, s)
        Kernel among the selected atoms. Must be symmetric.
    K_Sq : array_like, shape (s,)
        Kernel between the selected atoms and the query.

    Returns
    -------
    NnkSolution

    Raises
    ------
    PreconditionError
        If ``K_SS`` is not symmetric within 1e-10.
    ConvergenceError
        If the active set changes more than ``3 s`` times.
    """
    K, b = _as_problem(K_SS, K_Sq)
    return solve_unchecked(K, b)


def solve_unchecked(K, b) -> NnkSolution:
    """:func:`nnk_solve` without input validation, for tight loops over samples.

    ``K`` must be a symmetric float64 matrix and ``b`` a matching vector.
    """
    theta = _active_set(K, b, 3 * b.shape[0])
    return _solution(theta, K, b)


def entropy_shift(log_p_S, lam: float, sign: str = "cross-entropy") -> np.ndarray:
    """Additive change to the linear term produced by the entropy penalty.

    ``"cross-entropy"`` discounts rarely selected atoms (``+lam * log p``,
    which is <= 0). ``"inverse"`` applies the penalty with the opposite sign,
    i.e. it favours rare atoms; it exists only for comparison runs.
    """
    log_p_S = np.atleast_1d(np.asarray(log_p_S, dtype=np.float64))
    if not np.all(np.isfinite(log_p_S)):
        raise PreconditionError("log-probabilities must be finite")
    if np.any(log_p_S > 0):
        raise PreconditionError("log-probabilities must be <= 0")
    if lam < 0:
        raise PreconditionError("lambda must be non-negative")
    if sign == "cross-entropy":
        return lam * log_p_S
    if sign == "inverse":
        return -lam * log_p_S
    raise PreconditionError(f"unknown entropy sign {sign!r}")


def ec_nnk_solve(K_SS, K_Sq, log_p_S, lam: float, sign: str = "cross-entropy") -> NnkSolution:
    """Entropy-constrained NNK: ``nnk_solve(K_SS, K_Sq + lam * log_p_S)``.

    The reported objective includes the entropy term. With ``lam == 0`` the
    result is identical to :func:`nnk_solve`.
    """
    K, b = _as_problem(K_SS, K_Sq)
    shift = entropy_shift(log_p_S, lam, sign)
    if shift.shape != b.shape:
        raise ShapeError("log_p_S must match K_Sq")
    return nnk_solve(K, b + shift)


def reconstruction_error(theta, K_SS, K_Sq) -> float:
    """Kernel reconstruction error ``0.5 t'Kt - t'k`` of a code ``theta``.

    For a query with ``K(q, q) = 1`` and ``theta`` from :func:`nnk_solve`
    the value lies in ``[-0.5, 0]``; larger means worse reconstruction.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K_SS, dtype=np.float64))
    b = np.atleast_1d(np.asarray(K_Sq, dtype=np.float64))
    s = theta.shape[0]
    if b.shape != (s,) or K.shape != (s, s):
        raise ShapeError("theta, K_SS and K_Sq dimensions disagree")
    return _quadratic(theta, K, b)
