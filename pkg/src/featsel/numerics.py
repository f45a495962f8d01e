"""Dense symmetric / PSD matrix utilities.

Every tolerance and factorization choice used by the rest of the package
lives here.  Matrices are plain ``numpy`` arrays; :func:`sym` is the single
entry point that validates and symmetrizes them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatchError, InvalidInputError, NotPositiveDefiniteError

SYMMETRY_ATOL = 1e-10
PSD_RTOL = 1e-9
SPLIT_DROP_RTOL = 1e-12
CHI_RTOL = 1e-6


@dataclass(frozen=True)
class RankOneTerm:
    """``weight * vector vector^T`` with a unit-norm ``vector``."""

    vector: np.ndarray
    weight: float

    def __post_init__(self):
        if not self.weight >= 0:
            raise InvalidInputError(f"rank-one weight must be >= 0, got {self.weight}")

    def matrix(self) -> np.ndarray:
        return self.weight * np.outer(self.vector, self.vector)


def sym(m, *, check: bool = True) -> np.ndarray:
    """Return ``(m + m^T) / 2`` as a float array after validating ``m``."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInputError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    if check:
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(a - a.T)) > SYMMETRY_ATOL * scale:
            raise InvalidInputError("matrix is not symmetric")
    return 0.5 * (a + a.T)


def default_tol(m: np.ndarray) -> float:
    """PSD tolerance scaled by the trace magnitude."""
    return PSD_RTOL * max(1.0, float(np.sum(np.abs(np.diag(m)))))


def eigvalsh(m) -> np.ndarray:
    return np.linalg.eigvalsh(sym(m))


def psd_check(m, tol: float | None = None) -> bool:
    a = sym(m)
    if tol is None:
        tol = default_tol(a)
    return bool(np.linalg.eigvalsh(a)[0] >= -tol)


def loewner_geq(a, b, tol: float | None = None) -> bool:
    """``a ⪰ b`` in the Loewner order."""
    a = sym(a)
    b = sym(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    if tol is None:
        tol = PSD_RTOL * max(1.0, float(np.trace(np.abs(a))), float(np.trace(np.abs(b))))
    return psd_check(a - b, tol)


def cholesky(m) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`NotPositiveDefiniteError`."""
    a = sym(m)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc


def logdet(m) -> float:
    L = cholesky(m)
    return float(2.0 * np.sum(np.log(np.diag(L))))


def min_eig(m) -> float:
    return float(np.linalg.eigvalsh(sym(m))[0])


def spd_inv(m) -> np.ndarray:
    a = sym(m)
    try:
        c = sla.cho_factor(a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc
    inv = sla.cho_solve(c, np.eye(a.shape[0]))
    return 0.5 * (inv + inv.T)


def spd_solve(m, rhs) -> np.ndarray:
    a = sym(m)
    try:
        c = sla.cho_factor(a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc
    return sla.cho_solve(c, np.asarray(rhs, dtype=float))


def rank_one_split(m) -> list[RankOneTerm]:
    """Orthogonal rank-one decomposition ``m = sum_i w_i v_i v_i^T``.

    Eigen-terms below ``1e-12 * trace`` are dropped.
    """
    a = sym(m)
    vals, vecs = np.linalg.eigh(a)
    if vals[0] < -default_tol(a):
        raise InvalidInputError(f"matrix is not PSD (min eigenvalue {vals[0]:.3e})")
    cutoff = SPLIT_DROP_RTOL * max(float(np.trace(a)), 0.0)
    return [
        RankOneTerm(vector=vecs[:, i].copy(), weight=float(vals[i]))
        for i in range(len(vals) - 1, -1, -1)
        if vals[i] > cutoff
    ]


def reassemble(terms: Iterable[RankOneTerm], dim: int) -> np.ndarray:
    out = np.zeros((dim, dim))
    for t in terms:
        out += t.matrix()
    return out


def chi_infimum(terms: Sequence[tuple[float, RankOneTerm]], rtol: float = CHI_RTOL) -> float:
    """Smallest ``gamma > 0`` with ``sum w (gamma - w) M`` PSD.

    ``terms`` holds ``(w, term)`` pairs where ``M = term.matrix()``.  Solved by
    bisection on ``[0, max w]``; ``gamma = max w`` is always feasible.
    """
    if not terms:
        raise InvalidInputError("chi_infimum needs at least one term")
    ws = np.array([w for w, _ in terms], dtype=float)
    if np.any(ws < 0) or not np.all(np.isfinite(ws)):
        raise InvalidInputError("weights must be finite and nonnegative")
    if not np.any(ws > 0):
        raise InvalidInputError("all weights are zero")
    dim = terms[0][1].vector.shape[0]
    first = np.zeros((dim, dim))
    second = np.zeros((dim, dim))
    for w, t in terms:
        if w == 0:
            continue
        mt = t.matrix()
        first += w * mt
        second += w * w * mt
    # feasibility of gamma * first - second; the tolerance tracks the
    # magnitude of the subtracted term so gamma = max w stays feasible
    tol = PSD_RTOL * max(1.0, float(np.trace(second)))

    def feasible(gamma: float) -> bool:
        return bool(np.linalg.eigvalsh(gamma * first - second)[0] >= -tol)

    hi = float(ws.max())
    lo = 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def pairwise_sum(mats: Sequence[np.ndarray], start: np.ndarray | None = None) -> np.ndarray:
    """Tree-ordered sum; error grows as O(log k) rather than O(k)."""
    items = [np.asarray(m, dtype=float) for m in mats]
    if not items:
        if start is None:
            raise InvalidInputError("nothing to sum")
        return np.array(start, dtype=float)
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    total = items[0]
    return total if start is None else np.asarray(start, dtype=float) + total
