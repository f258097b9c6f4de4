"""Reduce a discrete posterior over candidates to an M-point weighted ensemble.

Test functions come from a Nyström approximation of the candidate Gram matrix
through M-1 landmarks; the constant function is always matched as well, so
the reduced measure keeps total mass one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .ensemble import WeightedEnsemble
from .errors import DegenerateKernelError, InputError, RecombinationError
from .quadrature import DiscreteMeasure

EIG_RELATIVE_FLOOR = 1e-10


def select_nystrom_subset(K: np.ndarray, m: int) -> list[int]:
    """Greedy pivoted-Cholesky landmark order: take the largest residual diagonal each step."""
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    if not 0 <= m <= n:
        raise InputError(f"cannot pick {m} landmarks from {n} points")
    resid = np.diag(K).astype(np.float64).copy()
    L = np.zeros((n, m))
    chosen: list[int] = []
    taken = np.zeros(n, dtype=bool)
    for j in range(m):
        i = int(np.argmax(np.where(taken, -np.inf, resid)))
        chosen.append(i)
        taken[i] = True
        if resid[i] > 0:
            col = (K[:, i] - L[:, :j] @ L[i, :j]) / np.sqrt(resid[i])
            L[:, j] = col
            resid = np.maximum(resid - col**2, 0.0)
        resid[i] = 0.0
    return chosen


def nystrom_error(K: np.ndarray, subset) -> float:
    """Frobenius norm of ``K - K[:, S] K[S, S]^+ K[S, :]``."""
    S = list(subset)
    KS = K[:, S]
    return float(np.linalg.norm(K - KS @ np.linalg.pinv(K[np.ix_(S, S)]) @ KS.T))


@dataclass(frozen=True, eq=False)
class TestFunctionMatrix:
    """Row ``t`` is ``phi_t = u_t^T k(S, .)`` evaluated on every support point."""

    phi: np.ndarray
    subset: list[int]
    eigvecs: np.ndarray
    eigvals: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.phi.T / self.eigvals) @ self.phi


def build_test_functions(K: np.ndarray, subset) -> TestFunctionMatrix:
    K = np.asarray(K, dtype=np.float64)
    S = list(subset)
    if not S:
        raise DegenerateKernelError("empty landmark set")
    lam, U = linalg.eigh(K[np.ix_(S, S)])
    keep = lam > EIG_RELATIVE_FLOOR * max(float(np.trace(K[np.ix_(S, S)])), 0.0)
    if not np.any(keep):
        raise DegenerateKernelError("every landmark eigenvalue is below the rank threshold")
    lam, U = lam[keep][::-1], U[:, keep][:, ::-1]
    return TestFunctionMatrix(U.T @ K[S, :], S, U, lam)


def nystrom_test_functions(K: np.ndarray, M: int) -> TestFunctionMatrix:
    """M-1 landmark test functions for an M-point recombination."""
    if M <= 1:
        return TestFunctionMatrix(np.zeros((0, K.shape[0])), [], np.zeros((0, 0)), np.zeros(0))
    return build_test_functions(K, select_nystrom_subset(K, min(M - 1, K.shape[0])))


def _null_vector(A: np.ndarray) -> np.ndarray:
    try:
        _, _, Vt = linalg.svd(A, full_matrices=True, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise RecombinationError(f"SVD failed on a {A.shape} block: {exc}") from None
    return Vt[-1]


def recombine_weights(weights: np.ndarray, phi: np.ndarray, M: int) -> np.ndarray:
    """Carathéodory reduction of ``weights`` to at most ``M`` non-zero entries.

    Preserves ``phi @ w`` and ``sum(w)``.  Each step takes r+2 support points
    (r = number of test functions), finds a null direction of the moment
    block including the row of ones, and moves along it until one weight
    hits zero, choosing the sign with the shorter step.
    """
    w = np.asarray(weights, dtype=np.float64).copy()
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    r = phi.shape[0]
    if M < r + 1:
        raise InputError(f"{r} test functions need M >= {r + 1}")
    A = np.vstack([phi, np.ones(w.size)])
    idx = np.flatnonzero(w > 0)
    while idx.size > M:
        block = idx[: r + 2]
        v = _null_vector(A[:, block])
        wb = w[block]
        pos, neg = v > 0, v < 0
        if not pos.any() or not neg.any():
            raise RecombinationError(f"null direction has one sign; block={block.tolist()} v={v.tolist()}")
        r_pos = np.where(pos, wb / np.where(pos, v, 1.0), np.inf)
        r_neg = np.where(neg, wb / np.where(neg, -v, 1.0), np.inf)
        jp, jn = int(np.argmin(r_pos)), int(np.argmin(r_neg))
        if r_pos[jp] <= r_neg[jn]:
            wb = wb - r_pos[jp] * v
            zero = jp
        else:
            wb = wb + r_neg[jn] * v
            zero = jn
        wb[zero] = 0.0
        wb[wb < 0] = 0.0
        w[block] = wb
        idx = idx[w[idx] > 0]
    w[w < 0] = 0.0
    return w / w.sum()


def recombine(measure: DiscreteMeasure, phi: TestFunctionMatrix | np.ndarray, M: int) -> WeightedEnsemble:
    """Reduce ``measure`` to at most ``M`` members matching every test-function expectation."""
    P = phi.phi if isinstance(phi, TestFunctionMatrix) else np.atleast_2d(phi)
    if P.shape[1] != len(measure.support):
        raise InputError("test functions must be evaluated on every support point")
    if M < 1:
        raise InputError("M must be >= 1")
    w = measure.weights
    if np.count_nonzero(w) <= M:
        keep = np.flatnonzero(w > 0) if len(measure.support) > M else np.arange(w.size)
    else:
        w = recombine_weights(w, P, M)
        keep = np.flatnonzero(w > 0)
    return WeightedEnsemble([measure.support[i] for i in keep], w[keep] / w[keep].sum())


def posterior_recombination(measure: DiscreteMeasure, K: np.ndarray, M: int) -> WeightedEnsemble:
    """Landmarks from ``K``, then recombination of ``measure`` down to ``M`` members."""
    if M >= len(measure.support):
        return WeightedEnsemble(list(measure.support), measure.weights.copy())
    return recombine(measure, nystrom_test_functions(K, M), M)
