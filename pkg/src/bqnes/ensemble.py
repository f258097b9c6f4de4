"""Validation-driven ensemble selection: weighted stacking, re-weighted stacking, beam search."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateMeasureError, InputError, ShapeError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class WeightedEnsemble:
    members: list[str]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "members", list(self.members))
        if len(self.members) != w.size:
            raise InputError("one weight per member is required")
        if len(set(self.members)) != len(self.members):
            raise InputError("ensemble members must be distinct")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InputError("ensemble weights must lie on the simplex")

    def __len__(self):
        return len(self.members)

    def to_dict(self) -> dict:
        return {"members": self.members, "weights": self.weights.tolist()}


def _true_class_probs(val_preds, labels) -> np.ndarray:
    """``(N, n)`` matrix of each candidate's probability for the true label."""
    P = np.asarray(val_preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if P.ndim != 3 or P.shape[1] != labels.size:
        raise ShapeError(f"predictions {P.shape} do not match {labels.size} labels")
    return np.take_along_axis(P, labels[None, :, None].repeat(P.shape[0], 0), -1)[..., 0]


def mixture_nll(weights, Q: np.ndarray) -> float:
    """Mean NLL of the mixture given true-class probabilities ``Q`` (N x n)."""
    return float(-np.mean(np.log(np.maximum(np.asarray(weights) @ Q, PROB_FLOOR))))


def validation_nll(val_preds, labels, weights) -> float:
    return mixture_nll(weights, _true_class_probs(val_preds, labels))


def optimize_stacking(val_preds, labels, n_iter: int = 500, step: float = 0.5, tol: float = 1e-8) -> np.ndarray:
    """Simplex weights minimising validation NLL of the mixture.

    Exponentiated gradient from the uniform point.  The best iterate is
    returned, so the result is never worse than the uniform mixture.
    """
    Q = _true_class_probs(val_preds, labels)
    N = Q.shape[0]
    if N < 1:
        raise InputError("need at least one candidate")
    w = np.full(N, 1.0 / N)
    best_w, best_loss = w, mixture_nll(w, Q)
    for _ in range(n_iter):
        mix = np.maximum(w @ Q, PROB_FLOOR)
        grad = -(Q / mix).mean(1)
        logits = np.log(np.maximum(w, 1e-300)) - step * grad
        new = np.exp(logits - logits.max())
        new /= new.sum()
        delta = np.max(np.abs(new - w))
        w = new
        loss = mixture_nll(w, Q)
        if loss < best_loss:
            best_w, best_loss = w, loss
        if delta < tol:
            break
    return best_w


def _top_m(omega: np.ndarray, M: int, ids: Sequence[str] | None) -> list[int]:
    N = omega.size
    if not 1 <= M <= N:
        raise InputError(f"cannot choose {M} of {N} candidates")
    names = _ids(omega, ids)
    return sorted(range(N), key=lambda i: (-omega[i], names[i]))[:M]


def _ids(omega, ids):
    return list(ids) if ids is not None else [str(i) for i in range(len(omega))]


def select_ws(omega, M: int, ids: Sequence[str] | None = None) -> WeightedEnsemble:
    """Top-M stacking weights, renormalised."""
    omega = np.asarray(omega, dtype=np.float64)
    top = _top_m(omega, M, ids)
    kept = omega[top]
    if not kept.sum() > 0:
        raise DegenerateMeasureError("all selected stacking weights are zero")
    names = _ids(omega, ids)
    return WeightedEnsemble([names[i] for i in top], kept / kept.sum())


def select_rs(omega, M: int, K: np.ndarray, ids: Sequence[str] | None = None) -> WeightedEnsemble:
    """Top-M stacking weights plus excluded mass reallocated by kernel similarity.

    Member ``m`` receives ``omega_l * k(m, l) / sum_m' k(m', l)`` from every
    excluded ``l``.  An excluded candidate with zero similarity to every member
    is split uniformly.
    """
    omega = np.asarray(omega, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    N = omega.size
    if K.shape != (N, N):
        raise ShapeError(f"kernel matrix {K.shape} does not match {N} candidates")
    top = _top_m(omega, M, ids)
    excluded = np.setdiff1d(np.arange(N), top)
    w = omega[top].copy()
    if excluded.size:
        sim = np.maximum(K[np.ix_(top, excluded)], 0.0)
        col = sim.sum(0)
        dead = col <= 0
        if dead.any():
            log.info("%d excluded candidates have zero similarity to every member; split uniformly", dead.sum())
        share = np.where(dead[None, :], 1.0 / len(top), sim / np.where(dead, 1.0, col)[None, :])
        w += share @ omega[excluded]
    names = _ids(omega, ids)
    total = w.sum()
    if not total > 0:
        raise DegenerateMeasureError("re-weighted stacking produced zero total weight")
    return WeightedEnsemble([names[i] for i in top], w / total)


def beam_search(val_preds, labels, M: int, ids: Sequence[str] | None = None) -> WeightedEnsemble:
    """Greedy equal-weight ensemble growth, starting from the best single candidate."""
    Q = _true_class_probs(val_preds, labels)
    N = Q.shape[0]
    if not 1 <= M <= N:
        raise InputError(f"cannot choose {M} of {N} candidates")
    names = _ids(np.zeros(N), ids)
    logq = np.log(np.maximum(Q, PROB_FLOOR))
    single = -logq.mean(1)
    chosen = [min(range(N), key=lambda i: (single[i], names[i]))]
    total = Q[chosen[0]].copy()
    while len(chosen) < M:
        k = len(chosen) + 1
        best, best_loss = None, np.inf
        for i in range(N):
            if i in chosen:
                continue
            loss = -np.mean(np.log(np.maximum((total + Q[i]) / k, PROB_FLOOR)))
            if loss < best_loss or (loss == best_loss and names[i] < names[best]):
                best, best_loss = i, loss
        chosen.append(best)
        total += Q[best]
    return WeightedEnsemble([names[i] for i in chosen], np.full(M, 1.0 / M))
