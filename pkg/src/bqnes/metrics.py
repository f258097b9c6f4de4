"""Ensemble prediction and test metrics: accuracy, summed log likelihood, top-label ECE."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .ensemble import WeightedEnsemble
from .errors import InputError, ShapeError

PROB_FLOOR = 1e-12
DEFAULT_BINS = 15


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    log_likelihood: float
    ece: float
    n_examples: int
    n_bins: int = DEFAULT_BINS

    def to_dict(self) -> dict:
        return asdict(self)


def _check(preds, labels) -> tuple[np.ndarray, np.ndarray]:
    P = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if P.ndim != 2 or P.shape[0] != y.size:
        raise ShapeError(f"predictions {P.shape} do not match {y.size} labels")
    if y.size and (y.min() < 0 or y.max() >= P.shape[1]):
        raise InputError("labels out of range")
    return P, y


def ensemble_predict(ensemble: WeightedEnsemble | np.ndarray, preds) -> np.ndarray:
    """Convex combination ``sum_m w_m p_m`` of the members' prediction matrices.

    ``preds`` is ``(M, n, C)``, aligned with the ensemble's members.
    """
    w = ensemble.weights if isinstance(ensemble, WeightedEnsemble) else np.asarray(ensemble, dtype=np.float64)
    P = np.asarray(preds, dtype=np.float64)
    if P.ndim != 3 or P.shape[0] != w.size:
        raise ShapeError(f"{w.size} weights for predictions of shape {P.shape}")
    return np.tensordot(w, P, axes=1)


def accuracy(preds, labels) -> float:
    """Fraction of rows whose argmax (first maximal class) equals the label."""
    P, y = _check(preds, labels)
    if y.size == 0:
        return 0.0
    return float(np.mean(P.argmax(1) == y))


def log_likelihood(preds, labels) -> float:
    P, y = _check(preds, labels)
    return float(np.log(np.maximum(P[np.arange(y.size), y], PROB_FLOOR)).sum())


def ece(preds, labels, n_bins: int = DEFAULT_BINS) -> float:
    """Top-label expected calibration error with equal-width bins over (0, 1]."""
    if n_bins < 1:
        raise InputError("n_bins must be >= 1")
    P, y = _check(preds, labels)
    n = y.size
    if n == 0:
        return 0.0
    conf = P.max(1)
    correct = (P.argmax(1) == y).astype(np.float64)
    # bin b covers (b/n_bins, (b+1)/n_bins]
    b = np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)
    count = np.bincount(b, minlength=n_bins)
    gap = np.abs(np.bincount(b, correct, n_bins) - np.bincount(b, conf, n_bins))
    return float(min(gap.sum() / n, 1.0)) if count.any() else 0.0


def evaluate(preds, labels, n_bins: int = DEFAULT_BINS) -> EvalReport:
    P, y = _check(preds, labels)
    return EvalReport(accuracy(P, y), log_likelihood(P, y), ece(P, y, n_bins), int(y.size), n_bins)
