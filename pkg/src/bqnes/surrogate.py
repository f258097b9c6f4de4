"""GP regression and the WSABI-L warped surrogate over architecture likelihoods.

Likelihoods are carried in log space.  Before fitting, observations are
rescaled to ``f = exp(ll - log_scale)`` with ``log_scale = max(ll)`` so that
``f`` lies in ``(0, 1]``; evidence estimates re-apply ``log_scale``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .benchmark import BenchmarkTable
from .errors import ConditioningError, InputError, ProtocolError
from .kernels import WL_DEPTHS, Kernel, KernelHyperparams

NOISE_FLOOR = 1e-6
JITTER_START = 1e-10
JITTER_MAX = 1e-4
BETA_FRACTION = 0.8

SV_BOUNDS = (1e-8, 1e4)
LS_BOUNDS = (0.05, 50.0)


def _merge_duplicates(X: Sequence[str], y: np.ndarray) -> tuple[list[str], np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    if len(X) != y.size:
        raise InputError(f"{len(X)} inputs but {y.size} targets")
    if len(set(X)) == len(X):
        return list(X), y
    order: dict[str, list[int]] = {}
    for i, a in enumerate(X):
        order.setdefault(a, []).append(i)
    return list(order), np.array([y[idx].mean() for idx in order.values()])


def _factorize(K: np.ndarray, theta: KernelHyperparams) -> tuple[np.ndarray, float]:
    """Cholesky of ``K + noise*I + jitter*I`` with jitter escalation."""
    n = K.shape[0]
    base = K + theta.noise_variance * np.eye(n)
    jitter = JITTER_START * theta.signal_variance
    while jitter <= JITTER_MAX * theta.signal_variance * (1 + 1e-9):
        try:
            L = linalg.cholesky(base + jitter * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, jitter
        except linalg.LinAlgError:
            pass
        jitter *= 10.0
    raise ConditioningError(f"Gram matrix of size {n} is not positive definite even with jitter "
                            f"{JITTER_MAX * theta.signal_variance:g}")


@dataclass(frozen=True, eq=False)
class GPState:
    """Zero-mean GP conditioned on observations.

    ``log_scale`` is set when the targets are rescaled likelihoods.
    """

    kernel: Kernel
    theta: KernelHyperparams
    train_inputs: list[str]
    train_vectors: np.ndarray
    train_targets: np.ndarray
    chol: np.ndarray
    alpha_vec: np.ndarray
    jitter: float
    log_scale: float | None = None

    def regularized_gram(self) -> np.ndarray:
        K = self.kernel.gram_vectors(self.train_vectors, self.train_vectors, self.theta)
        return K + (self.theta.noise_variance + self.jitter) * np.eye(len(self.train_inputs))


def fit_gp(X: Sequence[str], y, kernel: Kernel, theta: KernelHyperparams,
           log_scale: float | None = None) -> GPState:
    if len(X) < 1:
        raise InputError("need at least one observation")
    X, y = _merge_duplicates(X, y)
    if not np.all(np.isfinite(y)):
        raise InputError("targets must be finite")
    V = kernel.space.vectors(X)
    K = kernel.gram_vectors(V, V, theta)
    L, jitter = _factorize(K, theta)
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    return GPState(kernel, theta, X, V, y, L, alpha, jitter, log_scale)


def gp_posterior_vectors(state: GPState, Vs: np.ndarray, full_cov: bool = True):
    Ks = state.kernel.gram_vectors(Vs, state.train_vectors, state.theta)
    mean = Ks @ state.alpha_vec
    v = linalg.solve_triangular(state.chol, Ks.T, lower=True, check_finite=False)
    if full_cov:
        cov = state.kernel.gram_vectors(Vs, Vs, state.theta) - v.T @ v
        cov = 0.5 * (cov + cov.T)
        d = np.diag_indices_from(cov)
        cov[d] = np.maximum(cov[d], 0.0)
        return mean, cov
    var = state.kernel.diag_vectors(Vs, state.theta) - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0)


def gp_posterior(state: GPState, X_star: Sequence[str], full_cov: bool = True):
    """Posterior mean and covariance (or variance if ``full_cov=False``) at ``X_star``."""
    return gp_posterior_vectors(state, state.kernel.space.vectors(X_star), full_cov)


def log_marginal_likelihood(kernel: Kernel, X: Sequence[str], y, theta: KernelHyperparams) -> float:
    V = kernel.space.vectors(list(X))
    return _lml_from_gram(kernel.gram_vectors(V, V, theta), np.asarray(y, dtype=np.float64), theta)


def _lml_from_gram(K: np.ndarray, y: np.ndarray, theta: KernelHyperparams) -> float:
    try:
        L, _ = _factorize(K, theta)
    except ConditioningError:
        return -math.inf
    a = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    return float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * y.size * math.log(2 * math.pi))


# -- hyperparameter search ----------------------------------------------------

def _coordinate_search(objective, x0: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                       step: float = 1.0, min_step: float = 1e-2, max_evals: int = 200):
    x = np.clip(np.asarray(x0, dtype=np.float64), lo, hi)
    fx = objective(x)
    evals = 1
    while step >= min_step and evals < max_evals:
        improved = False
        for d in range(x.size):
            for sign in (1.0, -1.0):
                cand = x.copy()
                cand[d] = np.clip(cand[d] + sign * step, lo[d], hi[d])
                if cand[d] == x[d]:
                    continue
                fc = objective(cand)
                evals += 1
                if fc > fx:
                    x, fx, improved = cand, fc, True
                    break
        if not improved:
            step /= 2.0
    return x, fx


def optimize_hypers(X: Sequence[str], y, kernel: Kernel, theta0: KernelHyperparams | None = None,
                    seed: int = 0, n_restarts: int = 2, depths: Sequence[int] = WL_DEPTHS,
                    initial_step: float = 1.0) -> KernelHyperparams:
    """Maximise the log marginal likelihood.

    Continuous parameters (log signal variance, and a shared log lengthscale
    for the RBF kernel) use coordinate search from ``theta0`` plus
    ``n_restarts`` seeded random starts.  The WL depth is searched over
    ``depths``.  The noise variance is held at ``theta0.noise_variance``.
    """
    X, y = _merge_duplicates(X, y)
    if len(X) < 2:
        raise InputError("need at least two observations to fit hyperparameters")
    theta0 = theta0 or kernel.default_hypers()
    V = kernel.space.vectors(X)
    rng = np.random.default_rng(seed)
    best_theta, best_f = theta0, _lml_from_gram(kernel.gram_vectors(V, V, theta0), y, theta0)

    if kernel.kind == "cell":
        lo, hi = np.log([SV_BOUNDS[0]]), np.log([SV_BOUNDS[1]])
        for depth in depths:
            G = kernel.gram_vectors(V, V, theta0.with_(signal_variance=1.0, depth=depth))

            def obj(x, G=G, depth=depth):
                th = theta0.with_(signal_variance=float(np.exp(x[0])), depth=depth)
                return _lml_from_gram(th.signal_variance * G, y, th)

            starts = [np.log([theta0.signal_variance])] + [rng.uniform(lo, hi) for _ in range(n_restarts)]
            for x0 in starts:
                x, fx = _coordinate_search(obj, x0, lo, hi, step=initial_step)
                if fx > best_f:
                    best_f = fx
                    best_theta = theta0.with_(signal_variance=float(np.exp(x[0])), depth=depth)
    else:
        Xf = V.astype(np.float64)
        sq = ((Xf[:, None, :] - Xf[None, :, :]) ** 2).sum(-1)
        lo, hi = np.log([SV_BOUNDS[0], LS_BOUNDS[0]]), np.log([SV_BOUNDS[1], LS_BOUNDS[1]])

        def obj(x):
            th = theta0.with_(signal_variance=float(np.exp(x[0])), lengthscales=(float(np.exp(x[1])),))
            return _lml_from_gram(th.signal_variance * np.exp(-0.5 * sq / th.lengthscales[0] ** 2), y, th)

        ls0 = float(np.exp(np.mean(np.log(theta0.lengthscales))))
        starts = [np.log([theta0.signal_variance, ls0])] + [rng.uniform(lo, hi) for _ in range(n_restarts)]
        for x0 in starts:
            x, fx = _coordinate_search(obj, x0, lo, hi, step=initial_step)
            if fx > best_f:
                best_f = fx
                best_theta = theta0.with_(signal_variance=float(np.exp(x[0])), lengthscales=(float(np.exp(x[1])),))
    if not math.isfinite(best_f):
        raise ConditioningError("no hyperparameter candidate could be factorized")
    return best_theta


# -- WSABI-L -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WsabiState:
    """Square-root warped GP: ``sqrt(2 (f - beta)) ~ GP``."""

    base: GPState
    beta: float
    log_scale: float
    f: np.ndarray = field(repr=False)

    @property
    def train_inputs(self) -> list[str]:
        return self.base.train_inputs

    @property
    def kernel(self) -> Kernel:
        return self.base.kernel

    @property
    def theta(self) -> KernelHyperparams:
        return self.base.theta


def warp_targets(log_likelihoods) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Return ``(f, g, beta, log_scale)`` for a vector of log likelihoods."""
    ll = np.asarray(log_likelihoods, dtype=np.float64)
    if ll.size == 0 or not np.all(np.isfinite(ll)):
        raise InputError("log likelihoods must be finite and non-empty")
    log_scale = float(ll.max())
    f = np.exp(ll - log_scale)
    beta = BETA_FRACTION * float(f.min())
    g = np.sqrt(2.0 * (f - beta))
    return f, g, beta, log_scale


def unwarp(g, beta: float):
    return beta + 0.5 * np.asarray(g) ** 2


def fit_wsabi(X: Sequence[str], log_likelihoods, kernel: Kernel, theta: KernelHyperparams) -> WsabiState:
    ll = np.asarray(log_likelihoods, dtype=np.float64)
    if ll.size and not np.all(np.isfinite(ll)):
        raise InputError("log likelihoods must be finite")
    X, ll = _merge_log_duplicates(X, ll)
    f, g, beta, log_scale = warp_targets(ll)
    base = fit_gp(X, g, kernel, theta, log_scale=log_scale)
    return WsabiState(base, beta, log_scale, f)


def _merge_log_duplicates(X, ll):
    if len(set(X)) == len(X):
        return list(X), ll
    top = ll.max()
    Xm, fm = _merge_duplicates(X, np.exp(ll - top))
    return Xm, np.log(fm) + top


def wsabi_moments_vectors(state: WsabiState, Vs: np.ndarray, full_cov: bool = True):
    """Induced moments plus the warped GP's own ``(mu_D, Sigma_D)``."""
    mu, Sigma = gp_posterior_vectors(state.base, Vs, full_cov)
    mean = state.beta + 0.5 * mu**2
    if full_cov:
        cov = mu[:, None] * Sigma * mu[None, :]
    else:
        cov = mu**2 * Sigma
    return mean, cov, mu, Sigma


def wsabi_moments(state: WsabiState, X_star: Sequence[str], full_cov: bool = True):
    """Mean and covariance of the likelihood (in scaled space) under the linearised warp."""
    m, c, _, _ = wsabi_moments_vectors(state, state.kernel.space.vectors(X_star), full_cov)
    return m, c


def optimize_wsabi_hypers(X, log_likelihoods, kernel: Kernel, theta0=None, seed: int = 0, **kw):
    """Fit hyperparameters of the warped GP to ``sqrt(2 (f - beta))``."""
    X, ll = _merge_log_duplicates(list(X), np.asarray(log_likelihoods, dtype=np.float64))
    _, g, _, _ = warp_targets(ll)
    return optimize_hypers(X, g, kernel, theta0, seed=seed, **kw)


# -- plain GP on likelihoods and the ranked-holdout evaluation -------------------

def fit_likelihood_gp(X: Sequence[str], log_likelihoods, kernel: Kernel, theta: KernelHyperparams) -> GPState:
    """Plain GP on the rescaled likelihood ``exp(ll - max ll)``."""
    X, ll = _merge_log_duplicates(list(X), np.asarray(log_likelihoods, dtype=np.float64))
    f, _, _, log_scale = warp_targets(ll)
    return fit_gp(X, f, kernel, theta, log_scale=log_scale)


def predict_likelihood(state: GPState | WsabiState, Vs: np.ndarray):
    """Predictive mean and variance of the scaled likelihood at ``Vs``."""
    if isinstance(state, WsabiState):
        m, v, _, _ = wsabi_moments_vectors(state, Vs, full_cov=False)
        return m, v
    return gp_posterior_vectors(state, Vs, full_cov=False)


def ranked_holdout(table: BenchmarkTable, stride: int = 25, exclude: Sequence[str] = ()) -> list[str]:
    """Every ``stride``-th architecture by validation loss, minus ``exclude``."""
    if stride < 1:
        raise ProtocolError("stride must be >= 1")
    order = sorted(range(table.n_archs), key=lambda i: (-table.log_evidence[i], table.archs[i]))
    skip = set(exclude)
    return [table.archs[i] for i in order[stride - 1::stride] if table.archs[i] not in skip]


def evaluate_surrogate(state: GPState | WsabiState, table: BenchmarkTable, stride: int = 25,
                       exclude_train: bool = True) -> tuple[float, float]:
    """RMSE and NLPD of the surrogate's likelihood predictions on the ranked holdout.

    Targets are ``exp(ll - max_table ll)``; predictions are rescaled into the
    same units.
    """
    if state.log_scale is None:
        raise ProtocolError("state was not fitted on likelihood observations")
    test = ranked_holdout(table, stride, state.train_inputs if exclude_train else ())
    if not test:
        raise ProtocolError("empty test set")
    top = float(table.log_evidence.max())
    y = np.exp(table.log_evidence[[table.row(a) for a in test]] - top)
    c = math.exp(state.log_scale - top)
    m, v = predict_likelihood(state, table.space.vectors(test))
    m, v = m * c, v * c * c + state.theta.noise_variance * c * c
    v = np.maximum(v, 1e-300)
    rmse = float(np.sqrt(np.mean((m - y) ** 2)))
    nlpd = float(np.mean(0.5 * np.log(2 * math.pi * v) + 0.5 * (y - m) ** 2 / v))
    return rmse, nlpd
