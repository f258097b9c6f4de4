"""Evidence estimation by Bayesian quadrature, and the posterior over candidates.

Kernel means are sums over the (uniform) prior.  They are computed exactly by
enumeration on small spaces and by Monte Carlo otherwise.  In both cases the
estimate keeps the weighted sample set, which the WSABI-L evidence needs: its
mean ``beta + 1/2 E[mu_D(a)^2]`` and variance
``E[mu_D(a) Sigma_D(a, a') mu_D(a')]`` are sums of products of kernel slices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .archspace import SpaceConfig, enumerate_vectors, sample_prior_vectors
from .errors import DegenerateMeasureError, InputError
from .kernels import Kernel, KernelHyperparams
from .surrogate import GPState, WsabiState

EXACT_LIMIT = 4096
DEFAULT_SAMPLES = 4096
_BLOCK = 2048


@dataclass(frozen=True, eq=False)
class KernelMeanEstimate:
    """Kernel means of the observed architectures under the prior.

    ``z[i]`` approximates ``sum_a k(x_i, a) pi(a)`` and ``zz`` the double mean.
    ``sample_vectors``/``sample_weights`` are the (deduplicated) points the
    sums were taken over; weights sum to one.
    """

    z: np.ndarray
    zz: float
    n_samples: int
    standard_errors: np.ndarray
    zz_standard_error: float
    exact: bool
    theta: KernelHyperparams
    sample_vectors: np.ndarray = field(repr=False)
    sample_weights: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class EvidenceEstimate:
    """Gaussian belief over the evidence in scaled units.

    The evidence in the original units is ``mu_Z * exp(log_scale)``.
    """

    mu_Z: float
    sigma_Z: float
    log_scale: float
    quad_weights: np.ndarray
    method: str
    beta: float = 0.0
    warnings: tuple[str, ...] = ()
    mc_standard_error: float = 0.0

    @property
    def log_evidence(self) -> float:
        return math.log(self.mu_Z) + self.log_scale if self.mu_Z > 0 else -math.inf

    def to_dict(self) -> dict:
        return {"mu_Z": self.mu_Z, "sigma_Z": self.sigma_Z, "log_scale": self.log_scale,
                "log_evidence": self.log_evidence, "method": self.method, "beta": self.beta,
                "mc_standard_error": self.mc_standard_error, "warnings": list(self.warnings)}


@dataclass(frozen=True)
class DiscreteMeasure:
    support: list[str]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if len(self.support) != w.size:
            raise InputError("support and weights differ in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InputError("weights must be non-negative and sum to one")


def _weighted_unique(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, counts = np.unique(V, axis=0, return_counts=True)
    return uniq, counts / counts.sum()


def _blocked_quadratic(kernel: Kernel, U: np.ndarray, a: np.ndarray, theta: KernelHyperparams) -> float:
    """``a^T K(U, U) a`` without materialising more than a block of rows."""
    total = 0.0
    for s in range(0, len(U), _BLOCK):
        total += float(a[s:s + _BLOCK] @ (kernel.gram_vectors(U[s:s + _BLOCK], U, theta) @ a))
    return total


def kernel_mean_mc(kernel: Kernel, theta: KernelHyperparams, X: Sequence[str], space: SpaceConfig,
                   n_samples: int = DEFAULT_SAMPLES, seed=0, exact: bool | None = None) -> KernelMeanEstimate:
    """Kernel means of ``X`` under the uniform prior on ``space``.

    With ``exact`` (default: when the space has at most 4096 members) the sums
    run over the enumerated space.  Otherwise ``n_samples`` prior draws are
    shared across all entries of ``z``; ``zz`` uses a second, independent draw
    paired elementwise with the first.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    VX = space.vectors(list(X))
    if exact is None:
        exact = space.size <= EXACT_LIMIT
    if exact:
        U = enumerate_vectors(space)
        pi = np.full(len(U), 1.0 / len(U))
        z = kernel.gram_vectors(VX, U, theta) @ pi
        zz = _blocked_quadratic(kernel, U, pi, theta)
        return KernelMeanEstimate(z, zz, len(U), np.zeros_like(z), 0.0, True, theta, U, pi)
    rng = np.random.default_rng(seed)
    S = sample_prior_vectors(space, rng, n_samples)
    S2 = sample_prior_vectors(space, rng, n_samples)
    KXS = kernel.gram_vectors(VX, S, theta)
    z = KXS.mean(1)
    se = KXS.std(1, ddof=1) / math.sqrt(n_samples) if n_samples > 1 else np.zeros_like(z)
    pair = np.array([kernel.gram_vectors(S[i:i + 1], S2[i:i + 1], theta)[0, 0] for i in range(n_samples)]) \
        if kernel.kind == "cell" else _paired_rbf(kernel, S, S2, theta)
    zz = float(pair.mean())
    zz_se = float(pair.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    U, pi = _weighted_unique(S)
    return KernelMeanEstimate(z, zz, n_samples, se, zz_se, False, theta, U, pi)


def _paired_rbf(kernel, S, S2, theta):
    if not hasattr(kernel, "inverse_lengthscales"):
        return np.array([kernel.gram_vectors(S[i:i + 1], S2[i:i + 1], theta)[0, 0] for i in range(len(S))])
    d = (S - S2) * kernel.inverse_lengthscales(theta)
    return theta.signal_variance * np.exp(-0.5 * (d * d).sum(1))


def _check_theta(km: KernelMeanEstimate, theta: KernelHyperparams):
    if km.theta != theta:
        raise InputError("kernel means were computed with different hyperparameters")


def evidence_posterior(state: GPState | WsabiState, km: KernelMeanEstimate) -> EvidenceEstimate:
    """Gaussian belief over the evidence.

    For a plain GP on scaled likelihoods this is standard BQ:
    ``mu_Z = z^T (K + s^2 I)^-1 f`` and ``sigma_Z = zz - z^T (K + s^2 I)^-1 z``.
    For WSABI-L it integrates the linearised moments over the kernel-mean
    sample set: ``mu_Z = beta + 1/2 sum_s pi_s mu_D(s)^2`` and
    ``sigma_Z = sum_st pi_s pi_t mu_D(s) Sigma_D(s, t) mu_D(t)``.
    """
    if isinstance(state, WsabiState):
        return _wsabi_evidence(state, km)
    _check_theta(km, state.theta)
    L = state.chol
    w = linalg.cho_solve((L, True), km.z, check_finite=False)
    mu = float(w @ state.train_targets)
    sig = float(km.zz - km.z @ w)
    warnings = []
    if sig < -1e-8:
        warnings.append(f"negative evidence variance {sig:.3g} clipped")
    # errors in z are shared-sample correlated; bound by the sum of absolute contributions
    mc_se = float(km.standard_errors @ np.abs(state.alpha_vec))
    return EvidenceEstimate(mu, max(sig, 0.0), state.log_scale or 0.0, w, "bq", 0.0, tuple(warnings), mc_se)


def _wsabi_evidence(state: WsabiState, km: KernelMeanEstimate) -> EvidenceEstimate:
    base = state.base
    _check_theta(km, base.theta)
    U, pi = km.sample_vectors, km.sample_weights
    KUX = base.kernel.gram_vectors(U, base.train_vectors, base.theta)
    mu_u = KUX @ base.alpha_vec
    pm = pi * mu_u
    mu_Z = state.beta + 0.5 * float(pm @ mu_u)
    # Sigma_D(U, U) = K_UU - K_UX (K + s^2 I)^-1 K_XU, contracted with pi * mu on both sides
    prior_part = _blocked_quadratic(base.kernel, U, pm, base.theta)
    v = linalg.solve_triangular(base.chol, KUX.T @ pm, lower=True, check_finite=False)
    sig = prior_part - float(v @ v)
    # quadrature form: mu_Z = beta + sum_i w_i (f_i - beta)
    Q_a = KUX.T @ pm
    contrib = 0.5 * base.alpha_vec * Q_a
    w = contrib / (state.f - state.beta)
    warnings = []
    if sig < -1e-8:
        warnings.append(f"negative evidence variance {sig:.3g} clipped")
    mc_se = 0.0
    if not km.exact and km.n_samples > 1:
        h = 0.5 * mu_u**2
        var = float(pi @ (h - pi @ h) ** 2) * km.n_samples / (km.n_samples - 1)
        mc_se = math.sqrt(var / km.n_samples)
    return EvidenceEstimate(mu_Z, max(sig, 0.0), state.log_scale, w, "wsabi-l", state.beta, tuple(warnings),
                            mc_se)


def wsabi_evidence(state: WsabiState, space: SpaceConfig, n_samples: int = DEFAULT_SAMPLES, seed=0,
                   exact: bool | None = None) -> EvidenceEstimate:
    km = kernel_mean_mc(state.kernel, state.theta, state.train_inputs, space, n_samples, seed, exact)
    return evidence_posterior(state, km)


def wsabi_evidence_mean(state: WsabiState, km: KernelMeanEstimate) -> float:
    """Cheap evidence mean (no double sum), used for per-iteration traces."""
    base = state.base
    mu_u = base.kernel.gram_vectors(km.sample_vectors, base.train_vectors, base.theta) @ base.alpha_vec
    return state.beta + 0.5 * float((km.sample_weights * mu_u) @ mu_u)


def posterior_measure(log_likelihoods, archs: Sequence[str], prior_mass=1.0,
                      Z_hat: EvidenceEstimate | None = None) -> DiscreteMeasure:
    """Posterior over the candidates, renormalised to sum to one.

    ``Z_hat`` only fixes the scale in the unnormalised form and does not
    change the result; it is accepted for parity with the estimator output.
    """
    ll = np.asarray(log_likelihoods, dtype=np.float64)
    if ll.size != len(archs):
        raise InputError("one log likelihood per architecture is required")
    if ll.size == 0 or not np.all(np.isfinite(ll)):
        raise DegenerateMeasureError("log likelihoods must be finite and non-empty")
    prior = np.broadcast_to(np.asarray(prior_mass, dtype=np.float64), ll.shape)
    w = np.exp(ll - ll.max()) * prior
    total = w.sum()
    if not total > 0 or not math.isfinite(total):
        raise DegenerateMeasureError("all posterior weights underflowed to zero")
    return DiscreteMeasure(list(archs), w / total)


def exhaustive_evidence(log_evidence: np.ndarray, log_scale: float) -> float:
    """Exact scaled evidence under the uniform prior, for oracles."""
    return float(np.mean(np.exp(np.asarray(log_evidence) - log_scale)))
