"""Candidate-set selection: BQ uncertainty sampling, EI, regularised evolution, random draws.

Every strategy queries the benchmark exactly ``n_total`` times, never queries
an architecture twice, and is a pure function of ``(table, budget)``.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .archspace import SpaceConfig, enumerate_space, mutate, sample_prior_vectors
from .benchmark import BenchmarkTable
from .errors import BQNESError, ExhaustionError, InputError, NoMutationError
from .kernels import Kernel, KernelHyperparams, make_kernel
from .surrogate import (GPState, WsabiState, fit_gp, fit_wsabi, gp_posterior_vectors, optimize_hypers,
                        optimize_wsabi_hypers, wsabi_moments_vectors)

log = logging.getLogger(__name__)

TOP_PARENTS = 10
TRACE_SAMPLES = 1024


@dataclass
class CandidateSet:
    archs: list[str] = field(default_factory=list)
    log_likelihoods: list[float] = field(default_factory=list)
    provenance: list[str] = field(default_factory=list)
    query_ledger: float = 0.0
    trace: list[dict] = field(default_factory=list)
    final_state: object = field(default=None, repr=False)

    def __post_init__(self):
        self._seen = set(self.archs)
        if len(self._seen) != len(self.archs):
            raise InputError("candidate set contains duplicates")
        if not len(self.archs) == len(self.log_likelihoods) == len(self.provenance):
            raise InputError("candidate set fields differ in length")

    def __len__(self):
        return len(self.archs)

    def __contains__(self, arch: str) -> bool:
        return arch in self._seen

    @property
    def ll(self) -> np.ndarray:
        return np.asarray(self.log_likelihoods, dtype=np.float64)

    def add(self, arch: str, ll: float, tag: str):
        if arch in self._seen:
            raise InputError(f"{arch!r} was already queried")
        self._seen.add(arch)
        self.archs.append(arch)
        self.log_likelihoods.append(float(ll))
        self.provenance.append(tag)

    def top(self, k: int) -> list[str]:
        order = sorted(range(len(self.archs)), key=lambda i: (-self.log_likelihoods[i], self.archs[i]))
        return [self.archs[i] for i in order[:k]]


@dataclass(frozen=True)
class SearchBudget:
    n_init: int = 10
    n_total: int = 150
    pool_size: int = 512
    seed: int = 0
    exhaustive: bool = False

    def __post_init__(self):
        if not 1 <= self.n_init <= self.n_total:
            raise InputError("need 1 <= n_init <= n_total")
        if self.pool_size < 1:
            raise InputError("pool_size must be >= 1")


@dataclass(frozen=True)
class REConfig:
    population_size: int = 50
    tournament_size: int = 10

    def __post_init__(self):
        if not 1 <= self.tournament_size <= self.population_size:
            raise InputError("need 1 <= tournament_size <= population_size")


# -- acquisition functions ------------------------------------------------------

def acq_us_vectors(state: WsabiState, Vs: np.ndarray, prior_mass=1.0) -> np.ndarray:
    """``Sigma_D(x, x) mu_D(x)^2 pi(x)^2`` in scaled-likelihood units."""
    _, _, mu, var = wsabi_moments_vectors(state, Vs, full_cov=False)
    return np.maximum(var * mu**2 * np.asarray(prior_mass, dtype=np.float64) ** 2, 0.0)


def acq_us(state: WsabiState, arch: str, prior_mass=1.0) -> float:
    return float(acq_us_vectors(state, state.kernel.space.vectors([arch]), prior_mass)[0])


def expected_improvement(mean, std, best_y) -> np.ndarray:
    mean, std = np.asarray(mean, dtype=np.float64), np.asarray(std, dtype=np.float64)
    diff = mean - best_y
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, diff / np.where(std > 0, std, 1.0), 0.0)
        ei = diff * stats.norm.cdf(z) + std * stats.norm.pdf(z)
    return np.where(std > 0, np.maximum(ei, 0.0), np.maximum(diff, 0.0))


def acq_ei_vectors(state: GPState, Vs: np.ndarray, best_y: float) -> np.ndarray:
    m, v = gp_posterior_vectors(state, Vs, full_cov=False)
    return expected_improvement(m, np.sqrt(v), best_y)


def acq_ei(state: GPState, arch: str, best_y: float) -> float:
    return float(acq_ei_vectors(state, state.kernel.space.vectors([arch]), best_y)[0])


# -- pools and queries -----------------------------------------------------------

def _remaining(space: SpaceConfig, current, pool_size: int) -> list[str] | None:
    """All unqueried ids when at most ``pool_size`` of them are left, else ``None``."""
    if not space.enumerable or space.size - len(current) > pool_size:
        return None
    return [a for a in enumerate_space(space) if a not in current]


def propose_pool(space: SpaceConfig, current: CandidateSet, pool_size: int, seed) -> list[str]:
    """Half uniform prior draws, half single mutations of the current top-10.

    The pool excludes anything already queried.  If fewer than ``pool_size``
    unqueried architectures remain, all of them are returned.
    """
    if pool_size < 1:
        raise InputError("pool_size must be >= 1")
    rem = _remaining(space, current, pool_size)
    if rem is not None:
        return rem
    rng = np.random.default_rng(seed)
    parents = current.top(TOP_PARENTS) if len(current) else []
    n_mut = pool_size // 2 if parents else 0
    n_prior = pool_size - n_mut
    pool: list[str] = []
    seen = set()

    def push(a):
        if a not in seen and a not in current:
            seen.add(a)
            pool.append(a)

    for _ in range(20):
        need = n_prior - len(pool)
        if need <= 0:
            break
        for v in sample_prior_vectors(space, rng, 2 * need):
            push(space.encode(v))
            if len(pool) >= n_prior:
                break
    target = len(pool) + n_mut
    if n_mut:
        P = space.vectors(parents)
        for _ in range(5):
            need = target - len(pool)
            if need <= 0:
                break
            for v in _mutate_vectors(space, P[rng.integers(len(P), size=2 * need)], rng):
                push(space.encode(v))
                if len(pool) >= target:
                    break
    if not pool:
        rem = [a for a in enumerate_space(space) if a not in current] if space.enumerable else []
        return rem[:pool_size]
    return pool


def _mutate_vectors(space: SpaceConfig, V: np.ndarray, rng) -> np.ndarray:
    """One mutation per row: a single position moved to a different value."""
    cards = space.position_cardinalities
    mutable = np.flatnonzero(cards > 1)
    if mutable.size == 0:
        raise NoMutationError("every position has a single option")
    V = V.copy()
    rows = np.arange(len(V))
    pos = mutable[rng.integers(mutable.size, size=len(V))]
    step = rng.integers(1, cards[pos])
    V[rows, pos] = (V[rows, pos] + step) % cards[pos]
    return V


def _distinct_prior(space: SpaceConfig, n: int, rng, exclude=()) -> list[str]:
    """``n`` distinct uniform draws not in ``exclude``, by rejection."""
    excl = set(exclude)
    if space.size - len(excl) < n:
        raise ExhaustionError(f"cannot draw {n} distinct architectures from {space.size - len(excl)} remaining")
    if space.enumerable and n + len(excl) > space.size // 2:
        # rejection would crawl; a random permutation of the remainder is uniform too
        rest = [a for a in enumerate_space(space) if a not in excl]
        return [rest[i] for i in rng.permutation(len(rest))[:n]]
    out: list[str] = []
    seen = set(excl)
    while len(out) < n:
        for v in sample_prior_vectors(space, rng, n - len(out)):
            a = space.encode(v)
            if a not in seen:
                seen.add(a)
                out.append(a)
    return out


def _query(table: BenchmarkTable, cs: CandidateSet, arch: str, tag: str) -> float:
    ll = table.query(arch).log_evidence_proxy
    cs.add(arch, ll, tag)
    cs.query_ledger += table.query_cost_units
    return ll


def _argmax_lex(values: np.ndarray, ids: Sequence[str]) -> int:
    best = values.max()
    return min(np.flatnonzero(values == best), key=lambda i: ids[i])


def _trace(cs: CandidateSet, it: int, arch: str, acq, ll: float, mu_Z):
    cs.trace.append({"iteration": it, "arch": arch, "acq": None if acq is None else float(acq),
                     "log_likelihood": float(ll), "mu_Z": None if mu_Z is None else float(mu_Z)})


# -- strategies -----------------------------------------------------------------

def select_candidates_random(table: BenchmarkTable, space: SpaceConfig, budget: SearchBudget) -> CandidateSet:
    rng = np.random.default_rng(budget.seed)
    cs = CandidateSet()
    for i, a in enumerate(_distinct_prior(space, budget.n_total, rng)):
        ll = _query(table, cs, a, "init")
        _trace(cs, i, a, None, ll, None)
    return cs


def _model_loop(table, space, budget, fit: Callable, score: Callable, evidence: Callable | None,
                pool_fn=propose_pool) -> CandidateSet:
    rng = np.random.default_rng(budget.seed)
    cs = CandidateSet()
    for i, a in enumerate(_distinct_prior(space, budget.n_init, rng)):
        ll = _query(table, cs, a, "init")
        _trace(cs, i, a, None, ll, None)
    state = None
    for it in range(budget.n_init, budget.n_total):
        try:
            state = fit(cs, it)
            if budget.exhaustive and space.enumerable:
                pool = [a for a in enumerate_space(space) if a not in cs]
            else:
                pool = pool_fn(space, cs, budget.pool_size, [budget.seed, it])
            if not pool:
                raise ExhaustionError("no unqueried architectures remain")
            values = score(state, space.vectors(pool), cs)
            j = _argmax_lex(values, pool)
            ll = _query(table, cs, pool[j], "acquired")
            mu_Z = evidence(state) if evidence else None
        except BQNESError as exc:
            raise type(exc)(f"acquisition step {it}: {exc}") from exc
        _trace(cs, it, pool[j], values[j], ll, mu_Z)
    cs.final_state = state
    return cs


class _WarmHypers:
    """Carries the previous hyperparameter optimum into the next refit."""

    def __init__(self, kernel: Kernel, seed: int, optimizer):
        self.kernel, self.seed, self.optimizer = kernel, seed, optimizer
        self.theta: KernelHyperparams | None = None

    def __call__(self, X, y, it):
        first = self.theta is None
        self.theta = self.optimizer(X, y, self.kernel, self.theta or self.kernel.default_hypers(),
                                    seed=[self.seed, it], n_restarts=2 if first else 0,
                                    initial_step=1.0 if first else 0.25)
        return self.theta


def select_candidates_bq(table: BenchmarkTable, space: SpaceConfig, budget: SearchBudget,
                         kernel: Kernel | None = None) -> CandidateSet:
    """Uncertainty sampling on a WSABI-L surrogate, refitting hyperparameters every step."""
    kernel = kernel or make_kernel(space)
    hypers = _WarmHypers(kernel, budget.seed, optimize_wsabi_hypers)
    trace_vecs = sample_prior_vectors(space, np.random.default_rng([budget.seed, 7]), TRACE_SAMPLES)

    def fit(cs, it):
        theta = hypers(cs.archs, cs.ll, it) if len(cs) >= 2 else kernel.default_hypers()
        return fit_wsabi(cs.archs, cs.ll, kernel, theta)

    def score(state, V, cs):
        return acq_us_vectors(state, V, space.prior_mass)

    def evidence(state):
        _, _, mu, _ = wsabi_moments_vectors(state, trace_vecs, full_cov=False)
        return state.beta + 0.5 * float(np.mean(mu**2))

    return _model_loop(table, space, budget, fit, score, evidence)


def select_candidates_ei(table: BenchmarkTable, space: SpaceConfig, budget: SearchBudget,
                         kernel: Kernel | None = None) -> CandidateSet:
    """Expected improvement on a plain GP over standardised log likelihoods."""
    kernel = kernel or make_kernel(space)
    hypers = _WarmHypers(kernel, budget.seed, optimize_hypers)

    def standardise(ll):
        sd = ll.std()
        return (ll - ll.mean()) / (sd if sd > 0 else 1.0)

    def fit(cs, it):
        y = standardise(cs.ll)
        theta = hypers(cs.archs, y, it) if len(cs) >= 2 else kernel.default_hypers()
        return fit_gp(cs.archs, y, kernel, theta)

    def score(state, V, cs):
        return acq_ei_vectors(state, V, float(standardise(cs.ll).max()))

    return _model_loop(table, space, budget, fit, score, None)


def select_candidates_re(table: BenchmarkTable, space: SpaceConfig, budget: SearchBudget,
                         re_config: REConfig | None = None) -> CandidateSet:
    """Regularised (aging) evolution with tournament selection."""
    cfg = re_config or REConfig()
    if cfg.population_size > budget.n_total:
        raise InputError("population_size must not exceed n_total")
    rng = np.random.default_rng(budget.seed)
    cs = CandidateSet()
    population: deque[str] = deque()
    lls: dict[str, float] = {}
    for i, a in enumerate(_distinct_prior(space, cfg.population_size, rng)):
        lls[a] = _query(table, cs, a, "init")
        population.append(a)
        _trace(cs, i, a, None, lls[a], None)
    for it in range(cfg.population_size, budget.n_total):
        members = list(population)
        picks = rng.choice(len(members), size=cfg.tournament_size, replace=False)
        parent = min((members[k] for k in picks), key=lambda a: (-lls[a], a))
        child = _fresh_child(space, parent, cs, rng)
        lls[child] = _query(table, cs, child, "evolved")
        population.append(child)
        population.popleft()
        _trace(cs, it, child, None, lls[child], None)
    return cs


def _fresh_child(space, parent, cs, rng, attempts: int = 100) -> str:
    """Mutate ``parent`` until the child is unqueried, walking further if needed."""
    node = parent
    for k in range(attempts):
        child = mutate(space, node, rng)
        if child not in cs:
            return child
        if k % 10 == 9:
            node = child
    log.info("mutation neighbourhood of %s exhausted; falling back to a prior draw", parent)
    return _distinct_prior(space, 1, rng, exclude=cs.archs)[0]


STRATEGIES = {
    "us": select_candidates_bq,
    "ei": select_candidates_ei,
    "re": select_candidates_re,
    "random": select_candidates_random,
}


def relative_evidence_error(mu_Z: float, log_scale: float, table: BenchmarkTable) -> float:
    """``|mu_Z - Z| / Z`` against the exhaustive evidence of ``table``."""
    top = float(table.log_evidence.max())
    Z = float(np.mean(np.exp(table.log_evidence - top)))
    return abs(mu_Z * math.exp(log_scale - top) - Z) / Z
