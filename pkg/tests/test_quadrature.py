import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bqnes import quadrature as qd
from bqnes import surrogate as sg
from bqnes.archspace import SpaceConfig, enumerate_space, enumerate_vectors, sample_prior
from bqnes.benchmark import SyntheticGenConfig, generate_synthetic
from bqnes.errors import DegenerateMeasureError, InputError
from bqnes.kernels import DeltaKernel, KernelHyperparams, OrdinalRBFKernel

SPACE = SpaceConfig.ordinal(3, 4)
KERN = OrdinalRBFKernel(SPACE)
TH = KernelHyperparams(signal_variance=1.3, lengthscales=(1.2,))


def test_exact_kernel_means_equal_enumeration_sums():
    X = sample_prior(SPACE, 0, 6)
    km = qd.kernel_mean_mc(KERN, TH, X, SPACE)
    assert km.exact and km.n_samples == 64
    A = enumerate_space(SPACE)
    G = KERN.gram(X, A, TH)
    np.testing.assert_allclose(km.z, G.mean(1), rtol=0, atol=1e-12)
    assert km.zz == pytest.approx(KERN.gram(A, A, TH).mean(), abs=1e-12)
    assert np.all(km.standard_errors == 0)


def test_singleton_space_kernel_mean():
    sp = SpaceConfig.ordinal(1, 1)
    k = OrdinalRBFKernel(sp)
    km = qd.kernel_mean_mc(k, TH, ["o:0"], sp, n_samples=10, exact=False)
    # a mean of identical floats, exact up to summation rounding
    assert km.z[0] == pytest.approx(TH.signal_variance, rel=1e-15)
    assert km.standard_errors[0] == pytest.approx(0.0, abs=1e-15)


def test_mc_kernel_means_within_four_standard_errors():
    X = sample_prior(SPACE, 1, 10)
    exact = qd.kernel_mean_mc(KERN, TH, X, SPACE)
    mc = qd.kernel_mean_mc(KERN, TH, X, SPACE, n_samples=100_000, seed=3, exact=False)
    assert np.all(np.abs(mc.z - exact.z) <= 4 * mc.standard_errors)
    assert abs(mc.zz - exact.zz) <= 4 * mc.zz_standard_error
    assert mc.sample_weights.sum() == pytest.approx(1.0)


def test_delta_kernel_mean_closed_form():
    k = DeltaKernel(SPACE)
    km = qd.kernel_mean_mc(k, KernelHyperparams(signal_variance=2.0), sample_prior(SPACE, 0, 5), SPACE)
    np.testing.assert_allclose(km.z, 2.0 / 64)


def test_delta_kernel_all_observed_gives_mean_f():
    k = DeltaKernel(SPACE)
    A = enumerate_space(SPACE)
    ll = -np.random.default_rng(0).uniform(0, 3, size=64)
    th = KernelHyperparams(noise_variance=1e-12)
    state = sg.fit_likelihood_gp(A, ll, k, th)
    est = qd.evidence_posterior(state, qd.kernel_mean_mc(k, th, A, SPACE))
    f = np.exp(ll - ll.max())
    assert est.mu_Z == pytest.approx(f.mean(), rel=1e-9)
    np.testing.assert_allclose(est.quad_weights, 1 / 64, rtol=1e-9)
    assert est.mu_Z == pytest.approx(est.quad_weights @ f, abs=1e-15)
    assert est.sigma_Z == pytest.approx(0.0, abs=1e-9)


def _table64(seed, **kw):
    return generate_synthetic(SyntheticGenConfig(SPACE, n_val=10, n_test=5, n_classes=4, seed=seed, **kw))


def test_wsabi_all_observed_exact_and_mc():
    table = _table64(0)
    A = list(table.archs)
    th = sg.optimize_wsabi_hypers(A, table.log_evidence, KERN, seed=0)
    state = sg.fit_wsabi(A, table.log_evidence, KERN, th)
    truth = qd.exhaustive_evidence(table.log_evidence, state.log_scale)
    est = qd.wsabi_evidence(state, SPACE)
    assert abs(est.mu_Z - truth) / truth < 1e-3
    mc = qd.wsabi_evidence(state, SPACE, n_samples=4096, seed=1, exact=False)
    assert abs(mc.mu_Z - truth) <= 4 * math.sqrt(mc.mc_standard_error**2 + mc.sigma_Z)
    assert est.log_evidence == pytest.approx(math.log(est.mu_Z) + state.log_scale)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40))
def test_wsabi_quadrature_rule_form(seed, n):
    rng = np.random.default_rng(seed)
    X = sample_prior(SPACE, seed, n)
    ll = -rng.uniform(0, 20, size=n)
    state = sg.fit_wsabi(X, ll, KERN, TH)
    est = qd.wsabi_evidence(state, SPACE)
    assert est.sigma_Z >= 0
    assert est.mu_Z == pytest.approx(state.beta + est.quad_weights @ (state.f - state.beta), rel=1e-10, abs=1e-14)


def test_constant_integrand():
    X = sample_prior(SPACE, 0, 30)
    state = sg.fit_likelihood_gp(X, np.full(30, -5.0), KERN, TH.with_(lengthscales=(3.0,)))
    est = qd.evidence_posterior(state, qd.kernel_mean_mc(KERN, state.theta, state.train_inputs, SPACE))
    assert est.mu_Z == pytest.approx(1.0, abs=0.05)
    assert est.mu_Z == pytest.approx(est.quad_weights @ state.train_targets, abs=1e-14)


def test_sigma_shrinks_along_trajectory():
    table = _table64(2)
    order = np.random.default_rng(2).permutation(64)
    prev = math.inf
    for n in (2, 4, 8, 16, 32, 64):
        X = [table.archs[i] for i in order[:n]]
        state = sg.fit_likelihood_gp(X, table.log_evidence[order[:n]], KERN, TH)
        est = qd.evidence_posterior(state, qd.kernel_mean_mc(KERN, TH, X, SPACE))
        assert est.sigma_Z <= prev + 1e-12
        prev = est.sigma_Z


def test_mismatched_hypers_rejected():
    X = sample_prior(SPACE, 0, 3)
    state = sg.fit_wsabi(X, [0.0, -1.0, -2.0], KERN, TH)
    with pytest.raises(InputError):
        qd.evidence_posterior(state, qd.kernel_mean_mc(KERN, TH.with_(signal_variance=2.0), X, SPACE))


def test_posterior_measure_examples():
    m = qd.posterior_measure([-3.0] * 4, list("abcd"))
    np.testing.assert_array_equal(m.weights, 0.25)
    m = qd.posterior_measure([0.0, -50.0, -50.0], list("abc"))
    # 1 - 1e-20 is not representable, so check the complement
    assert m.weights[1:].sum() < 1e-20
    with pytest.raises(DegenerateMeasureError):
        qd.posterior_measure([], [])
    with pytest.raises(DegenerateMeasureError):
        qd.posterior_measure([0.0, -math.inf], list("ab"))
    with pytest.raises(InputError):
        qd.posterior_measure([0.0], list("ab"))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5000, 0), min_size=1, max_size=50))
def test_posterior_measure_sums_to_one(ll):
    m = qd.posterior_measure(ll, [str(i) for i in range(len(ll))])
    assert abs(m.weights.sum() - 1) <= 1e-12 and np.all(m.weights >= 0)


def test_discrete_measure_validation():
    with pytest.raises(InputError):
        qd.DiscreteMeasure(["a", "b"], [0.7, 0.7])
    with pytest.raises(InputError):
        qd.DiscreteMeasure(["a", "b"], [1.5, -0.5])
