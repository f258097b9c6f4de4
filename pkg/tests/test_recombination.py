import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bqnes import recombination as rc
from bqnes.errors import DegenerateKernelError, InputError
from bqnes.quadrature import DiscreteMeasure


def random_psd(rng, n, d=3):
    X = rng.normal(size=(n, d))
    return np.exp(-0.25 * ((X[:, None] - X[None]) ** 2).sum(-1))


def random_measure(rng, n):
    w = rng.exponential(size=n)
    return DiscreteMeasure([f"a{i}" for i in range(n)], w / w.sum())


def test_subset_full_and_deterministic(rng):
    K = random_psd(rng, 12)
    assert sorted(rc.select_nystrom_subset(K, 12)) == list(range(12))
    assert rc.select_nystrom_subset(K, 5) == rc.select_nystrom_subset(K, 5)
    with pytest.raises(InputError):
        rc.select_nystrom_subset(K, 13)


def test_duplicates_not_both_selected(rng):
    X = rng.normal(size=(8, 2))
    X = np.vstack([X, X[:3]])
    K = np.exp(-0.5 * ((X[:, None] - X[None]) ** 2).sum(-1))
    S = rc.select_nystrom_subset(K, 8)
    rows = {tuple(np.round(X[i], 12)) for i in S}
    assert len(rows) == 8


@pytest.mark.parametrize("m", [5, 10, 20])
def test_pivoted_subset_beats_random_subsets(m):
    wins = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(50, 50))
        K = A @ A.T
        ours = rc.nystrom_error(K, rc.select_nystrom_subset(K, m))
        best_random = min(rc.nystrom_error(K, rng.choice(50, m, replace=False)) for _ in range(100))
        wins.append(ours <= best_random * (1 + 1e-9))
    assert all(wins), f"{sum(wins)}/10 seeds"


def test_single_landmark():
    K = np.array([[2.0, 0.5, 0.1], [0.5, 1.0, 0.2], [0.1, 0.2, 1.0]])
    tf = rc.build_test_functions(K, [0])
    np.testing.assert_allclose(np.abs(tf.phi[0]), K[0])
    assert tf.eigvals[0] == 2.0


def test_reconstruction_and_orthogonality(rng):
    K = random_psd(rng, 30)
    S = rc.select_nystrom_subset(K, 6)
    tf = rc.build_test_functions(K, S)
    KS = K[:, S]
    np.testing.assert_allclose(tf.reconstruct(), KS @ np.linalg.inv(K[np.ix_(S, S)]) @ KS.T, atol=1e-8)
    G = tf.eigvecs.T @ K[np.ix_(S, S)] @ tf.eigvecs
    np.testing.assert_allclose(G, np.diag(tf.eigvals), atol=1e-8)


def test_rank_deficient_landmarks_dropped_and_degenerate():
    K = np.ones((4, 4))
    tf = rc.build_test_functions(K, [0, 1])
    assert tf.phi.shape[0] == 1
    with pytest.raises(DegenerateKernelError):
        rc.build_test_functions(np.zeros((3, 3)), [0, 1])


def test_four_point_example_against_exhaustive_search():
    m = DiscreteMeasure(["0", "1", "2", "3"], np.full(4, 0.25))
    phi = np.array([[0.0, 1.0, 2.0, 3.0]])
    ens = rc.recombine(m, phi, 2)
    x = np.array([float(a) for a in ens.members])
    assert len(ens) <= 2
    assert ens.weights.sum() == pytest.approx(1.0) and ens.weights @ x == pytest.approx(1.5, abs=1e-12)
    # every 2-subset that straddles the mean is feasible
    feasible = [s for s in itertools.combinations(range(4), 2) if min(s) < 1.5 < max(s)]
    assert tuple(sorted(int(a) for a in ens.members)) in feasible or len(ens) == 1


@pytest.mark.parametrize("M", [3, 5, 10])
def test_recombination_exact_on_150_points(M):
    for seed in range(50):
        rng = np.random.default_rng(seed)
        K = random_psd(rng, 150)
        meas = random_measure(rng, 150)
        tf = rc.nystrom_test_functions(K, M)
        ens = rc.posterior_recombination(meas, K, M)
        idx = [meas.support.index(a) for a in ens.members]
        assert len(ens) <= M and np.all(ens.weights >= 0)
        assert abs(ens.weights.sum() - 1) < 1e-10
        target = tf.phi @ meas.weights
        got = tf.phi[:, idx] @ ens.weights
        assert np.all(np.abs(got - target) <= 1e-8 * np.abs(tf.phi).max(1))


def test_n_equals_m_unchanged(rng):
    meas = random_measure(rng, 5)
    ens = rc.posterior_recombination(meas, random_psd(rng, 5), 5)
    assert ens.members == meas.support and np.array_equal(ens.weights, meas.weights)


def test_recombine_validation(rng):
    meas = random_measure(rng, 6)
    with pytest.raises(InputError):
        rc.recombine(meas, np.ones((1, 5)), 3)
    with pytest.raises(InputError):
        rc.recombine_weights(meas.weights, np.ones((3, 6)), 3)


def test_m_one_keeps_single_member(rng):
    meas = random_measure(rng, 10)
    ens = rc.posterior_recombination(meas, random_psd(rng, 10), 1)
    assert len(ens) == 1 and ens.weights[0] == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 60), st.integers(1, 6))
def test_recombination_invariants(seed, n, r):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=(r, n))
    w = rng.exponential(size=n)
    w /= w.sum()
    M = r + 1
    out = rc.recombine_weights(w, phi, M)
    assert np.count_nonzero(out) <= M
    assert out.min() >= 0 and abs(out.sum() - 1) < 1e-10
    scale = np.abs(phi).max(1)
    assert np.all(np.abs(phi @ out - phi @ w) <= 1e-8 * scale)
