"""One test per acceptance criterion, each at its stated tolerance and runtime."""

import json
import math
import time

import numpy as np
import pytest

from bqnes import cli
from bqnes import experiment as ex
from bqnes import metrics as mt
from bqnes import quadrature as qd
from bqnes import recombination as rc
from bqnes import search as sr
from bqnes import surrogate as sg
from bqnes.archspace import SpaceConfig, enumerate_space, sample_prior
from bqnes.benchmark import SyntheticGenConfig, default_space, generate_synthetic
from bqnes.ensemble import select_rs
from bqnes.kernels import KernelHyperparams, OrdinalRBFKernel, WLKernel, make_kernel


def test_c01_gp_oracle_equivalence(criterion):
    space = SpaceConfig.ordinal(6, 4)
    kern = OrdinalRBFKernel(space)
    worst = 0.0
    t0 = time.perf_counter()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        ids = enumerate_space(space)
        X = [ids[i] for i in rng.choice(len(ids), 15, replace=False)]
        Xs = sample_prior(space, seed + 1000, 10)
        th = KernelHyperparams(signal_variance=rng.uniform(0.2, 5), noise_variance=10 ** rng.uniform(-6, -2),
                               lengthscales=(rng.uniform(0.5, 3),))
        y = rng.normal(size=15)
        state = sg.fit_gp(X, y, kern, th)
        m, C = sg.gp_posterior(state, Xs)
        A = np.linalg.inv(kern.gram(X, X, th) + (th.noise_variance + state.jitter) * np.eye(15))
        Ks = kern.gram(Xs, X, th)
        worst = max(worst, np.abs(m - Ks @ A @ y).max(), np.abs(C - (kern.gram(Xs, Xs, th) - Ks @ A @ Ks.T)).max())
    dt = time.perf_counter() - t0
    assert criterion(1, "GP oracle equivalence", worst <= 1e-10, f"max abs diff {worst:.2e} <= 1e-10", dt, 1.0)


def test_c02_wsabi_moment_identities(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    cases = [(SpaceConfig.ordinal(8, 4), None), (SpaceConfig.cell(), None)]
    for space, _ in cases:
        kern = make_kernel(space)
        for seed in range(5):
            rng = np.random.default_rng(seed)
            X = sample_prior(space, seed, 30)
            ll = -rng.uniform(0, 50, size=30)
            state = sg.fit_wsabi(X, ll, kern, kern.default_hypers())
            V = space.vectors(sample_prior(space, seed + 99, 100))
            mean, cov, mu, Sigma = sg.wsabi_moments_vectors(state, V)
            worst = max(worst, np.abs(mean - (state.beta + 0.5 * mu**2)).max(),
                        np.abs(np.diag(cov) - mu**2 * np.diag(Sigma)).max())
    dt = time.perf_counter() - t0
    assert criterion(2, "WSABI moment identities", worst <= 1e-12, f"max abs diff {worst:.2e} <= 1e-12", dt)


def test_c03_evidence_exactness(criterion):
    t0 = time.perf_counter()
    space = SpaceConfig.ordinal(3, 4)
    table = generate_synthetic(SyntheticGenConfig(space, n_val=10, n_test=5, n_classes=4, seed=0))
    kern = make_kernel(space)
    A = list(table.archs)
    th = sg.optimize_wsabi_hypers(A, table.log_evidence, kern, seed=0)
    state = sg.fit_wsabi(A, table.log_evidence, kern, th)
    Z = qd.exhaustive_evidence(table.log_evidence, state.log_scale)
    exact = qd.wsabi_evidence(state, space, exact=True)
    rel = abs(exact.mu_Z - Z) / Z
    mc = qd.wsabi_evidence(state, space, n_samples=4096, seed=1, exact=False)
    se = math.sqrt(mc.mc_standard_error**2 + mc.sigma_Z)
    z_mc = abs(mc.mu_Z - Z) / se if se > 0 else math.inf
    dt = time.perf_counter() - t0
    ok = rel < 1e-3 and z_mc <= 4
    assert criterion(3, "evidence exactness", ok, f"exact rel err {rel:.1e} < 1e-3, MC |err|/se {z_mc:.2f} <= 4",
                     dt, 5.0)


def _final_evidence_error(table, cs, seed):
    kern = make_kernel(table.space)
    th = sg.optimize_wsabi_hypers(cs.archs, cs.ll, kern, seed=seed)
    state = sg.fit_wsabi(cs.archs, cs.ll, kern, th)
    est = qd.wsabi_evidence(state, table.space, exact=True)
    return state, est


@pytest.mark.slow
def test_c04_evidence_calibration(criterion):
    t0 = time.perf_counter()
    space = SpaceConfig.ordinal(3, 4)
    covered = 0
    for seed in range(20):
        table = generate_synthetic(SyntheticGenConfig(space, n_val=10, n_test=10, n_modes=3, seed=seed))
        cs = sr.select_candidates_bq(table, space, sr.SearchBudget(n_init=10, n_total=40, seed=seed))
        state, est = _final_evidence_error(table, cs, seed)
        Z = qd.exhaustive_evidence(table.log_evidence, state.log_scale)
        covered += abs(est.mu_Z - Z) <= 3 * math.sqrt(est.sigma_Z)
    dt = time.perf_counter() - t0
    assert criterion(4, "evidence calibration", covered >= 16, f"{covered}/20 covered (need >= 16)", dt)


def test_c05_recombination_exactness(criterion):
    space = default_space()
    table = generate_synthetic(SyntheticGenConfig(space, n_val=10, n_test=5, n_classes=4, seed=0))
    kern = make_kernel(space)
    passed, slowest = 0, 0.0
    t_all = time.perf_counter()
    for seed in range(50):
        rng = np.random.default_rng(seed)
        idx = rng.choice(table.n_archs, 150, replace=False)
        archs = [table.archs[i] for i in idx]
        # tempered so that the measure is not numerically a point mass
        measure = qd.posterior_measure(table.log_evidence[idx] / 10.0, archs)
        K = kern.gram(archs, archs, kern.default_hypers())
        ok = True
        for M in (3, 5, 10):
            t0 = time.perf_counter()
            tf = rc.nystrom_test_functions(K, M)
            ens = rc.posterior_recombination(measure, K, M)
            slowest = max(slowest, time.perf_counter() - t0)
            pos = [archs.index(a) for a in ens.members]
            resid = np.abs(tf.phi[:, pos] @ ens.weights - tf.phi @ measure.weights)
            ok &= (len(ens) <= M and bool(np.all(ens.weights >= 0)) and abs(ens.weights.sum() - 1) <= 1e-8
                   and bool(np.all(resid <= 1e-8)))
        passed += ok
    dt = time.perf_counter() - t_all
    good = passed == 50 and slowest < 1.0
    assert criterion(5, "recombination exactness", good, f"{passed}/50 trials exact, slowest trial {slowest:.3f}s",
                     dt)


def test_c06_rs_worked_examples(criterion):
    t0 = time.perf_counter()
    omega = [0.5, 0.3, 0.2]
    K = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    a = select_rs(omega, 2, K, ["m1", "m2", "l"]).weights
    K[1, 2] = K[2, 1] = 0.0
    b = select_rs(omega, 2, K, ["m1", "m2", "l"]).weights
    ok = a.tolist() == [0.6, 0.4] and b.tolist() == [0.7, 0.3]
    assert criterion(6, "re-weighted stacking hand cases", ok, f"{a.tolist()} and {b.tolist()}",
                     time.perf_counter() - t0)


@pytest.mark.slow
def test_c07_surrogate_direction(criterion):
    t0 = time.perf_counter()
    wins, lines = 0, []
    for seed in range(10):
        table = generate_synthetic(SyntheticGenConfig(default_space(), n_val=100, n_test=10, seed=seed))
        res = ex.surrogate_trial(table, n_train=100, seed=seed, design="us")
        wins += res["wsabi"]["nlpd"] < res["gp"]["nlpd"]
        lines.append(f"{res['wsabi']['nlpd']:.2f}/{res['gp']['nlpd']:.2f}")
    dt = time.perf_counter() - t0
    assert criterion(7, "WSABI-L NLPD below GP NLPD", wins >= 8, f"{wins}/10 seeds (need >= 8)", dt, 120.0)


@pytest.mark.slow
def test_c08_candidate_selection_direction(criterion):
    t0 = time.perf_counter()
    space = SpaceConfig.ordinal(4, 4)
    err_us, err_rand = [], []
    for seed in range(10):
        table = generate_synthetic(SyntheticGenConfig(space, n_val=10, n_test=10, n_modes=1, seed=seed))
        budget = sr.SearchBudget(n_init=10, n_total=40, seed=seed)
        for pick, errs in ((sr.select_candidates_bq, err_us), (sr.select_candidates_random, err_rand)):
            cs = pick(table, space, budget)
            state, est = _final_evidence_error(table, cs, seed)
            errs.append(sr.relative_evidence_error(est.mu_Z, state.log_scale, table))
    dt = time.perf_counter() - t0
    mu, mr = float(np.median(err_us)), float(np.median(err_rand))
    assert criterion(8, "US beats random on evidence error", mu < mr, f"median {mu:.3f} (US) vs {mr:.3f} (random)",
                     dt)


@pytest.mark.slow
def test_c09_method_ordering(criterion, tmp_path):
    t0 = time.perf_counter()
    config = ex.ExperimentConfig(methods=["bq-s", "nes-re", "random"], generate={}, m_sizes=[5], repeats=10,
                                 out=str(tmp_path / "ordering"))
    paths, failures = ex.run(config)
    rows = {r["method"]: r for r in ex.report(ex.load_records([config.out]))}
    dt = time.perf_counter() - t0
    ll = {m: rows[m]["log_likelihood_mean"] for m in rows}
    sem = {m: rows[m]["log_likelihood_sem"] for m in rows}
    ok = (not failures and ll["random"] < ll["bq-s"] and ll["random"] < ll["nes-re"]
          and ll["bq-s"] >= ll["nes-re"] - 2 * math.hypot(sem["bq-s"], sem["nes-re"]))
    detail = ", ".join(f"{m} {ll[m]:.1f}±{sem[m]:.1f}" for m in ("random", "nes-re", "bq-s"))
    assert criterion(9, "method ordering at M=5", ok, detail, dt, 600.0)


def test_c10_metric_units(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    y = rng.integers(0, 7, 500)
    ece0 = mt.ece(np.eye(7)[y], y)
    ll_u = mt.log_likelihood(np.full((500, 7), 1 / 7), y)
    acc_tie = mt.accuracy(np.full((4, 4), 0.25), np.zeros(4, dtype=int))
    ok = ece0 == 0.0 and ll_u == pytest.approx(-500 * math.log(7), rel=1e-15) and acc_tie == 1.0
    assert criterion(10, "metric units", ok, f"ECE {ece0}, uniform LL {ll_u:.6f} vs {-500 * math.log(7):.6f}, "
                     f"tie accuracy {acc_tie}", time.perf_counter() - t0)


def test_c11_determinism(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = {"methods": ["bq-r", "bq-s", "nes-re", "random"], "generate": {"n_val": 20, "n_test": 20, "seed": 3},
           "budget": {"n_init": 5, "n_total": 30, "pool_size": 64}, "re": {"population_size": 10,
           "tournament_size": 3}, "m_sizes": [3, 5], "repeats": 2, "seed": 11}
    outs = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps({**cfg, "out": str(tmp_path / name)}))
        assert cli.main(["run", "--config", str(path)]) == 0
        outs.append((tmp_path / name / "summary.csv").read_bytes())
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    assert criterion(11, "determinism", ok, f"summary CSVs identical ({len(outs[0])} bytes)",
                     time.perf_counter() - t0)


def test_c12_psd(criterion):
    t0 = time.perf_counter()
    worst = math.inf
    cell, ordinal = SpaceConfig.cell(), SpaceConfig.ordinal(28, 4)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        sv = float(10 ** rng.uniform(-2, 2))
        for kern, th, space in ((WLKernel(cell), KernelHyperparams(signal_variance=sv, depth=int(seed % 4)), cell),
                                (OrdinalRBFKernel(ordinal),
                                 KernelHyperparams(signal_variance=sv, lengthscales=(rng.uniform(0.3, 5),)), ordinal)):
            ids = sample_prior(space, seed, 50)
            lam = np.linalg.eigvalsh(kern.gram(ids, ids, th)).min() / sv
            worst = min(worst, lam)
    ok = worst >= -1e-8
    assert criterion(12, "Gram PSD", ok, f"min eigenvalue / signal variance {worst:.2e} >= -1e-8",
                     time.perf_counter() - t0)
