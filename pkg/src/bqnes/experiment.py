"""End-to-end method runs, result persistence and report aggregation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import benchmark as bm
from .ensemble import WeightedEnsemble, beam_search, optimize_stacking, select_rs, select_ws
from .errors import BQNESError, ConfigError, ProtocolError
from .kernels import make_kernel
from .metrics import DEFAULT_BINS, ensemble_predict, evaluate
from .quadrature import posterior_measure, wsabi_evidence
from .recombination import posterior_recombination
from .search import (CandidateSet, REConfig, SearchBudget, select_candidates_bq, select_candidates_ei,
                     select_candidates_random, select_candidates_re)
from .surrogate import (evaluate_surrogate, fit_likelihood_gp, fit_wsabi, optimize_hypers, optimize_wsabi_hypers,
                        warp_targets)

log = logging.getLogger(__name__)

# method -> (candidate strategy, ensemble selector)
METHODS = {
    "bq-r": ("us", "pr"),
    "bq-s": ("us", "rs"),
    "nes-re": ("re", "bs"),
    "random": ("random", "first"),
    "ei-rs": ("ei", "rs"),
    "us-ws": ("us", "ws"),
    "us-bs": ("us", "bs"),
    "re-rs": ("re", "rs"),
}

SUMMARY_FIELDS = ["method", "seed", "M", "accuracy", "log_likelihood", "ece", "n_examples"]


@dataclass
class ExperimentConfig:
    methods: list[str] = field(default_factory=lambda: ["bq-s"])
    benchmark: str | None = None
    generate: dict | None = None
    budget: dict = field(default_factory=dict)
    re: dict = field(default_factory=dict)
    m_sizes: list[int] = field(default_factory=lambda: [3, 5, 10])
    repeats: int = 1
    seed: int = 0
    out: str = "results"
    workers: int = 1
    n_bins: int = DEFAULT_BINS

    def __post_init__(self):
        if isinstance(self.methods, str):
            self.methods = [m.strip() for m in self.methods.split(",") if m.strip()]
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown method(s) {bad}; choose from {sorted(METHODS)}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if not self.m_sizes or any(int(m) < 1 for m in self.m_sizes):
            raise ConfigError("ensemble sizes must be positive")
        self.m_sizes = sorted({int(m) for m in self.m_sizes})
        try:
            self.search_budget(0)
            REConfig(**self.re)
        except (TypeError, BQNESError) as exc:
            raise ConfigError(f"invalid budget: {exc}") from None
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.generate is not None and not self.benchmark:
            try:
                bm.SyntheticGenConfig.from_dict(self.generate)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad generator parameters: {exc}") from None

    def search_budget(self, seed: int) -> SearchBudget:
        return SearchBudget(**{**self.budget, "seed": seed})

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "method" in d:
            d["methods"] = d.pop("method")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def load_table(config: ExperimentConfig) -> bm.BenchmarkTable:
    if config.benchmark:
        return bm.load(config.benchmark)
    gen = bm.SyntheticGenConfig.from_dict(config.generate or {})
    return bm.generate_synthetic(gen)


# -- one repeat ------------------------------------------------------------------

def select_candidates(strategy: str, table, budget: SearchBudget, re_config: REConfig) -> CandidateSet:
    space = table.space
    if strategy == "us":
        return select_candidates_bq(table, space, budget)
    if strategy == "ei":
        return select_candidates_ei(table, space, budget)
    if strategy == "re":
        return select_candidates_re(table, space, budget, re_config)
    if strategy == "random":
        return select_candidates_random(table, space, budget)
    raise ConfigError(f"unknown candidate strategy {strategy!r}")


def _candidate_gram(table, cs: CandidateSet, seed: int):
    """WSABI-L fit on the candidates; returns its state and the candidate Gram matrix."""
    kernel = make_kernel(table.space)
    theta = optimize_wsabi_hypers(cs.archs, cs.ll, kernel, seed=seed)
    state = fit_wsabi(cs.archs, cs.ll, kernel, theta)
    return state, kernel.gram(cs.archs, cs.archs, theta)


def choose_ensemble(selector: str, table, cs: CandidateSet, M: int, cache: dict, seed: int) -> WeightedEnsemble:
    ids = cs.archs
    M = min(M, len(ids))
    if selector == "first":
        return WeightedEnsemble(ids[:M], np.full(M, 1.0 / M))
    rows = [table.row(a) for a in ids]
    val = table.val_predictions[rows]
    if selector == "bs":
        return beam_search(val, table.labels_val, M, ids)
    if selector in ("ws", "rs") and "omega" not in cache:
        cache["omega"] = optimize_stacking(val, table.labels_val)
    if selector == "ws":
        return select_ws(cache["omega"], M, ids)
    if "gram" not in cache:
        cache["state"], cache["gram"] = _candidate_gram(table, cs, seed)
    if selector == "rs":
        return select_rs(cache["omega"], M, cache["gram"], ids)
    if selector == "pr":
        measure = posterior_measure(cs.ll, ids, table.space.prior_mass)
        return posterior_recombination(measure, cache["gram"], M)
    raise ConfigError(f"unknown ensemble selector {selector!r}")


def run_one(table: bm.BenchmarkTable, method: str, seed: int, m_sizes: Sequence[int],
            budget: SearchBudget, re_config: REConfig | None = None, n_bins: int = DEFAULT_BINS) -> dict:
    """Candidate selection plus ensemble selection for every M; returns the result record."""
    strategy, selector = METHODS[method]
    t0 = time.perf_counter()
    table.reset_counter()
    cs = select_candidates(strategy, table, budget, re_config or REConfig())
    queries = table.n_queries
    cache: dict = {}
    ensembles = {}
    for M in m_sizes:
        ens = choose_ensemble(selector, table, cs, M, cache, seed)
        P = ensemble_predict(ens, table.test_predictions[[table.row(a) for a in ens.members]])
        ensembles[str(M)] = {"ensemble": ens.to_dict(), "report": evaluate(P, table.labels_test, n_bins).to_dict()}
    record = {
        "method": method,
        "seed": seed,
        "benchmark": table.fingerprint(),
        "budget": asdict(budget),
        "queries": queries,
        "query_cost": cs.query_ledger,
        "candidates": {"archs": cs.archs, "log_likelihoods": cs.log_likelihoods, "provenance": cs.provenance},
        "ensembles": ensembles,
        "notes": [],
    }
    if method == "random":
        record["notes"].append("ensemble uses the first M uniform draws; the full query budget is charged for parity")
    if strategy == "us":
        state = cache.get("state") or _candidate_gram(table, cs, seed)[0]
        est = wsabi_evidence(state, table.space, seed=seed)
        top = float(table.log_evidence.max())
        record["evidence"] = {**est.to_dict(), "exhaustive_scaled": float(np.mean(np.exp(table.log_evidence - top))),
                              "exhaustive_log_scale": top}
    record["trace"] = cs.trace
    record["wall_clock_s"] = time.perf_counter() - t0
    return record


# -- persistence ----------------------------------------------------------------

def write_record(out: Path, record: dict) -> Path:
    d = Path(out) / record["method"] / str(record["seed"])
    d.mkdir(parents=True, exist_ok=True)
    trace = record.pop("trace", [])
    with open(d / "trace.jsonl", "w") as fh:
        for row in trace:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    path = d / "result.json"
    path.write_text(json.dumps(record, indent=1, sort_keys=True))
    return path


def summary_rows(records: Sequence[dict]) -> list[dict]:
    rows = []
    for r in records:
        for M, e in r["ensembles"].items():
            rep = e["report"]
            rows.append({"method": r["method"], "seed": r["seed"], "M": int(M), "accuracy": rep["accuracy"],
                         "log_likelihood": rep["log_likelihood"], "ece": rep["ece"], "n_examples": rep["n_examples"]})
    rows.sort(key=lambda x: (x["method"], x["seed"], x["M"]))
    return rows


def write_summary(out: Path, records: Sequence[dict]) -> Path:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in summary_rows(records):
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    path = Path(out) / "summary.csv"
    path.write_text(buf.getvalue())
    return path


def load_records(paths: Sequence[str | Path]) -> list[dict]:
    """Result records from ``result.json`` files or directories containing them."""
    files: list[Path] = []
    for p in map(Path, paths):
        files.extend(sorted(p.rglob("result.json")) if p.is_dir() else [p])
    if not files:
        raise ProtocolError("no result files found")
    return [json.loads(f.read_text()) for f in files]


# -- orchestration --------------------------------------------------------------

def _job(args):
    config, method, seed = args
    table = load_table(config)
    try:
        rec = run_one(table, method, seed, config.m_sizes, config.search_budget(seed), REConfig(**config.re),
                      config.n_bins)
        return rec, None
    except BQNESError as exc:
        return None, f"{method} seed {seed}: {type(exc).__name__}: {exc}"


def run(config: ExperimentConfig) -> tuple[list[Path], list[str]]:
    """Run every (method, repeat); returns written result paths and failure messages."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(config, m, config.seed + r) for m in config.methods for r in range(config.repeats)]
    if config.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(config.workers) as ex:
            results = list(ex.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    paths, failures = [], []
    for rec, err in results:
        if err:
            log.error(err)
            failures.append(err)
        else:
            paths.append(write_record(out, rec))
    existing = sorted(out.rglob("result.json"))
    if existing:
        write_summary(out, load_records(existing))
    return paths, failures


def _sem(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def report(records: Sequence[dict]) -> list[dict]:
    """Mean and standard error per method x M x metric."""
    fps = {r["benchmark"] for r in records}
    if len(fps) > 1:
        raise ProtocolError(f"results come from different benchmarks: {sorted(fps)}")
    groups: dict[tuple[str, int], list[dict]] = {}
    for row in summary_rows(records):
        groups.setdefault((row["method"], row["M"]), []).append(row)
    table = []
    for (method, M), rows in sorted(groups.items()):
        entry = {"method": method, "M": M, "n": len(rows)}
        for metric in ("accuracy", "ece", "log_likelihood"):
            x = np.array([r[metric] for r in rows], dtype=np.float64)
            entry[f"{metric}_mean"] = float(x.mean())
            entry[f"{metric}_sem"] = _sem(x)
        table.append(entry)
    return table


def format_report(rows: Sequence[dict]) -> tuple[str, str]:
    """CSV text and an aligned plain-text table."""
    buf = io.StringIO()
    fields = ["method", "M", "n"] + [f"{m}_{s}" for m in ("accuracy", "ece", "log_likelihood") for s in ("mean", "sem")]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    head = ["method", "M", "n", "accuracy", "ece", "log_likelihood"]
    body = [[r["method"], str(r["M"]), str(r["n"])] +
            [f"{r[m + '_mean']:.4f} ± {r[m + '_sem']:.4f}" for m in ("accuracy", "ece", "log_likelihood")]
            for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(c.ljust(wd) for c, wd in zip(line, widths)) for line in [head] + body]
    return buf.getvalue(), "\n".join(lines) + "\n"


# -- surrogate comparison on the ranked holdout ------------------------------------

def surrogate_trial(table: bm.BenchmarkTable, n_train: int = 150, seed: int = 0, stride: int = 25,
                    design: str = "us") -> dict:
    """Fit WSABI-L and a plain GP on the same design; score both on the ranked holdout."""
    budget = SearchBudget(n_init=min(10, n_train), n_total=n_train, seed=seed)
    if design == "us":
        cs = select_candidates_bq(table, table.space, budget)
    elif design == "random":
        cs = select_candidates_random(table, table.space, budget)
    else:
        raise ConfigError(f"unknown design {design!r}")
    kernel = make_kernel(table.space)
    X, ll = cs.archs, cs.ll
    wsabi = fit_wsabi(X, ll, kernel, optimize_wsabi_hypers(X, ll, kernel, seed=seed))
    f, _, _, _ = warp_targets(ll)
    gp = fit_likelihood_gp(X, ll, kernel, optimize_hypers(X, f, kernel, seed=seed))
    out = {"seed": seed, "n_train": len(X), "design": design}
    for name, state in (("gp", gp), ("wsabi", wsabi)):
        rmse, nlpd = evaluate_surrogate(state, table, stride)
        out[name] = {"rmse": rmse, "nlpd": nlpd}
    return out
