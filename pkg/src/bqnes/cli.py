"""Command-line entry point: ``bqnes {generate-benchmark,run,report,evaluate-surrogate}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bm
from . import experiment as ex
from .errors import BQNESError, ConfigError

log = logging.getLogger("bqnes")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _parse_kv(text: str) -> dict:
    """``"a=1,b=x"`` -> ``{"a": 1, "b": "x"}`` with JSON-decoded values where possible."""
    out = {}
    for item in filter(None, (t.strip() for t in (text or "").split(","))):
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except ValueError:
            out[k.strip()] = v
    return out


def _gen_config(args) -> bm.SyntheticGenConfig:
    d = _parse_kv(args.generate or "")
    if args.space:
        d["space"] = json.loads(Path(args.space).read_text())
    try:
        return bm.SyntheticGenConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad generator parameters: {exc}") from None


def cmd_generate(args) -> int:
    table = bm.generate_synthetic(_gen_config(args))
    path = table.save(args.out)
    print(f"wrote {path} ({table.n_archs} architectures, fingerprint {table.fingerprint()})")
    return EXIT_OK


def _experiment_config(args) -> ex.ExperimentConfig:
    d: dict = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if args.method:
        d["methods"] = args.method
        d.pop("method", None)
    for key in ("seed", "repeats", "out", "benchmark", "workers"):
        val = getattr(args, key)
        if val is not None:
            d[key] = val
    if args.generate is not None:
        d["generate"] = {**d.get("generate", {}), **_parse_kv(args.generate)}
    if args.m_sizes:
        d["m_sizes"] = [int(x) for x in args.m_sizes.split(",")]
    budget = dict(d.get("budget", {}))
    for key in ("n_init", "n_total", "pool_size"):
        val = getattr(args, key)
        if val is not None:
            budget[key] = val
    d["budget"] = budget
    return ex.ExperimentConfig.from_dict(d)


def cmd_run(args) -> int:
    config = _experiment_config(args)
    paths, failures = ex.run(config)
    for f in failures:
        print(f"FAILED {f}", file=sys.stderr)
    print(f"wrote {len(paths)} result(s) to {config.out}")
    if not paths:
        return EXIT_PARTIAL
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_report(args) -> int:
    rows = ex.report(ex.load_records(args.results))
    csv_text, pretty = ex.format_report(rows)
    if args.csv:
        Path(args.csv).write_text(csv_text)
    sys.stdout.write(pretty)
    return EXIT_OK


def cmd_evaluate_surrogate(args) -> int:
    results = []
    for r in range(args.repeats or 1):
        seed = (args.seed or 0) + r
        if args.benchmark:
            table = bm.load(args.benchmark)
        else:
            gen = _gen_config(args)
            table = bm.generate_synthetic(dataclasses.replace(gen, seed=seed))
        results.append(ex.surrogate_trial(table, args.n_train, seed, args.stride, args.design))
    summary = {}
    for model in ("gp", "wsabi"):
        for metric in ("rmse", "nlpd"):
            x = np.array([res[model][metric] for res in results])
            summary[f"{model}_{metric}_mean"] = float(x.mean())
            summary[f"{model}_{metric}_sem"] = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    doc = {"trials": results, "summary": summary}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1, sort_keys=True))
    for model in ("gp", "wsabi"):
        print(f"{model:6s} RMSE {summary[model + '_rmse_mean']:.4g} ± {summary[model + '_rmse_sem']:.3g}   "
              f"NLPD {summary[model + '_nlpd_mean']:.4g} ± {summary[model + '_nlpd_sem']:.3g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bqnes", description="Bayesian-quadrature neural ensemble search on tabular benchmarks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-benchmark", help="write a synthetic .qbench table")
    g.add_argument("--out", required=True)
    g.add_argument("--generate", default="", help="generator parameters, e.g. seed=3,n_val=50")
    g.add_argument("--space", help="JSON file with a search-space description")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run methods over seeded repeats")
    r.add_argument("--config")
    r.add_argument("--method", help="comma-separated: " + ",".join(ex.METHODS))
    r.add_argument("--seed", type=int)
    r.add_argument("--repeats", type=int)
    r.add_argument("--out")
    r.add_argument("--benchmark", help=".qbench file; omit to generate one")
    r.add_argument("--generate", nargs="?", const="", help="use a synthetic benchmark with these parameters")
    r.add_argument("--m-sizes", dest="m_sizes", help="comma-separated ensemble sizes")
    r.add_argument("--n-init", dest="n_init", type=int)
    r.add_argument("--n-total", dest="n_total", type=int)
    r.add_argument("--pool-size", dest="pool_size", type=int)
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="aggregate result files into mean ± sem tables")
    rep.add_argument("results", nargs="+", help="result.json files or output directories")
    rep.add_argument("--csv", help="also write the table as CSV")
    rep.set_defaults(func=cmd_report)

    s = sub.add_parser("evaluate-surrogate", help="WSABI-L vs GP on the ranked holdout")
    s.add_argument("--benchmark")
    s.add_argument("--generate", default="")
    s.add_argument("--space")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--repeats", type=int, default=10)
    s.add_argument("--n-train", dest="n_train", type=int, default=100)
    s.add_argument("--stride", type=int, default=25)
    s.add_argument("--design", choices=("us", "random"), default="us")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate_surrogate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, bm.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BQNESError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
