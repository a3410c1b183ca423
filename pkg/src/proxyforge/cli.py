"""Command-line entry point: ``proxyforge <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import zoo
from .bench import (Benchmark, BenchmarkError, EvalReport, UsageError, build_benchmark,
                    eval_proxy, probe_all)
from .search import SearchConfig, random_search, run

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write(path: str, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise BenchmarkError(f"cannot write {path}: {exc}") from exc


def _load_config(path: str | None) -> SearchConfig:
    if path is None:
        return SearchConfig()
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise BenchmarkError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BenchmarkError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"config {path} must be a flat JSON object")
    try:
        return SearchConfig.from_json(obj)
    except TypeError as exc:
        raise UsageError(f"bad config {path}: {exc}") from exc


def cmd_bench_build(args) -> int:
    bench = build_benchmark(args.n, args.steps, args.seed)
    _write(args.out, bench.dumps())
    print(f"wrote {len(bench)} architectures to {args.out}")
    return EXIT_OK


def cmd_search(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    bench = Benchmark.load(args.bench)
    report = (random_search if args.search_cmd == "random" else run)(config, bench)
    _write(args.out, report.dumps())
    print(f"best {report.best_expr} rho={report.best_fitness:.4f}")
    return EXIT_OK


def cmd_proxy_eval(args) -> int:
    bench = Benchmark.load(args.bench)
    targets = zoo.proxy_ids() if args.proxy == "all" else [args.proxy]
    probes = probe_all(bench, batch_size=args.batch_size)
    reports = [eval_proxy(t, bench, args.batch_size, probes) for t in targets]
    obj = reports[0].to_json() if len(reports) == 1 else [r.to_json() for r in reports]
    _write(args.out, json.dumps(obj, indent=1) + "\n")
    for r in reports:
        print(f"{r.target}: rho={r.ranking.spearman_rho:.4f} tau={r.ranking.kendall_tau:.4f}")
    return EXIT_OK


def _read_reports(path: str) -> list[EvalReport]:
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise BenchmarkError(f"cannot read report {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BenchmarkError(f"report {path} is not valid JSON: {exc}") from exc
    try:
        return [EvalReport.from_json(o) for o in (obj if isinstance(obj, list) else [obj])]
    except (KeyError, TypeError) as exc:
        raise BenchmarkError(f"report {path} is malformed: {exc}") from exc


def write_csv(reports: list[EvalReport], path: str) -> None:
    def key(r):
        rho = r.ranking.spearman_rho
        return (math.isnan(rho), -rho if not math.isnan(rho) else 0.0, r.target)

    def num(x):
        return "" if x is None or math.isnan(x) else repr(float(x))

    rows = sorted(reports, key=key)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "rho", "tau", "n_invalid", "seconds"])
            for r in rows:
                w.writerow([r.target, num(r.ranking.spearman_rho), num(r.ranking.kendall_tau),
                            r.ranking.n_invalid, f"{r.seconds:.6f}"])
    except OSError as exc:
        raise BenchmarkError(f"cannot write {path}: {exc}") from exc


def cmd_report(args) -> int:
    reports = [r for p in args.inputs for r in _read_reports(p)]
    write_csv(reports, args.csv)
    print(f"wrote {len(reports)} rows to {args.csv}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="proxyforge", description="Search zero-cost proxies for toy transformers.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    bench = sub.add_parser("bench", help="benchmark construction")
    bsub = bench.add_subparsers(dest="bench_cmd", required=True, parser_class=_Parser)
    b = bsub.add_parser("build", help="train architectures and write a benchmark file")
    b.add_argument("--n", type=int, default=108, help="number of architectures")
    b.add_argument("--steps", type=int, default=300)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench_build)

    search = sub.add_parser("search", help="proxy search")
    ssub = search.add_subparsers(dest="search_cmd", required=True, parser_class=_Parser)
    for name in ("run", "random"):
        s = ssub.add_parser(name, help="evolutionary search" if name == "run" else "random baseline")
        s.add_argument("--bench", required=True)
        s.add_argument("--config", help="flat JSON object with SearchConfig fields")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", required=True)
        s.set_defaults(func=cmd_search)

    proxy = sub.add_parser("proxy", help="proxy evaluation")
    psub = proxy.add_subparsers(dest="proxy_cmd", required=True, parser_class=_Parser)
    e = psub.add_parser("eval", help="rank correlation of one proxy, an expression or 'all'")
    e.add_argument("--proxy", required=True)
    e.add_argument("--bench", required=True)
    e.add_argument("--batch-size", type=int, default=16)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_proxy_eval)

    r = sub.add_parser("report", help="summarize evaluation reports as CSV")
    r.add_argument("--in", dest="inputs", nargs="+", required=True)
    r.add_argument("--csv", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"proxyforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"proxyforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # invalid option values (e.g. --n outside the grid, bad config field)
        print(f"proxyforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BenchmarkError as exc:
        print(f"proxyforge: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
