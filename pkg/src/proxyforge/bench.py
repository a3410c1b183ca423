"""Desk-scale ground truth: briefly trained toy transformers on a Markov task."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import ArchSpec, build, enumerate_specs, grid_index, loss_and_grads
from .dsl import ParseError, evaluate, parse
from .ranking import RankingResult, rank_scores
from .stats import CaptureError, NetworkStatistics, capture
from .task import MarkovTask
from . import zoo

log = logging.getLogger(__name__)

VERSION = "proxyforge-bench/1"
GRID_SIZE = 108
MASK64 = (1 << 64) - 1


class BenchmarkError(RuntimeError):
    """Benchmark data is missing, malformed or unusable."""


class UsageError(ValueError):
    """A proxy id or expression string was not understood."""


def splitmix64(seed: int, stream: int) -> int:
    """Derive an independent 64-bit seed for ``stream`` from ``seed``."""
    z = (seed + (stream + 1) * 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def thread_count() -> int:
    raw = os.environ.get("PROXYFORGE_THREADS", "0").strip() or "0"
    n = int(raw)
    return n if n > 0 else (os.cpu_count() or 1)


@dataclass
class Entry:
    arch: ArchSpec
    ground_truth: float
    param_count: int
    flagged: bool = False

    def to_json(self) -> dict:
        return {"arch": self.arch.to_json(),
                "ground_truth": None if self.flagged else self.ground_truth,
                "param_count": self.param_count, "flagged": self.flagged}

    @classmethod
    def from_json(cls, obj: dict) -> "Entry":
        flagged = bool(obj.get("flagged", False))
        gt = -math.inf if flagged or obj["ground_truth"] is None else float(obj["ground_truth"])
        return cls(ArchSpec.from_json(obj["arch"]), gt, int(obj["param_count"]), flagged)


@dataclass
class Benchmark:
    task: MarkovTask
    steps: int
    lr: float
    batch_size: int
    seed: int
    val_size: int = 256
    entries: list[Entry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def init_seed(self, spec: ArchSpec) -> int:
        return splitmix64(self.seed, grid_index(spec) + 1)

    def truth(self) -> list[float]:
        return [e.ground_truth for e in self.entries]

    def to_json(self) -> dict:
        return {
            "version": VERSION,
            "task": self.task.to_json(),
            "training": {"steps": self.steps, "lr": self.lr, "batch_size": self.batch_size,
                         "seed": self.seed, "val_size": self.val_size, "optimizer": "sgd"},
            "entries": [e.to_json() for e in self.entries],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Benchmark":
        if not isinstance(obj, dict) or obj.get("version") != VERSION:
            found = obj.get("version") if isinstance(obj, dict) else type(obj).__name__
            raise BenchmarkError(f"unsupported benchmark version {found!r}; expected {VERSION!r}")
        try:
            tr = obj["training"]
            bench = cls(MarkovTask.from_json(obj["task"]), int(tr["steps"]), float(tr["lr"]),
                        int(tr["batch_size"]), int(tr["seed"]), int(tr["val_size"]),
                        [Entry.from_json(e) for e in obj["entries"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise BenchmarkError(f"malformed benchmark file: {exc}") from exc
        if len({e.arch for e in bench.entries}) != len(bench.entries):
            raise BenchmarkError("duplicate architectures in benchmark")
        return bench

    def subset(self, specs) -> "Benchmark":
        """The entries for ``specs`` (in this benchmark's order), sharing all settings."""
        wanted = set(specs)
        entries = [e for e in self.entries if e.arch in wanted]
        if len(entries) != len(wanted):
            raise BenchmarkError("requested architectures are not all in the benchmark")
        return Benchmark(self.task, self.steps, self.lr, self.batch_size, self.seed,
                         self.val_size, entries)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "Benchmark":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise BenchmarkError(f"cannot read benchmark {path}: {exc}") from exc
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise BenchmarkError(f"benchmark {path} is not valid JSON: {exc}") from exc
        return cls.from_json(obj)


def train_entry(spec: ArchSpec, task: MarkovTask, steps: int, lr: float, batch_size: int,
                init_seed: int, data_seed: int, val_size: int) -> tuple[float, bool]:
    """Plain SGD from the seeded init; returns (negative validation loss, diverged)."""
    model = build(spec, init_seed)
    rng = np.random.default_rng(data_seed)
    for _ in range(steps):
        batch = task.sample(batch_size, int(rng.integers(0, 2**63 - 1)))
        loss, grads = loss_and_grads(model, batch)
        if not math.isfinite(loss):
            return -math.inf, True
        model = model.with_parameters([p - lr * g for p, g in zip(model.parameters(), grads)])
    val = task.sample(val_size, splitmix64(task.seed, 0x7A1))
    loss, _ = loss_and_grads(model, val)
    if not math.isfinite(loss):
        return -math.inf, True
    return -loss, False


def _train_job(args):
    return train_entry(*args)


def select_specs(n_archs: int, seed: int) -> list[ArchSpec]:
    """The grid itself, or a seeded subset of it kept in grid order."""
    grid = enumerate_specs()
    if not 1 <= n_archs <= len(grid):
        raise ValueError(f"n_archs must be in 1..{len(grid)}, got {n_archs}")
    if n_archs == len(grid):
        return grid
    pick = np.random.default_rng(splitmix64(seed, 0x5E1)).choice(len(grid), n_archs,
                                                                 replace=False)
    return [grid[i] for i in sorted(pick)]


def build_benchmark(n_archs: int = GRID_SIZE, train_steps: int = 300, seed: int = 0, *,
                    lr: float = 0.05, batch_size: int = 32, val_size: int = 256,
                    task_seed: int | None = None, threads: int | None = None) -> Benchmark:
    """Train ``n_archs`` grid architectures and record their negative validation loss.

    The full grid is used when ``n_archs`` equals its size; otherwise a seeded
    subset, kept in grid order. Per-entry seeds depend only on (seed, grid
    position), so results do not depend on the subset or on parallelism.
    """
    specs = select_specs(n_archs, seed)
    task = MarkovTask(seed=splitmix64(seed, 0x7A5C) if task_seed is None else task_seed)
    bench = Benchmark(task, train_steps, lr, batch_size, seed, val_size)
    data_seed = splitmix64(seed, 0xDA7A)
    jobs = [(s, task, train_steps, lr, batch_size, bench.init_seed(s), data_seed, val_size)
            for s in specs]
    workers = min(threads or thread_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_train_job, jobs))
    else:
        results = [_train_job(j) for j in jobs]
    for spec, (gt, diverged) in zip(specs, results):
        if diverged:
            log.warning("training diverged for %s", spec.label())
        bench.entries.append(Entry(spec, gt, spec.param_count(), diverged))
    n_flagged = sum(e.flagged for e in bench.entries)
    if n_flagged > 0.1 * len(bench.entries):
        raise BenchmarkError(f"{n_flagged}/{len(bench.entries)} architectures diverged")
    return bench


# -- proxy evaluation --------------------------------------------------------------


def probe_batch(bench: Benchmark, batch_size: int = 16):
    return bench.task.sample(batch_size, splitmix64(bench.seed, 0xBA7C))


def probe(bench: Benchmark, entry: Entry, batch_size: int = 16):
    """Untrained model (the entry's own init) and its statistics on the probe batch."""
    model = build(entry.arch, bench.init_seed(entry.arch))
    try:
        stats = capture(model, probe_batch(bench, batch_size))
    except CaptureError as exc:
        log.warning("%s", exc)
        stats = None
    return model, stats


def probe_all(bench: Benchmark, indices=None, batch_size: int = 16) -> list[tuple]:
    idx = range(len(bench)) if indices is None else indices
    return [probe(bench, bench.entries[i], batch_size) for i in idx]


@dataclass
class EvalReport:
    target: str
    kind: str
    ranking: RankingResult
    table: list[dict]
    seconds: float
    note: str | None = None

    def to_json(self) -> dict:
        out = {"target": self.target, "kind": self.kind, "ranking": self.ranking.to_json(),
               "table": self.table, "seconds": self.seconds}
        if self.note:
            out["note"] = self.note
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        r = obj["ranking"]
        nan = math.nan
        ranking = RankingResult(nan if r["spearman_rho"] is None else r["spearman_rho"],
                                nan if r["kendall_tau"] is None else r["kendall_tau"],
                                r["n"], r["n_invalid"])
        return cls(obj["target"], obj["kind"], ranking, obj["table"], obj["seconds"],
                   obj.get("note"))


def resolve_target(target: str):
    """Map a proxy id or an expression string to a scorer ``(model, stats) -> float|None``."""
    if target in zoo.proxy_ids():
        return "proxy", lambda m, s: zoo.score(target, m, s)
    if "|" in target:
        try:
            expr = parse(target)
        except ParseError as exc:
            raise UsageError(str(exc)) from exc
        return "expression", lambda m, s: evaluate(expr, s)
    raise UsageError(f"unknown proxy {target!r}; known ids: {', '.join(zoo.proxy_ids())}")


def eval_proxy(target: str, bench: Benchmark, batch_size: int = 16, probes=None) -> EvalReport:
    kind, scorer = resolve_target(target)
    start = time.perf_counter()
    probes = probes if probes is not None else probe_all(bench, batch_size=batch_size)
    scores = []
    for model, stats in probes:
        if stats is None:
            scores.append(None)
            continue
        try:
            scores.append(scorer(model, stats))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("%s failed on %s: %s", target, model.spec.label(), exc)
            scores.append(None)
    seconds = time.perf_counter() - start
    valid_truth = [e.ground_truth if not e.flagged else math.nan for e in bench.entries]
    ranking = rank_scores([s if not e.flagged else None for s, e in zip(scores, bench.entries)],
                          valid_truth)
    table = [{"arch": e.arch.label(), "score": s, "ground_truth": None if e.flagged else e.ground_truth}
             for e, s in zip(bench.entries, scores)]
    note = zoo.NOTES.get(target)
    if note is None:
        note = next((zoo.NOTES[k] for k, g in zoo.SEARCHED.items() if g == target), None)
    return EvalReport(target, kind, ranking, table, seconds, note)
