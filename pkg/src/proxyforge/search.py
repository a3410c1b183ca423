"""Genetic programming over symbolic proxy expressions.

Each generation picks two parents from the fittest ``R`` share of the
population, breeds one offspring by crossover and mutation, screens it with
the rule-based pruning table, evaluates it and keeps the best ``p``
candidates. Fitness is Spearman's rho between expression scores and the
benchmark ground truth over a fixed sample of architectures.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .bench import Benchmark, probe_all, splitmix64
from .dsl import (BINARY_IDS, EMPTY, PRUNE, UNARY_IDS, Branch, InvalidExpression,
                  SymbolicExpression, combine_block, enumerate_space, eval_branch,
                  evaluate, random_expr, serialize)
from .ranking import spearman
from .stats import GLOBAL_KINDS, KINDS, NetworkStatistics, operand

log = logging.getLogger(__name__)

SENTINEL = -1.0
MAX_INVALID_SHARE = 0.2


@dataclass
class SearchConfig:
    population_size: int = 80
    generations: int = 1000
    crossover_rate: float = 0.5
    mutation_rate: float = 0.5
    selection_ratio: float = 0.10
    fitness_sample_size: int = 50
    unary_depth: int = 1
    seed: int = 42
    rps_enabled: bool = True
    max_regen_attempts: int = 100

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0 < self.selection_ratio <= 1:
            raise ValueError("selection_ratio must be in (0, 1]")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 1 <= self.unary_depth <= 5:
            raise ValueError("unary_depth must be in 1..5")
        if self.generations < 0 or self.fitness_sample_size < 3 or self.max_regen_attempts < 1:
            raise ValueError("generations >= 0, fitness_sample_size >= 3, max_regen_attempts >= 1")

    @classmethod
    def from_json(cls, obj: dict) -> "SearchConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(obj) - set(known))
        if unknown:
            raise ValueError(f"unknown SearchConfig keys: {unknown}")
        return cls(**obj)

    def to_json(self) -> dict:
        return asdict(self)


# -- fitness -----------------------------------------------------------------------


def fitness_from_scores(scores: Sequence[float | None], truth: Sequence[float]) -> float:
    """Spearman rho over valid scores; the sentinel when too many are invalid."""
    keep = [i for i, s in enumerate(scores) if s is not None]
    if len(scores) - len(keep) > MAX_INVALID_SHARE * len(scores) or len(keep) < 3:
        return SENTINEL
    rho = spearman([scores[i] for i in keep], [truth[i] for i in keep])
    return SENTINEL if math.isnan(rho) else rho


class FitnessOracle:
    """Scores expressions on a fixed architecture sample; results are memoized."""

    def __init__(self, stats: Sequence[NetworkStatistics], truth: Sequence[float]):
        if len(stats) != len(truth):
            raise ValueError("stats and truth must align")
        self.stats = list(stats)
        self.truth = list(truth)
        self._memo: dict[str, float] = {}

    def __len__(self):
        return len(self.stats)

    def scores(self, expr: SymbolicExpression) -> list[float | None]:
        with np.errstate(all="ignore"):
            return [evaluate(expr, s) for s in self.stats]

    def __call__(self, expr: SymbolicExpression) -> float:
        key = serialize(expr)
        if key not in self._memo:
            self._memo[key] = fitness_from_scores(self.scores(expr), self.truth)
        return self._memo[key]

    @classmethod
    def from_benchmark(cls, bench: Benchmark, sample_size: int, seed: int,
                       batch_size: int = 16) -> "FitnessOracle":
        usable = [i for i, e in enumerate(bench.entries) if not e.flagged]
        if sample_size > len(usable):
            log.warning("fitness sample size %d exceeds %d usable architectures; clamping",
                        sample_size, len(usable))
            chosen = usable
        else:
            rng = np.random.default_rng(splitmix64(seed, 0x5A3))
            chosen = sorted(rng.choice(usable, sample_size, replace=False).tolist())
        probes = probe_all(bench, chosen, batch_size)
        keep = [(st, bench.entries[i].ground_truth) for i, (_, st) in zip(chosen, probes)
                if st is not None]
        return cls([k[0] for k in keep], [k[1] for k in keep])


# -- rule-based pruning ----------------------------------------------------------------

# (pattern of consecutive unary ops, rule id); conflicts first
CONFLICT_RULES = (
    (("f09", "f01"), "neg-log"),
    (("f09", "f02"), "neg-log"),
    (("f09", "f06"), "neg-sqrt"),
    (("f09", "f07", "f08"), "zero-reciprocal"),
    (("f09", "f15"), "neg-log-softmax"),
)
REDUNDANCY_RULES = (
    (("f01", "f05"), "inverse-pair"),
    (("f05", "f01"), "inverse-pair"),
    (("f04", "f06"), "inverse-pair"),
    (("f06", "f04"), "inverse-pair"),
    (("f13", "f01"), "softmax-log"),
    (("f09", "f09"), "double-neg"),
    (("f08", "f08"), "double-reciprocal"),
    (("f03", "f03"), "double-abs"),
)
RULES = CONFLICT_RULES + REDUNDANCY_RULES
CONFLICT_IDS = frozenset(r for _, r in CONFLICT_RULES)


@dataclass(frozen=True)
class RpsVerdict:
    valid: bool
    rule_id: str | None = None


def _contains(ops: tuple[str, ...], pattern: tuple[str, ...]) -> bool:
    k = len(pattern)
    return any(ops[i:i + k] == pattern for i in range(len(ops) - k + 1))


def rps_check(expr: SymbolicExpression) -> RpsVerdict:
    for branch in (expr.left, expr.right):
        for pattern, rule in RULES:
            if _contains(branch.ops, pattern):
                return RpsVerdict(False, rule)
    return RpsVerdict(True)


# -- variation operators ----------------------------------------------------------------


@dataclass
class Candidate:
    expr: SymbolicExpression
    fitness: float
    birth: int


def _ranked(population: Sequence[Candidate]) -> list[Candidate]:
    # stable: equal fitness keeps the older candidate first
    return sorted(population, key=lambda c: (-c.fitness, c.birth))


def pool_size(population_size: int, ratio: float) -> int:
    return min(population_size, max(2, math.ceil(ratio * population_size - 1e-9)))


def tournament_select(population: Sequence[Candidate], ratio: float,
                      rng: np.random.Generator) -> tuple[Candidate, Candidate]:
    pool = _ranked(population)[:pool_size(len(population), ratio)]
    i, j = rng.choice(len(pool), size=2, replace=False)
    return pool[i], pool[j]


def _other_kind(rng: np.random.Generator, exclude: str) -> str:
    choices = [k for k in KINDS if k != exclude]
    return choices[rng.integers(len(choices))]


def crossover(a: SymbolicExpression, b: SymbolicExpression, rng: np.random.Generator,
              rate: float = 0.5) -> SymbolicExpression:
    """Left branch and binary op from ``a``, right branch from ``b`` (with prob. ``rate``)."""
    if rng.random() >= rate:
        return a
    right = b.right
    if right.kind == a.left.kind:
        right = Branch(_other_kind(rng, a.left.kind), right.ops)
    return SymbolicExpression(a.left, right, a.binary)


def mutate(expr: SymbolicExpression, rng: np.random.Generator,
           rate: float = 0.5) -> SymbolicExpression:
    """Resample one gene (operand, unary slot or binary op) with probability ``rate``."""
    if rng.random() >= rate:
        return expr
    depth_l, depth_r = len(expr.left.ops), len(expr.right.ops)
    gene = rng.integers(2 + depth_l + depth_r + 1)
    left, right, binary = expr.left, expr.right, expr.binary
    if gene == 0:
        left = Branch(_other_kind(rng, right.kind), left.ops)
    elif gene == 1:
        right = Branch(_other_kind(rng, left.kind), right.ops)
    elif gene < 2 + depth_l:
        ops = list(left.ops)
        ops[gene - 2] = UNARY_IDS[rng.integers(len(UNARY_IDS))]
        left = Branch(left.kind, tuple(ops))
    elif gene < 2 + depth_l + depth_r:
        ops = list(right.ops)
        ops[gene - 2 - depth_l] = UNARY_IDS[rng.integers(len(UNARY_IDS))]
        right = Branch(right.kind, tuple(ops))
    else:
        binary = BINARY_IDS[rng.integers(len(BINARY_IDS))]
    return SymbolicExpression(left, right, binary)


# -- drivers -----------------------------------------------------------------------------


@dataclass
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    rps_rejections: int
    best_expr: str


@dataclass
class SearchReport:
    method: str
    config: SearchConfig
    best_expr: str
    best_fitness: float
    history: list[GenerationRecord]
    rps_tally: dict[str, int]
    evaluations: int
    sentinel_evaluations: int
    sample_size: int
    top: list[tuple[str, float]] = field(default_factory=list)

    @property
    def winning_rate(self) -> float:
        """Share of generations that improved the best fitness."""
        if not self.history:
            return 0.0
        prev, wins = None, 0
        for rec in self.history:
            if prev is not None and rec.best_fitness > prev:
                wins += 1
            prev = rec.best_fitness
        return wins / len(self.history)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "config": self.config.to_json(),
            "best_expr": self.best_expr,
            "best_fitness": self.best_fitness,
            "history": [asdict(h) for h in self.history],
            "rps_tally": dict(sorted(self.rps_tally.items())),
            "evaluations": self.evaluations,
            "sentinel_evaluations": self.sentinel_evaluations,
            "sample_size": self.sample_size,
            "winning_rate": self.winning_rate,
            "top": [{"expr": e, "fitness": f} for e, f in self.top],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"


def _oracle_for(config: SearchConfig, bench_or_oracle) -> FitnessOracle:
    if isinstance(bench_or_oracle, FitnessOracle):
        return bench_or_oracle
    return FitnessOracle.from_benchmark(bench_or_oracle, config.fitness_sample_size, config.seed)


def run(config: SearchConfig, benchmark: Benchmark | FitnessOracle) -> SearchReport:
    """Evolve proxies; exactly ``p + G`` candidates are evaluated.

    Steady state: one offspring per generation, bred from two parents drawn
    from the top ``R`` share. An offspring identical to a current member is
    evaluated (it counts against the budget) but not inserted.
    """
    oracle = _oracle_for(config, benchmark)
    rng = np.random.default_rng(config.seed)
    tally: Counter[str] = Counter()
    births = itertools.count()
    evaluations = sentinels = 0

    def screened(make, limit) -> tuple[SymbolicExpression, float, int]:
        rejected = 0
        while True:
            expr = make()
            if not config.rps_enabled:
                return expr, oracle(expr), rejected
            verdict = rps_check(expr)
            if verdict.valid:
                return expr, oracle(expr), rejected
            tally[verdict.rule_id] += 1
            rejected += 1
            if limit is not None and rejected >= limit:
                # the newest candidate at the minimum fitness is always truncated
                return expr, SENTINEL, rejected

    population: list[Candidate] = []
    for _ in range(config.population_size):
        # most random genotypes pass, so the initial draw simply repeats until valid
        expr, fit, _ = screened(lambda: random_expr(rng, config.unary_depth), None)
        population.append(Candidate(expr, fit, next(births)))
        evaluations += 1
        sentinels += fit == SENTINEL

    history = []
    for gen in range(config.generations):
        pa, pb = tournament_select(population, config.selection_ratio, rng)
        expr, fit, rejected = screened(lambda: mutate(
            crossover(pa.expr, pb.expr, rng, config.crossover_rate), rng, config.mutation_rate),
            config.max_regen_attempts)
        evaluations += 1
        sentinels += fit == SENTINEL
        born = next(births)
        # a genotype already in the population is not added a second time;
        # clones would otherwise take over the selection pool
        if serialize(expr) not in {serialize(c.expr) for c in population}:
            population.append(Candidate(expr, fit, born))
            population = _ranked(population)[:config.population_size]
        history.append(GenerationRecord(gen, population[0].fitness,
                                        float(np.mean([c.fitness for c in population])),
                                        rejected, serialize(population[0].expr)))
    best = _ranked(population)[0]
    return SearchReport("evolution", config, serialize(best.expr), best.fitness, history,
                        dict(tally), evaluations, sentinels, len(oracle),
                        [(serialize(c.expr), c.fitness) for c in _ranked(population)[:10]])


def random_search(config: SearchConfig, benchmark: Benchmark | FitnessOracle) -> SearchReport:
    """Uniform sampling without pruning, same budget as :func:`run`."""
    oracle = _oracle_for(config, benchmark)
    rng = np.random.default_rng(config.seed)
    seen: list[Candidate] = []
    sentinels = 0
    history = []

    def draw():
        nonlocal sentinels
        expr = random_expr(rng, config.unary_depth)
        fit = oracle(expr)
        sentinels += fit == SENTINEL
        seen.append(Candidate(expr, fit, len(seen)))

    for _ in range(config.population_size):
        draw()
    best = _ranked(seen)[0]
    total = sum(c.fitness for c in seen)
    for gen in range(config.generations):
        draw()
        total += seen[-1].fitness
        if seen[-1].fitness > best.fitness:
            best = seen[-1]
        history.append(GenerationRecord(gen, best.fitness, total / len(seen), 0,
                                        serialize(best.expr)))
    ranked = _ranked(seen)
    return SearchReport("random", config, serialize(ranked[0].expr), ranked[0].fitness, history,
                        {}, len(seen), sentinels, len(oracle),
                        [(serialize(c.expr), c.fitness) for c in ranked[:10]])


def exhaustive_sweep(oracle: FitnessOracle, unary_depth: int = 1):
    """Fitness of every genotype in the canonical space.

    Branch values are computed once per (architecture, block, kind, chain) and
    reused; the per-block join and reduction are the same as :func:`evaluate`.
    Returns ``(expressions, fitness array)`` in :func:`enumerate_space` order.
    """
    exprs = list(enumerate_space(unary_depth))
    chains = list(itertools.product(UNARY_IDS, repeat=unary_depth))
    scores = np.empty((len(exprs), len(oracle)))
    with np.errstate(all="ignore"):
        for a, stats in enumerate(oracle.stats):
            _sweep_arch(exprs, chains, stats, scores[:, a])
    fitness = np.array([fitness_from_scores([None if math.isnan(v) else v for v in row],
                                            oracle.truth) for row in scores])
    return exprs, fitness


def _sweep_arch(exprs, chains, stats, out) -> None:
    values: dict[tuple[str, tuple[str, ...]], list] = {}
    for kind in KINDS:
        blocks = [0] if kind in GLOBAL_KINDS else range(stats.n_blocks)
        for chain in chains:
            per_block = []
            for i in blocks:
                try:
                    per_block.append(eval_branch(Branch(kind, chain), operand(stats, kind, i)))
                except InvalidExpression:
                    per_block.append(None)
            if kind in GLOBAL_KINDS:
                per_block = per_block * stats.n_blocks
            values[kind, chain] = per_block
    for e, expr in enumerate(exprs):
        out[e] = _sweep_score(expr, values, stats.n_blocks)


def _sweep_score(expr: SymbolicExpression, values, n_blocks: int) -> float:
    if expr.left.pruned and expr.right.pruned:
        return math.nan
    lvals = values[expr.left.kind, expr.left.ops]
    rvals = values[expr.right.kind, expr.right.ops]
    total = 0.0
    for i in range(n_blocks):
        lv = EMPTY if expr.left.pruned else lvals[i]
        rv = EMPTY if expr.right.pruned else rvals[i]
        if lv is None or rv is None:
            return math.nan
        try:
            total += combine_block(expr.binary, lv, rv)
        except InvalidExpression:
            return math.nan
    return total if math.isfinite(total) else math.nan
