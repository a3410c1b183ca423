"""Acceptance gate.

One test per acceptance criterion, each at its stated tolerance. Every test
records a pass/fail line that conftest prints at the end of the session.
"""

import math
import statistics
import time

import numpy as np
import pytest

from proxyforge import zoo
from proxyforge.bench import build_benchmark, probe_all, select_specs
from proxyforge.dsl import Branch, enumerate_space, eval_branch, evaluate, parse, serialize, space_size
from proxyforge.ranking import kendall, spearman
from proxyforge.search import (CONFLICT_RULES, FitnessOracle, SearchConfig, exhaustive_sweep,
                               random_search, rps_check, run)
from proxyforge.stats import operand

from oracles import kendall_brute, spearman_brute, spearman_closed_form
from test_search import branch_expr
import test_tensor
from test_tensor import PRIMITIVES, check_grads

SEEDS = (42, 43, 44, 45, 46)
RESULTS: dict[str, tuple[bool, str]] = {}


def record(name: str, passed: bool, detail: str) -> None:
    RESULTS[name] = (passed, detail)
    assert passed, f"{name}: {detail}"


@pytest.fixture(scope="module")
def grid_bench():
    """Full 108-architecture grid, 300 SGD steps each."""
    return build_benchmark(108, 300, seed=0)


@pytest.fixture(scope="module")
def grid_probes(grid_bench):
    return probe_all(grid_bench)


def test_search_space_count():
    start = time.perf_counter()
    size = space_size(1)
    distinct = len({serialize(e) for e in enumerate_space(1)})
    seconds = time.perf_counter() - start
    record("search-space count", size == 24_000 and distinct == 24_000 and seconds < 1.0,
           f"space_size={size}, distinct={distinct}, {seconds:.2f}s (< 1 s)")


def test_exhaustive_oracle_recovery(grid_bench):
    start = time.perf_counter()
    # the 30-architecture benchmark is the seeded subset; entries do not depend
    # on which other architectures were trained alongside
    bench = grid_bench.subset(select_specs(30, 0))
    oracle = FitnessOracle.from_benchmark(bench, 50, 0)
    assert len(oracle) == 30
    exprs, fitness = exhaustive_sweep(oracle)
    rho_star = float(fitness.max())
    best = []
    for seed in SEEDS:
        report = run(SearchConfig(generations=1920, seed=seed), oracle)
        assert report.evaluations == 2000
        best.append(report.best_fitness)
    hits = sum(b >= 0.95 * rho_star for b in best)
    seconds = time.perf_counter() - start
    record("exhaustive-oracle recovery", hits >= 3 and seconds < 15 * 60,
           f"rho*={rho_star:.4f} ({serialize(exprs[int(fitness.argmax())])}); "
           f"GP best={[round(b, 4) for b in best]}; {hits}/5 >= 0.95 rho*; {seconds:.0f}s")


def test_evolution_beats_random(grid_bench):
    evo, rnd = [], []
    for seed in SEEDS:
        config = SearchConfig(seed=seed)
        oracle = FitnessOracle.from_benchmark(grid_bench, config.fitness_sample_size, seed)
        e, r = run(config, oracle), random_search(config, oracle)
        assert e.evaluations == r.evaluations == 1080
        evo.append(e.best_fitness)
        rnd.append(r.best_fitness)
    strict = sum(a > b for a, b in zip(evo, rnd))
    med_e, med_r = statistics.median(evo), statistics.median(rnd)
    record("evolution >= random", med_e >= med_r and strict >= 3,
           f"median evo={med_e:.4f} random={med_r:.4f}; strictly better in {strict}/5 "
           f"(evo={[round(x, 4) for x in evo]}, random={[round(x, 4) for x in rnd]})")


def test_rps_effect(grid_bench):
    rows = [(p, r, rps_check(branch_expr(*p))) for p, r in CONFLICT_RULES]
    table_ok = all(not v.valid and v.rule_id == r for _, r, v in rows)
    # the rules match runs of unary ops inside a branch, so they can only fire
    # from two unary ops per branch upward
    with_rps, without = [], []
    for seed in SEEDS:
        oracle = FitnessOracle.from_benchmark(grid_bench, 50, seed)
        with_rps.append(run(SearchConfig(unary_depth=2, seed=seed), oracle).sentinel_evaluations)
        without.append(run(SearchConfig(unary_depth=2, seed=seed, rps_enabled=False),
                           oracle).sentinel_evaluations)
    record("RPS effect", table_ok and sum(with_rps) < sum(without),
           f"sentinel evaluations over 5 seeds at unary depth 2: with RPS {sum(with_rps)} "
           f"{with_rps}, without {sum(without)} {without}; conflict rows rejected: {table_ok}")


def test_rank_metric_oracles():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(3, 201))
        if i % 2:
            x, y = rng.integers(0, 6, n).astype(float), rng.integers(0, 6, n).astype(float)
        else:
            x, y = rng.normal(size=n), rng.normal(size=n)
        for ours, ref in ((spearman(x, y), spearman_brute(list(x), list(y))),
                          (kendall(x, y), kendall_brute(list(x), list(y)))):
            worst = max(worst, 0.0 if math.isnan(ours) and math.isnan(ref) else abs(ours - ref))
    closed = 0.0
    for n in (3, 20, 200):
        x, y = rng.normal(size=n), rng.normal(size=n)
        closed = max(closed, abs(spearman(x, y) - spearman_closed_form(list(x), list(y))))
    record("rank-metric oracles", worst < 1e-12 and closed < 1e-12,
           f"max |diff| vs brute force {worst:.1e}, vs closed form {closed:.1e} (< 1e-12)")


def test_autodiff_soundness():
    failed = []
    for name, (fn, args) in sorted(PRIMITIVES.items()):
        try:
            check_grads(fn, *args, tol=1e-4)
        except AssertionError:
            failed.append(name)
    try:
        test_tensor.test_transformer_loss_gradients()
        net_ok = True
    except AssertionError:
        net_ok = False
    record("autodiff soundness", not failed and net_ok,
           f"{len(PRIMITIVES) - len(failed)}/{len(PRIMITIVES)} primitives and "
           f"2-layer transformer loss {'pass' if net_ok else 'FAIL'} at rel err < 1e-4")


def test_dsl_native_equivalence(grid_probes):
    pairs = {"synaptic_saliency": parse("G:f19|g03|W:f19"), "gradnorm": parse("G:f10|g01|W:f20")}
    worst = 0.0
    for model, stats in grid_probes:
        for pid, expr in pairs.items():
            native, dsl = zoo.score(pid, model, stats), evaluate(expr, stats)
            worst = max(worst, abs(dsl - native) / max(abs(native), 1e-300))
    record("DSL/native equivalence", len(grid_probes) == 108 and worst < 1e-8,
           f"max rel err {worst:.1e} over {len(grid_probes)} architectures (< 1e-8)")


def test_searched_proxy_fidelity(grid_probes):
    exprs = {k: parse(v) for k, v in zoo.SEARCHED.items()}
    finite = all(evaluate(e, stats) is not None for e in exprs.values() for _, stats in grid_probes)
    constant = True
    for _, stats in grid_probes:
        for b in range(stats.n_blocks):
            a = operand(stats, "A", b)
            soft = eval_branch(Branch("A", ("f10", "f13")), a)
            logged = eval_branch(Branch("A", ("f10", "f13", "f01")), a)
            constant &= soft == 1.0 and logged == 0.0
    record("searched-proxy fidelity", finite and constant,
           f"3 genotypes parse; finite on all {len(grid_probes)} architectures: {finite}; "
           f"softmax of scalar == 1 and its log == 0: {constant}")


def test_determinism():
    a = build_benchmark(12, 40, seed=3)
    b = build_benchmark(12, 40, seed=3)
    same_file = a.dumps().encode() == b.dumps().encode()
    config = SearchConfig(generations=200, seed=7)
    ra, rb = run(config, a), run(config, b)
    record("determinism", same_file and ra.best_expr == rb.best_expr and ra.dumps() == rb.dumps(),
           f"benchmark bytes identical: {same_file}; best expression {ra.best_expr} twice: "
           f"{ra.best_expr == rb.best_expr}")


def test_unary_depth_ablation(grid_bench):
    done = []
    for depth in range(1, 6):
        report = run(SearchConfig(unary_depth=depth, generations=50, seed=42), grid_bench)
        ok = len(report.history) == 50 and len(parse(report.best_expr).left.ops) == depth
        done.append((depth, ok, round(report.best_fitness, 4)))
    record("unary-depth ablation hook", all(ok for _, ok, _ in done),
           "depth/completed/best: " + ", ".join(f"{d}/{ok}/{f}" for d, ok, f in done))
