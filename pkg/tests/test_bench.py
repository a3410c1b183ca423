import json
import math

import numpy as np
import pytest

from proxyforge.arch import enumerate_specs
from proxyforge.bench import (VERSION, Benchmark, BenchmarkError, Entry, UsageError,
                              build_benchmark, eval_proxy, resolve_target, select_specs,
                              splitmix64, thread_count)


def test_splitmix_known_values():
    # first outputs of the reference generator seeded with 0
    assert splitmix64(0, 0) == 0xE220A8397B1DCDAF
    assert splitmix64(0, 1) == 0x6E789E6AA1B965F4
    assert splitmix64(0, 0) != splitmix64(1, 0)


def test_thread_count(monkeypatch):
    monkeypatch.setenv("PROXYFORGE_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("PROXYFORGE_THREADS", "0")
    assert thread_count() >= 1


def test_same_seed_byte_identical(small_bench):
    again = build_benchmark(10, 20, seed=1, threads=1)
    assert again.dumps() == small_bench.dumps()


def test_parallel_build_matches_serial():
    a = build_benchmark(4, 5, seed=2, threads=1)
    b = build_benchmark(4, 5, seed=2, threads=2)
    assert a.dumps() == b.dumps()


def test_subset_of_grid():
    grid = set(enumerate_specs())
    small = select_specs(3, 0)
    assert len(small) == 3 and set(small) <= grid
    assert select_specs(108, 0) == enumerate_specs()
    with pytest.raises(ValueError):
        select_specs(0, 0)


def test_subset_entries_do_not_depend_on_subset():
    full = build_benchmark(108, 2, seed=4)
    part = build_benchmark(5, 2, seed=4)
    assert full.subset(select_specs(5, 4)).dumps() == part.dumps()
    # architectures are distinguishable even after a couple of steps
    assert max(full.truth()) - min(full.truth()) > 0


def test_round_trip(small_bench, small_bench_path):
    assert Benchmark.load(small_bench_path).dumps() == small_bench.dumps()


def test_version_check(small_bench, tmp_path):
    obj = small_bench.to_json()
    obj["version"] = "proxyforge-bench/0"
    with pytest.raises(BenchmarkError, match="version"):
        Benchmark.from_json(obj)


def test_load_errors(tmp_path):
    with pytest.raises(BenchmarkError):
        Benchmark.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(BenchmarkError):
        Benchmark.load(bad)
    bad.write_text(json.dumps({"version": VERSION, "task": {}}))
    with pytest.raises(BenchmarkError):
        Benchmark.load(bad)


def test_duplicate_entries_rejected(small_bench):
    obj = small_bench.to_json()
    obj["entries"].append(obj["entries"][0])
    with pytest.raises(BenchmarkError, match="duplicate"):
        Benchmark.from_json(obj)


def test_flagged_entry_round_trip(small_bench):
    e = Entry(small_bench.entries[0].arch, -math.inf, 10, flagged=True)
    obj = e.to_json()
    assert obj["ground_truth"] is None
    back = Entry.from_json(obj)
    assert back.flagged and back.ground_truth == -math.inf


def test_eval_n_params(small_bench):
    r = eval_proxy("n_params", small_bench)
    assert math.isfinite(r.ranking.spearman_rho) and r.ranking.n_invalid == 0
    assert r.kind == "proxy" and len(r.table) == 10


def test_eval_always_invalid_expression(small_bench):
    r = eval_proxy("W:f20|g01|G:f20", small_bench)
    assert r.kind == "expression"
    assert r.ranking.n_invalid == r.ranking.n == 10
    assert math.isnan(r.ranking.spearman_rho)


def test_eval_flexibert_finite(small_bench):
    r = eval_proxy("lpzero_flexibert", small_bench)
    assert all(row["score"] is not None and math.isfinite(row["score"]) for row in r.table)
    assert "identically 1" in r.to_json()["note"]


def test_resolve_errors():
    with pytest.raises(UsageError):
        resolve_target("not_a_proxy")
    with pytest.raises(UsageError):
        resolve_target("W:f99|g01|G:f19")


def test_truth_is_negative_loss(small_bench):
    truth = np.array(small_bench.truth())
    assert np.all(truth < 0) and np.all(truth > -math.log(16) - 1)
