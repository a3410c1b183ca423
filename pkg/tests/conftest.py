import sys

import pytest

from proxyforge.bench import build_benchmark


@pytest.fixture(scope="session")
def small_bench():
    """Ten architectures, briefly trained; enough for plumbing tests."""
    return build_benchmark(10, 20, seed=1, threads=1)


@pytest.fixture
def small_bench_path(small_bench, tmp_path):
    path = tmp_path / "bench.json"
    small_bench.save(path)
    return path


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in results.items():
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
