import csv
import json

from proxyforge import zoo
from proxyforge.cli import main


def test_proxy_eval_gradnorm(small_bench_path, tmp_path):
    out = tmp_path / "gradnorm.json"
    assert main(["proxy", "eval", "--proxy", "gradnorm", "--bench", str(small_bench_path),
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["target"] == "gradnorm" and report["ranking"]["n"] == 10


def test_missing_benchmark(tmp_path, capsys):
    code = main(["proxy", "eval", "--proxy", "gradnorm", "--bench", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x.json")])
    assert code == 2
    assert "cannot read benchmark" in capsys.readouterr().err


def test_unknown_proxy_is_usage_error(small_bench_path, tmp_path, capsys):
    code = main(["proxy", "eval", "--proxy", "bogus", "--bench", str(small_bench_path),
                 "--out", str(tmp_path / "x.json")])
    assert code == 1
    assert "unknown proxy" in capsys.readouterr().err


def test_bad_arguments(capsys):
    assert main(["bench", "build"]) == 1
    assert main([]) == 1
    assert main(["bench", "build", "--n", "0", "--out", "x.json"]) == 1


def test_report_over_full_zoo(small_bench_path, tmp_path):
    evals = tmp_path / "all.json"
    assert main(["proxy", "eval", "--proxy", "all", "--bench", str(small_bench_path),
                 "--out", str(evals)]) == 0
    table = tmp_path / "table.csv"
    assert main(["report", "--in", str(evals), "--csv", str(table)]) == 0
    with open(table, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["id", "rho", "tau", "n_invalid", "seconds"]
    assert len(rows) == 18
    assert {r[0] for r in rows[1:]} == set(zoo.proxy_ids())
    rhos = [float(r[1]) for r in rows[1:] if r[1]]
    assert rhos == sorted(rhos, reverse=True)


def test_report_from_several_files(small_bench_path, tmp_path):
    paths = []
    for pid in ("snip", "n_params"):
        p = tmp_path / f"{pid}.json"
        main(["proxy", "eval", "--proxy", pid, "--bench", str(small_bench_path), "--out", str(p)])
        paths.append(str(p))
    table = tmp_path / "t.csv"
    assert main(["report", "--in", *paths, "--csv", str(table)]) == 0
    assert len(table.read_text().splitlines()) == 3


def test_search_run_and_random(small_bench_path, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"population_size": 10, "generations": 15}))
    for cmd in ("run", "random"):
        out = tmp_path / f"{cmd}.json"
        assert main(["search", cmd, "--bench", str(small_bench_path), "--config", str(cfg),
                     "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert len(report["history"]) == 15 and report["evaluations"] == 25


def test_search_bad_config(small_bench_path, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"population": 10}))
    assert main(["search", "run", "--bench", str(small_bench_path), "--config", str(cfg),
                 "--out", str(tmp_path / "o.json")]) == 1
    cfg.write_text("[1, 2]")
    assert main(["search", "run", "--bench", str(small_bench_path), "--config", str(cfg),
                 "--out", str(tmp_path / "o.json")]) == 1


def test_bench_build(tmp_path):
    out = tmp_path / "b.json"
    assert main(["bench", "build", "--n", "3", "--steps", "2", "--seed", "7", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["entries"]) == 3
