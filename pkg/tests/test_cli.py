import json
import math
import subprocess
import sys

import pytest

from fifobound import cli
from fifobound.network import from_dict, gen_one_hop


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_generate_round_trip(tmp_path, capsys):
    path = tmp_path / "net.json"
    code, _, _ = run(["generate", "--family", "one_hop", "--n", "3", "--u", "0.5", "--ratio", "2",
                      "--out", str(path)], capsys)
    assert code == 0
    net = from_dict(json.loads(path.read_text()))
    assert net.server("s1").rate == 4.0 and net.server("s1").shaper_to("s2").Rp == 8.0
    assert net == gen_one_hop(3, 0.5, 2)
    assert cli.dump_topology(cli.read_topology(str(path))) == path.read_text()


def test_generate_bad_ratio(capsys):
    code, _, err = run(["generate", "--family", "one_hop", "--n", "3", "--u", "0.5", "--ratio", "0"], capsys)
    assert code == cli.EXIT_USAGE and "ratio" in err


def test_generate_unwritable(tmp_path, capsys):
    code, _, err = run(["generate", "--family", "tree", "--n", "2", "--u", "50%", "--ratio", "1",
                        "--out", str(tmp_path / "missing" / "x.json")], capsys)
    assert code != 0 and "cannot write" in err


def test_analyze_all_methods(tmp_path, capsys):
    path = tmp_path / "net.json"
    run(["generate", "--family", "one_hop", "--n", "2", "--u", "0.5", "--ratio", "2", "--out", str(path)], capsys)
    code, out, _ = run(["analyze", "--input", str(path), "--foi", "f0"], capsys)
    assert code == 0
    rep = json.loads(out)
    bounds = {r["method"]: r["bound"] for r in rep["results"]}
    assert set(bounds) == {"ludbpp", "ludbff", "sfa_fifo", "tfa_pp"}
    assert bounds["ludbpp"] <= bounds["ludbff"]
    pp = rep["results"][0]
    assert pp["theta"] and pp["branches"] >= 1 and pp["lps"] >= 1 and pp["wall_time_s"] >= 0


def test_analyze_single_server(tmp_path, capsys):
    doc = {"servers": [{"id": "s", "rate": 4, "latency": 1.5, "out_shapers": []}],
           "flows": [{"id": "f", "path": ["s"], "b": 2, "r": 1, "ingress": {"L": 0, "Rp": "inf"}}]}
    path = tmp_path / "one.json"
    path.write_text(json.dumps(doc))
    code, out, _ = run(["analyze", "--input", str(path), "--foi", "f", "--methods", "ludbff"], capsys)
    assert code == 0
    assert json.loads(out)["results"][0]["bound"] == pytest.approx(1.5 + 2 / 4)


def test_analyze_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "servers": [\n    {"id": "s",}\n  ]\n}\n')
    code, _, err = run(["analyze", "--input", str(bad), "--foi", "f"], capsys)
    assert code == cli.EXIT_INPUT and ":3:" in err

    doc = {"servers": [{"id": "s", "rate": 1, "latency": 1}],
           "flows": [{"id": "f", "path": ["s"], "b": 1, "r": 2}]}
    over = tmp_path / "over.json"
    over.write_text(json.dumps(doc))
    code, _, err = run(["analyze", "--input", str(over), "--foi", "f"], capsys)
    assert code == cli.EXIT_INPUT and "stability" in err

    code, _, err = run(["analyze", "--family", "one_hop", "--n", "2", "--u", "0.5", "--ratio", "2",
                        "--foi", "nope"], capsys)
    assert code == cli.EXIT_INPUT and "nope" in err

    code, _, _ = run(["analyze", "--family", "one_hop", "--n", "2", "--u", "0.5", "--ratio", "2",
                      "--methods", "elp"], capsys)
    assert code == cli.EXIT_USAGE


def test_usage_exit_code(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["analyze", "--no-such-flag"])
    assert e.value.code == cli.EXIT_USAGE
    code, _, _ = run(["compare", "--workers", "0"], capsys)
    assert code == cli.EXIT_USAGE


def test_workers_env(monkeypatch):
    monkeypatch.setenv("NC_WORKERS", "3")
    assert cli._workers(None) == 3
    assert cli._workers("2") == 2


def test_backlog_objective(capsys):
    code, out, _ = run(["analyze", "--family", "sinktree", "--n", "2", "--u", "0.5", "--ratio", "2",
                        "--objective", "backlog", "--methods", "ludbpp,sfa_fifo"], capsys)
    assert code == 0
    res = json.loads(out)["results"]
    assert res[0]["bound"] > 0 and res[1]["bound"] == "nan"


def test_compare_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    code, _, _ = run(["compare", "--family", "one_hop", "--n", "2-3", "--u", "0.5,1.0", "--ratio", "1,2",
                      "--out", str(out)], capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# fifobound-compare v1")
    rows = [l.split(",") for l in lines[2:]]
    assert len(rows) == 2 * 2 * 2 * 4
    for r in rows:
        if r[4] == "ludbff":
            assert float(r[6]) == 0.0
        if r[2] == "1" and r[4] == "ludbpp":
            assert abs(float(r[6])) < 1e-9
    assert (tmp_path / "s.csv.timings.csv").exists()


def test_relative_metric():
    assert cli.relative(3.0, 2.0) == pytest.approx(0.5)
    assert cli.relative(2.0, 2.0) == 0.0
    assert math.isnan(cli.relative(float("nan"), 2.0))


def test_failed_cell_recorded(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")
    monkeypatch.setattr(cli, "tfa_pp_delay", boom)
    rows = cli.run_cell(("one_hop", 2, 0.5, 2.0), ("ludbff", "tfa_pp"))
    assert math.isnan(rows[1]["bound"]) and "solver exploded" in rows[1]["note"]
    assert math.isfinite(rows[0]["bound"])


def test_cell_deadline():
    rows = cli.run_cell(("sinktree", 4, 0.5, 2.0), ("ludbpp",), cell_deadline=0.0)
    assert math.isnan(rows[0]["bound"]) and rows[0]["note"].startswith("skipped")


def test_module_entry_point():
    p = subprocess.run([sys.executable, "-m", "fifobound", "compare", "--family", "ring"],
                       capture_output=True, text=True)
    assert p.returncode == cli.EXIT_USAGE and "ring" in p.stderr
