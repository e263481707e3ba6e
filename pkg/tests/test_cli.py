import json

import pytest

from mirage.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_cachesim_json(capsys):
    code, out, _ = run(capsys, "--format", "json", "--seed", "4", "cachesim", "--sets-per-skew",
                       "256", "--phys-addr-bits", "36", "--length", "5000", "--address-bits", "20")
    assert code == 0
    rep = json.loads(out)
    assert rep["schema_version"] == 1 and rep["seed"] == 4
    assert rep["config"]["geometry"]["sets_per_skew"] == 256
    assert rep["results"]["misses"] + rep["results"]["hits"] == 5000


def test_flags_after_subcommand_and_identical_output(capsys):
    argv = ["cachesim", "--model", "set-assoc", "--sets-per-skew", "64", "--phys-addr-bits", "30",
            "--length", "3000", "--trace", "zipf", "--address-bits", "12", "--format", "csv",
            "--seed", "1"]
    _, a, _ = run(capsys, *argv)
    _, b, _ = run(capsys, *argv)
    assert a == b
    assert a.startswith("model,seed,trace_length,hits,misses")


def test_config_with_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "ballsim", "seed": 1,
                               "ballsim": {"buckets_per_skew": 64, "balls": 1024,
                                           "throws": 10000}}))
    code, out, _ = run(capsys, "--config", str(cfg), "--format", "json", "ballsim",
                       "--capacity", "9", "10", "--seed", "7")
    assert code == 0
    rep = json.loads(out)
    assert rep["seed"] == 7 and rep["config"]["ballsim"]["seed"] == 7
    assert rep["config"]["ballsim"]["capacities"] == [9, 10]
    code, out2, _ = run(capsys, "--config", str(cfg), "--format", "json", "run")
    assert code == 0 and json.loads(out2)["config"]["ballsim"]["bucket_capacity"] == 14


def test_invalid_config_exits_nonzero_without_output(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"model": "mirage", "trace": {"kind": "zipf", "zipf_s": -1}}))
    out = tmp_path / "report.json"
    code, stdout, err = run(capsys, "--config", str(cfg), "--out", str(out), "run")
    assert code != 0 and "error" in err and stdout == ""
    assert not out.exists()
    code, _, err = run(capsys, "run")
    assert code != 0 and "--config" in err
    code, _, err = run(capsys, "analytic", "--p0", "lots")
    assert code != 0


def test_trace_gen_and_replay(tmp_path, capsys):
    trace = tmp_path / "t.trace"
    assert run(capsys, "--out", str(trace), "--seed", "3", "trace-gen", "--length", "200",
               "--address-bits", "24", "--sdid-mode", "round-robin", "--domains", "2")[0] == 0
    lines = trace.read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 201
    code, out, _ = run(capsys, "--format", "json", "cachesim", "--replay", str(trace),
                       "--sets-per-skew", "64", "--phys-addr-bits", "36")
    assert code == 0 and json.loads(out)["results"]["trace_length"] == 200
    trace.write_text("12 0\nnothex 1\n")
    code, _, err = run(capsys, "cachesim", "--replay", str(trace))
    assert code != 0 and ":2:" in err


@pytest.mark.parametrize("table,first", [("sae", "capacity"), ("occupancy", "n"),
                                         ("relocation", "attempts"),
                                         ("associativity", "associativity")])
def test_analytic_tables(capsys, table, first):
    code, out, _ = run(capsys, "analytic", "--table", table)
    assert code == 0 and out.split()[0] == first


def test_storage_table(capsys, tmp_path):
    out = tmp_path / "s.csv"
    assert run(capsys, "--format", "csv", "--out", str(out), "storage")[0] == 0
    rows = out.read_text().splitlines()
    assert rows[1].startswith("baseline,28,262144,896,")
    assert ",20800," in rows[2] and ",20256," in rows[3]


def test_schema(capsys):
    code, out, _ = run(capsys, "schema")
    assert code == 0 and "model" in json.loads(out)["properties"]
