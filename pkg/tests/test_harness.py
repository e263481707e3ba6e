import json

import numpy as np
import pytest

from mirage.harness import (CACHE_COLUMNS, ConfigError, ExperimentConfig, ReplayParseError,
                            TraceSpec, generate_trace, load_config, parse_replay,
                            run_experiment, write_replay)
from mirage.indexing import SkewIndexer, SkewKeySet


def test_uniform_trace_reproducible():
    spec = TraceSpec(kind="uniform", length=10, seed=4)
    a, b = generate_trace(spec), generate_trace(spec)
    assert len(a) == 10
    assert np.array_equal(a.addrs, b.addrs)
    assert not np.array_equal(a.addrs, generate_trace(TraceSpec(length=10, seed=5)).addrs)
    # without a trace seed the experiment seed decides
    assert np.array_equal(generate_trace(TraceSpec(length=10), 4).addrs, a.addrs)


def test_zipf_rank_frequency_slope():
    tr = generate_trace(TraceSpec(kind="zipf", length=2_000_000, address_space_bits=20,
                                  zipf_s=1.0, seed=1))
    _, counts = np.unique(tr.addrs, return_counts=True)
    freq = np.sort(counts)[::-1][:1000]
    ranks = np.arange(1, len(freq) + 1)
    slope = np.polyfit(np.log(ranks), np.log(freq), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.1)
    assert tr.addrs.max() < 1 << 20


def test_adversarial_identity_targets_one_set():
    tr = generate_trace(TraceSpec(kind="adversarial", length=5000, target_set=77, sets=16384))
    assert ((tr.addrs % np.uint64(16384)) == 77).all()
    assert len(np.unique(tr.addrs)) == 5000


def test_adversarial_keyed_mapping():
    spec = TraceSpec(kind="adversarial", length=50, target_set=3, sets=256, mapping="keyed",
                     key_seed=9, address_space_bits=30)
    tr = generate_trace(spec)
    ix = SkewIndexer(SkewKeySet.from_seed(9, 1), 256)
    assert (ix.derive_indices(0, 0, tr.addrs) == 3).all()


def test_sdid_modes():
    rr = generate_trace(TraceSpec(length=6, sdid_mode="round-robin", domains=3))
    assert rr.sdids.tolist() == [0, 1, 2, 0, 1, 2]
    rnd = generate_trace(TraceSpec(length=1000, sdid_mode="random", domains=4))
    assert set(rnd.sdids.tolist()) == {0, 1, 2, 3}
    fixed = generate_trace(TraceSpec(length=3, sdid=7))
    assert fixed.sdids.tolist() == [7, 7, 7]
    w = generate_trace(TraceSpec(length=10000, write_fraction=0.25))
    assert 0.2 < w.writes.mean() < 0.3


def test_replay_roundtrip(tmp_path):
    tr = generate_trace(TraceSpec(length=50, sdid_mode="random", domains=5))
    path = tmp_path / "t.trace"
    write_replay(tr, path)
    back = generate_trace(TraceSpec(kind="replay", path=str(path), length=None))
    assert np.array_equal(back.addrs, tr.addrs) and np.array_equal(back.sdids, tr.sdids)


def test_replay_comments_and_errors(tmp_path):
    p = tmp_path / "a.trace"
    p.write_text("# header\n\n1f 0  # trailing\nABC 3\n")
    addrs, sdids = parse_replay(p)
    assert addrs.tolist() == [0x1F, 0xABC] and sdids.tolist() == [0, 3]
    for body, line in [("1f 0\nzz 1\n", 2), ("1f\n", 1), ("1f 0\n\n2 300\n", 3),
                       ("# only\n1 x\n", 2)]:
        p.write_text(body)
        with pytest.raises(ReplayParseError) as e:
            parse_replay(p)
        assert e.value.lineno == line and f":{line}:" in str(e.value)


@pytest.mark.parametrize("kw", [dict(length=0), dict(zipf_s=0.0, kind="zipf"),
                                dict(kind="replay"), dict(kind="bogus"),
                                dict(kind="zipf", address_space_bits=40),
                                dict(sdid_mode="round-robin", domains=0)])
def test_trace_spec_validation(kw):
    with pytest.raises(ConfigError):
        TraceSpec(**kw)


@pytest.mark.parametrize("doc", [
    {}, {"model": "lru"}, {"model": "mirage", "colour": 1},
    {"model": "mirage", "geometry": {"sets_per_skew": 1000}},
    {"model": "mirage", "trace": {"length": 0}},
    {"model": "ballsim", "ballsim": {"bucket_capacity": 0}},
    {"model": "ballsim", "ballsim": {"capacities": [8, 0]}},
    {"model": "analytic", "analytic": {"p0": 2.0}},
    {"model": "mirage", "schema_version": 99},
])
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        run_experiment(doc)


def test_option_mismatch_is_config_error():
    with pytest.raises(ConfigError):
        run_experiment({"model": "mirage", "model_options": {"keyed": True},
                        "trace": {"length": 10}})
    with pytest.raises(ConfigError):
        run_experiment({"model": "mirage", "geometry": {"phys_addr_bits": 30},
                        "trace": {"length": 10, "address_space_bits": 40}})


SMALL_GEOM = {"sets_per_skew": 256, "phys_addr_bits": 36}


@pytest.mark.parametrize("model", ["mirage", "random-skew", "vway", "set-assoc"])
def test_cache_report(model):
    rep = run_experiment({"model": model, "seed": 3, "geometry": SMALL_GEOM,
                          "trace": {"length": 50_000, "address_space_bits": 16}})
    r = rep.results
    assert r["hits"] + r["misses"] == r["trace_length"] == 50_000
    assert r["sae"] <= r["misses"]
    assert r["gle"] + r["sae"] + r["fills"] == r["misses"]
    assert rep.to_csv().splitlines()[0] == ",".join(CACHE_COLUMNS)
    assert "wall_time_s" not in rep.to_dict()


def test_reports_byte_identical():
    doc = {"model": "mirage", "seed": 5, "geometry": SMALL_GEOM,
           "trace": {"kind": "zipf", "length": 20000, "address_space_bits": 14}}
    assert run_experiment(doc).to_json() == run_experiment(doc).to_json()
    other = dict(doc, seed=6)
    assert run_experiment(other).to_json() != run_experiment(doc).to_json()


def test_vway_adversarial_through_harness():
    rep = run_experiment({"model": "vway", "model_options": {"identity_mapping": True},
                          "geometry": SMALL_GEOM,
                          "trace": {"kind": "adversarial", "length": 20000, "sets": 256,
                                    "address_space_bits": 30}})
    r = rep.results
    assert r["sae"] >= 0.99 * (r["misses"] - 28)


def test_ballsim_and_analytic_reports():
    rep = run_experiment({"model": "ballsim", "seed": 2,
                          "ballsim": {"buckets_per_skew": 128, "balls": 2048, "throws": 50_000,
                                      "capacities": [9, 10], "trials": 2, "workers": 1}})
    assert set(rep.results["capacities"]) == {"9", "10"}
    assert [r["bucket_capacity"] for r in rep.rows] == [9, 10]
    assert rep.rows[0]["throws"] == 100_000
    a = run_experiment({"model": "analytic"})
    assert a.results["installs_per_sae"]["12"]["log10_installs_per_sae"] == pytest.approx(8.278, abs=1e-3)
    assert a.results["relocation"]["3"] == pytest.approx(1.897e8 * 16384**3, rel=1e-3)
    cal = run_experiment({"model": "analytic", "analytic": {"p0": None}})
    assert cal.results["p0"] == pytest.approx(3.991e-6, rel=1e-3)
    table = a.to_table().splitlines()
    assert table[0].split() == list(a.columns) and len(table) == 2 + len(a.rows)


def test_config_echo_roundtrips(tmp_path):
    doc = {"model": "ballsim", "seed": 9, "ballsim": {"bucket_capacity": 10, "throws": 5}}
    cfg = ExperimentConfig.from_dict(doc)
    assert cfg.ballsim.seed == 9
    echo = cfg.to_dict()
    p = tmp_path / "c.json"
    p.write_text(json.dumps(echo))
    assert load_config(p) == cfg
    p.write_text("{broken")
    with pytest.raises(ConfigError, match="line 1"):
        load_config(p)
