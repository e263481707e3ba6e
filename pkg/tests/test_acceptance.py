"""End-to-end acceptance checks, one test group per criterion.

Each check records its outcome so the session ends with one PASS/FAIL line
per criterion; the check then asserts, so a miss is also a test failure.
"""

import math
import os
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE
from oracles import BruteLRU

from mirage.analytic import (balance_residuals, installs_per_sae,
                             installs_per_sae_with_relocation, steady_state, storage_report)
from mirage.ballsim import BallSim, BallSimConfig, run_parallel, run_trial
from mirage.baselines import SetAssocLRU, VWayCache
from mirage.cache import MirageCache, OutcomeKind
from mirage.geometry import CacheGeometry
from mirage.harness import TraceSpec, generate_trace, run_experiment


def record(criterion: int, check: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(ok), detail))
    print(f"criterion {criterion} [{check}]: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {criterion} [{check}] failed: {detail}"


def within(x, target, rel):
    return abs(x - target) <= rel * target


def within_order(x, target):
    return target / 10 <= x <= target * 10


# -- 1. spill table -----------------------------------------------------

SPILL_TABLE = {8: (1, 10_000_000), 9: (4, 10_000_000), 10: (60, 10_000_000),
               11: (8000, 30_000_000)}


@pytest.mark.parametrize("ways", sorted(SPILL_TABLE))
def test_c1_spill_table(ways):
    target, throws = SPILL_TABLE[ways]
    st = run_trial(BallSimConfig(bucket_capacity=ways, throws=throws, seed=100 + ways))
    rate = st.installs_per_spill
    ok = st.spills >= 30 and within(rate, target, 0.5)
    record(1, f"W={ways}", ok, f"{rate:.3g} installs/spill vs {target} "
                               f"({st.spills} spills / {st.throws:.1e} throws)")


# -- 2. extended W=12 run -----------------------------------------------

def test_c2_w12_extended():
    trials = 10
    cfg = BallSimConfig(bucket_capacity=12, throws=1_000_000_000, seed=12)
    t0 = time.perf_counter()
    st = run_parallel(cfg, trials, workers=os.cpu_count())
    wall = time.perf_counter() - t0
    rate = st.installs_per_spill
    ok = st.throws >= 10**10 and st.spills > 0 and within_order(rate, 1.6e8)
    record(2, "W=12", ok, f"{rate:.3g} installs/spill vs 1.6e8 ({st.spills} spills / "
                          f"{st.throws:.1e} throws, {wall / 60:.1f} min)")


# -- 3. analytic recursion ----------------------------------------------

def test_c3_analytic():
    s = steady_state(4e-6)
    best = min(_timed(steady_state) for _ in range(50))
    probs = {13: 1e-9, 14: 1e-17, 15: 1e-35}
    got = {n: s.prob(n) for n in probs}
    sae = {12: 2e8, 13: 7e16, 14: 1e34}
    got_sae = {w: installs_per_sae(s, w) for w in sae}
    ok = (all(within_order(got[n], probs[n]) for n in probs)
          and all(within_order(got_sae[w], sae[w]) for w in sae) and best < 1e-3)
    record(3, "steady state", ok,
           "Pr(13/14/15)=" + "/".join(f"{got[n]:.2g}" for n in probs)
           + ", installs/SAE(12/13/14)=" + "/".join(f"{got_sae[w]:.2g}" for w in sae)
           + f", {best * 1e6:.0f} us")


def _timed(fn):
    t = time.perf_counter()
    fn()
    return time.perf_counter() - t


# -- 4. relocation extrapolation ----------------------------------------

def test_c4_relocation():
    series = [installs_per_sae_with_relocation(2e8, n) for n in range(4)]
    exact = all(series[n] == 2e8 * 16384.0**n for n in range(4))
    expected = [2e8, 3.3e12, 5.4e16, 8.8e20]
    rounded = all(within(series[n], expected[n], 0.01) for n in range(4))
    quoted = [2e8, 3e12, 4e16, 7e20]
    factor2 = all(quoted[n] / 2 <= series[n] <= quoted[n] * 2 for n in range(4))
    modeled = installs_per_sae(steady_state(), 12)
    model_series = [installs_per_sae_with_relocation(modeled, n) for n in range(4)]
    model_ok = all(quoted[n] / 2 <= model_series[n] <= quoted[n] * 2 for n in range(4))
    record(4, "base x 16384^n", exact and rounded and factor2 and model_ok,
           " -> ".join(f"{x:.2g}" for x in series))


# -- 5. storage ---------------------------------------------------------

def test_c5_storage():
    base = storage_report(variant="baseline")
    m75 = storage_report(variant="mirage75")
    m50 = storage_report(variant="mirage50")
    ok = (base.total_bits == 17280 * 8192 and m75.total_bits == 20800 * 8192
          and m50.total_bits == 20256 * 8192
          and round(100 * m75.ratio) == 120 and round(100 * m50.ratio) == 117
          and m75.tag.total_bits == 3808 * 8192 and m75.data.total_bits == 16992 * 8192)
    record(5, "storage", ok, f"baseline {base.total_kib:g} KB, mirage75 {m75.total_kib:g} KB "
                             f"({m75.ratio:.0%}), mirage50 {m50.total_kib:g} KB ({m50.ratio:.0%})")


# -- 6. security properties ---------------------------------------------

def test_c6_mirage_no_sae():
    cache = MirageCache(CacheGeometry(), seed=6)
    rng = np.random.default_rng(np.random.SeedSequence(6, spawn_key=(9,)))
    total = {"misses": 0, "sae": 0, "gle": 0}
    chunk = 10_000_000
    for _ in range(10):
        st = cache.run_trace(rng.integers(0, 1 << 40, chunk, dtype=np.uint64))
        for k in total:
            total[k] += st[k]
    ok = total["misses"] >= 99_990_000 and total["sae"] == 0 and cache.validate_bijection().ok
    record(6, "mirage 1e8 installs", ok,
           f"{total['sae']} SAE, {total['gle']} GLE over {total['misses']} misses")


def test_c6_vway_adversarial():
    g = CacheGeometry()
    v = VWayCache(g, seed=6, identity_mapping=True)
    tr = generate_trace(TraceSpec(kind="adversarial", length=1_000_000, target_set=1234,
                                  sets=g.sets_per_skew), seed=6)
    warm = v.geometry.ways_per_skew
    v.run_trace(tr.addrs[:warm])
    st = v.run_trace(tr.addrs[warm:])
    frac = st["sae"] / st["misses"]
    record(6, "vway adversarial", frac >= 0.99,
           f"{frac:.4%} of {st['misses']} post-warmup misses were SAE")


def test_c6_random_skew_w14():
    st = run_trial(BallSimConfig(bucket_capacity=14, selection="random", throws=20_000_000,
                                 seed=614))
    rate = st.installs_per_spill
    record(6, "random-skew W=14", within(rate, 2600, 0.5),
           f"{rate:.0f} installs/spill vs 2600 ({st.spills} spills)")


# -- 7. invariants over long randomized sequences ------------------------

def test_c7_cache_invariants():
    g = CacheGeometry(sets_per_skew=32, skews=2, base_ways_per_skew=4, extra_ways_per_skew=1,
                      phys_addr_bits=30)
    cache = MirageCache(g, seed=7, max_relocations=3)
    rng = np.random.default_rng(7)
    n_ops = 1_000_000
    kinds = rng.random(n_ops)
    addrs = rng.integers(0, 2048, n_ops).tolist()
    sdids = rng.integers(0, 4, n_ops).tolist()
    resident = set()
    bad = 0
    for i in range(n_ops):
        line = (addrs[i], sdids[i])
        k = kinds[i]
        if k < 0.05:
            bad += cache.flush(*line) != (line in resident)
            resident.discard(line)
        elif k < 0.08:
            if resident:
                resident.remove(cache.global_evict()[1])
        else:
            out = cache.install(*line, write=k > 0.9)
            bad += (out.kind is OutcomeKind.HIT) != (line in resident)
            if out.evicted is not None:
                resident.remove(out.evicted)
            resident.add(line)
        if i % 50_000 == 0:
            bad += not cache.validate_bijection().ok
    counts = cache.set_valid_counts()
    ok_bij = cache.validate_bijection().ok
    ok_cap = counts.max() <= g.ways_per_skew and cache.occupancy <= g.data_entries
    ok_res = cache.resident() == sorted(resident)
    st = cache.stats()
    ok = bad == 0 and ok_bij and ok_cap and ok_res and st["relocations"] > 0
    record(7, "cache", ok, f"{n_ops:.0e} ops, {st['relocations']} relocations, "
                           f"{bad} mismatches, bijection={ok_bij}")


def test_c7_domain_isolation():
    cache = MirageCache(CacheGeometry(sets_per_skew=64, phys_addr_bits=30), seed=71)
    rng = np.random.default_rng(71)
    addrs = rng.integers(0, 1 << 10, 1_000_000).astype(np.uint64)
    owner = rng.integers(0, 2, 1_000_000).astype(np.uint8)
    cache.run_trace(addrs, owner)
    lines = set(cache.resident())
    # a lookup from the other domain hits only if that domain holds its own copy
    leaks = sum(cache.lookup(a, 1 - s).hit != ((a, 1 - s) in lines) for a, s in lines)
    shared = sum((a, 1 - s) in lines for a, s in lines) // 2
    record(7, "domain isolation", leaks == 0, f"{len(lines)} resident lines ({shared} held by both domains), "
                                             f"{leaks} cross-domain hits")


def test_c7_ball_conservation():
    ok = True
    details = []
    for kw in ({"relocation_attempts": 3, "bucket_capacity": 10},
               {"selection": "random", "bucket_capacity": 12},
               {"order": "insert-first", "bucket_capacity": 9}):
        sim = BallSim(BallSimConfig(buckets_per_skew=1024, balls=16384, seed=72, **kw))
        st = sim.run(1_000_000)
        try:
            sim.check()
        except AssertionError as e:
            ok = False
            details.append(str(e))
        ok &= sim.population == 16384 and st.throws == 1_000_000
    record(7, "ball conservation", ok, "; ".join(details) or "3 configs x 1e6 throws")


def test_c7_detailed_balance():
    rng = np.random.default_rng(73)
    worst = 0.0
    for _ in range(500):
        s = steady_state(10 ** rng.uniform(-9, -3), rng.uniform(2, 16), int(rng.integers(5, 40)))
        worst = max(worst, float(balance_residuals(s).max()))
    record(7, "detailed balance", worst < 1e-12, f"max residual {worst:.1e} over 500 chains")


# -- 8. oracle equivalence -----------------------------------------------

@pytest.mark.parametrize("sets,ways", [(1, 1), (1, 4), (2, 2), (4, 3), (8, 2), (16, 4)])
def test_c8_lru_oracle(sets, ways):
    rng = np.random.default_rng(sets * 31 + ways)
    addrs = rng.integers(0, sets * ways * 3, 10_000).tolist()
    sdids = rng.integers(0, 2, 10_000).tolist()
    fast = SetAssocLRU(sets, ways, line_address_bits=20)
    slow = BruteLRU(sets, ways)
    mismatches = 0
    for a, s in zip(addrs, sdids):
        out = fast.install(a, s)
        kind, victim = slow.access(a, s)
        mismatches += out.kind.value != kind
        mismatches += out.evicted != (None if victim is None else (victim[1], victim[0]))
    record(8, f"LRU {sets}x{ways}", mismatches == 0, f"{mismatches} mismatches in 1e4 steps")


def test_c8_occupancy_matches_analytic():
    sim = BallSim(BallSimConfig(bucket_capacity=14, seed=8))
    sim.run(2_000_000)
    st = sim.run(20_000_000)
    measured = st.occupancy_probs
    model = steady_state().probs
    checked, worst = [], 1.0
    for n, count in enumerate(st.occupancy_histogram):
        if count >= 100:
            ratio = measured[n] / model[n]
            worst = max(worst, ratio, 1 / ratio)
            checked.append(n)
    record(8, "occupancy", worst <= 2.0 and len(checked) >= 10,
           f"levels {checked[0]}..{checked[-1]} within factor {worst:.3f}")
