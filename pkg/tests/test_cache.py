import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirage.cache import MirageCache, OutcomeKind, select_skew
from mirage.geometry import CacheGeometry

TINY = CacheGeometry(sets_per_skew=8, skews=2, base_ways_per_skew=4, extra_ways_per_skew=2,
                     phys_addr_bits=22)
TIGHT = CacheGeometry(sets_per_skew=8, skews=2, base_ways_per_skew=4, extra_ways_per_skew=0,
                      phys_addr_bits=22)


def test_miss_then_hit():
    c = MirageCache(TINY, seed=1)
    out = c.install(0x123)
    assert out.kind is OutcomeKind.FILLED_INVALID_DATA
    assert out.installed_set in c.indexed_sets(0x123)
    hit = c.install(0x123)
    assert hit.kind is OutcomeKind.HIT
    assert c.lookup(0x123).location == (*out.installed_set, out.way)


def test_domains_hold_separate_copies():
    c = MirageCache(TINY, seed=1)
    c.install(0x55, sdid=1)
    assert not c.lookup(0x55, sdid=2).hit
    assert c.install(0x55, sdid=2).kind is not OutcomeKind.HIT
    assert c.lookup(0x55, 1).hit and c.lookup(0x55, 2).hit
    assert c.flush(0x55, 1)
    assert not c.lookup(0x55, 1).hit and c.lookup(0x55, 2).hit
    assert c.occupancy == 1


def test_flush_and_writeback():
    c = MirageCache(TINY, seed=1)
    c.install(7, write=True)
    assert c.flush(7)
    assert not c.flush(7)
    assert c.stats()["writebacks"] == 1
    assert c.validate_bijection()


def test_fills_before_global_evictions():
    c = MirageCache(TINY, seed=2)
    n = TINY.data_entries
    kinds = [c.install(a).kind for a in range(n)]
    assert kinds.count(OutcomeKind.FILLED_INVALID_DATA) + kinds.count(
        OutcomeKind.SET_ASSOCIATIVE_EVICTION) == n
    assert c.occupancy <= n
    c.run_trace(np.arange(n, 20 * n, dtype=np.uint64))
    assert c.occupancy == n
    st_ = c.stats()
    assert st_["gle"] + st_["sae"] + st_["fills"] == st_["misses"]


def test_global_eviction_is_spread_over_the_store():
    g = CacheGeometry(sets_per_skew=64, skews=2, base_ways_per_skew=4, extra_ways_per_skew=4,
                      phys_addr_bits=30)
    c = MirageCache(g, seed=3)
    c.run_trace(np.arange(g.data_entries, dtype=np.uint64))
    hits = np.zeros(g.data_entries)
    for _ in range(20 * g.data_entries):
        d, _ = c.global_evict()
        hits[d] += 1
        c.install(int(np.random.default_rng(len(hits) + int(hits.sum())).integers(1 << 20, 1 << 23)))
    assert (hits > 0).mean() > 0.99
    assert c.validate_bijection()


def test_global_evict_empty_raises():
    with pytest.raises(ValueError):
        MirageCache(TINY).global_evict()


def test_sae_victim_comes_from_an_indexed_set():
    c = MirageCache(TIGHT, seed=4, max_relocations=0)
    rng = np.random.default_rng(0)
    saw = 0
    for a in rng.integers(0, 1 << 16, 3000):
        sets = c.indexed_sets(int(a))
        before = {k: c.lookup(*k).location for k in c.resident()}
        out = c.install(int(a))
        if out.kind is OutcomeKind.SET_ASSOCIATIVE_EVICTION:
            saw += 1
            loc = before[out.evicted]
            assert (loc[0], loc[1]) in sets
    assert saw > 0


def test_relocation_avoids_saes():
    g = CacheGeometry(sets_per_skew=64, skews=2, base_ways_per_skew=4, extra_ways_per_skew=1,
                      phys_addr_bits=30)
    addrs = np.random.default_rng(5).integers(0, 1 << 20, 200_000).astype(np.uint64)
    plain = MirageCache(g, seed=5, max_relocations=0).run_trace(addrs)
    reloc_cache = MirageCache(g, seed=5, max_relocations=3)
    reloc = reloc_cache.run_trace(addrs)
    assert reloc["relocations"] > 0
    assert reloc["sae"] < plain["sae"]
    assert reloc_cache.validate_bijection()


def test_same_seed_same_run():
    addrs = np.random.default_rng(1).integers(0, 1 << 16, 20000)
    a = MirageCache(TIGHT, seed=9, max_relocations=2)
    b = MirageCache(TIGHT, seed=9, max_relocations=2)
    assert a.run_trace(addrs) == b.run_trace(addrs)
    assert a.resident() == b.resident()


def test_trace_and_single_calls_agree():
    addrs = np.random.default_rng(2).integers(0, 1 << 16, 5000)
    a = MirageCache(TIGHT, seed=3)
    b = MirageCache(TIGHT, seed=3)
    a.run_trace(addrs)
    for x in addrs:
        b.install(int(x))
    assert a.resident() == b.resident()
    assert a.stats() == b.stats()


def test_select_skew_load_aware():
    assert select_skew([1, 5]) == 1
    assert select_skew([4, 2]) == 0
    assert select_skew([3, 3], tie_break="skew0") == 0
    picks = {select_skew([3, 3], np.random.default_rng(i)) for i in range(40)}
    assert picks == {0, 1}


def test_address_range_checked():
    c = MirageCache(TINY)
    with pytest.raises(ValueError):
        c.install(1 << TINY.line_address_bits)
    with pytest.raises(ValueError):
        c.install(0, sdid=256)
    with pytest.raises(ValueError):
        c.run_trace(np.array([1 << 40], dtype=np.uint64))


def test_bad_options():
    with pytest.raises(ValueError):
        MirageCache(TINY, selection="lru")
    with pytest.raises(ValueError):
        MirageCache(CacheGeometry(skews=3), max_relocations=1)


ops = st.lists(st.tuples(st.sampled_from(["install", "write", "flush", "evict"]),
                         st.integers(0, 200), st.integers(0, 3)),
               min_size=1, max_size=400)


@given(ops, st.integers(0, 2**32), st.sampled_from(["load-aware", "random"]),
       st.integers(0, 3))
@settings(max_examples=60)
def test_against_residency_oracle(seq, seed, selection, relocs):
    if selection == "random":
        relocs = 0
    c = MirageCache(TIGHT, seed=seed, selection=selection, max_relocations=relocs)
    resident = set()
    for op, addr, sdid in seq:
        line = (addr, sdid)
        if op == "flush":
            assert c.flush(addr, sdid) == (line in resident)
            resident.discard(line)
        elif op == "evict":
            if resident:
                _, victim = c.global_evict()
                resident.remove(victim)
        else:
            out = c.install(addr, sdid, write=op == "write")
            assert (out.kind is OutcomeKind.HIT) == (line in resident)
            if out.evicted is not None:
                assert out.evicted != line
                resident.remove(out.evicted)
            resident.add(line)
            assert out.installed_set in c.indexed_sets(addr, sdid)
        assert c.occupancy == len(resident) <= TIGHT.data_entries
    assert c.resident() == sorted(resident)
    assert (c.set_valid_counts() <= TIGHT.ways_per_skew).all()
    rep = c.validate_bijection()
    assert rep, rep.diagnostics
