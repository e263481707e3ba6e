"""Comparison models exposing the same install/lookup/run_trace surface as MirageCache."""

from __future__ import annotations

import enum

import numba as nb
import numpy as np

from .cache import (ADDR_FIELD, C_FILL, C_HITS, C_MISSES, C_NVALID, C_SAE, C_WRITEBACKS,
                    INVALID_KEY, K_FILL, K_HIT, K_SAE, N_COUNTERS, InstallOutcome, LookupResult,
                    MirageCache, _KIND, _split_key)
from .geometry import CacheGeometry
from .indexing import SkewIndexer, SkewKeySet, encode_block, skew_index


class BaselineKind(enum.Enum):
    SET_ASSOC_LRU = "set-assoc"
    RANDOM_SKEW = "random-skew"
    VWAY = "vway"


@nb.njit(cache=True)
def lru_access(keys, set_mask, ways, identity, t_key, t_stamp, t_dirty, counters, clock,
               sdid, addr, write):
    """Returns ``(kind, evicted key or INVALID_KEY, slot, writeback?)``."""
    base = skew_index(keys, 0, sdid, addr, set_mask, identity) * ways
    key = encode_block(sdid, addr)
    clock[0] += 1
    for w in range(ways):
        if t_key[base + w] == key:
            t_stamp[base + w] = clock[0]
            if write:
                t_dirty[base + w] = 1
            counters[C_HITS] += 1
            return K_HIT, INVALID_KEY, base + w, False
    counters[C_MISSES] += 1
    victim = -1
    for w in range(ways):
        if t_key[base + w] == INVALID_KEY:
            victim = base + w
            break
    kind = K_FILL
    evicted = INVALID_KEY
    wb = False
    if victim < 0:
        victim = base
        for w in range(1, ways):
            if t_stamp[base + w] < t_stamp[victim]:
                victim = base + w
        evicted = t_key[victim]
        wb = t_dirty[victim] != 0
        if wb:
            counters[C_WRITEBACKS] += 1
        kind = K_SAE
        counters[C_SAE] += 1
    else:
        counters[C_FILL] += 1
        counters[C_NVALID] += 1
    t_key[victim] = key
    t_stamp[victim] = clock[0]
    t_dirty[victim] = 1 if write else 0
    return kind, evicted, victim, wb


@nb.njit(cache=True)
def lru_trace(keys, set_mask, ways, identity, t_key, t_stamp, t_dirty, counters, clock,
              sdids, addrs, writes):
    for i in range(addrs.shape[0]):
        lru_access(keys, set_mask, ways, identity, t_key, t_stamp, t_dirty, counters, clock,
                   sdids[i], addrs[i], writes[i] != 0)


class SetAssocLRU:
    """Classic set-associative cache with true LRU; every miss to a full set is an SAE.

    The set index is the low line-address bits unless ``keyed`` is set, in
    which case the keyed PRF of skew 0 is used.
    """

    name = "set-assoc"

    def __init__(self, sets: int = 16384, ways: int = 16, seed: int = 0, *, keyed: bool = False,
                 line_address_bits: int = 40):
        self.geometry = CacheGeometry(sets_per_skew=sets, skews=1, base_ways_per_skew=ways,
                                      extra_ways_per_skew=0,
                                      phys_addr_bits=line_address_bits + 6)
        self.sets, self.ways, self.keyed = sets, ways, keyed
        self.keys = SkewKeySet.from_seed(seed, 1)
        self.indexer = SkewIndexer(self.keys, sets, identity=not keyed)
        self.t_key = np.full(sets * ways, INVALID_KEY, dtype=np.uint64)
        self.t_stamp = np.zeros(sets * ways, dtype=np.int64)
        self.t_dirty = np.zeros(sets * ways, dtype=np.uint8)
        self.counters = np.zeros(N_COUNTERS, dtype=np.int64)
        self.clock = np.zeros(1, dtype=np.int64)

    @classmethod
    def from_geometry(cls, g: CacheGeometry, seed: int = 0, **kw) -> "SetAssocLRU":
        """Baseline with the same data capacity and set count as ``g``."""
        return cls(g.sets_per_skew, g.skews * g.base_ways_per_skew, seed,
                   line_address_bits=g.line_address_bits, **kw)

    def _args(self):
        return (self.indexer.key_array, self.sets - 1, self.ways, not self.keyed, self.t_key,
                self.t_stamp, self.t_dirty, self.counters, self.clock)

    def _check(self, addr: int, sdid: int):
        if not 0 <= sdid < 256:
            raise ValueError(f"sdid {sdid} outside [0, 256)")
        if not 0 <= addr < (1 << self.geometry.line_address_bits):
            raise ValueError(f"line address {addr:#x} out of range")

    def set_index(self, addr: int, sdid: int = 0) -> int:
        return self.indexer.derive_index(0, sdid, addr)

    def lookup(self, addr: int, sdid: int = 0) -> LookupResult:
        self._check(addr, sdid)
        base = self.set_index(addr, sdid) * self.ways
        key = (sdid << 56) | addr
        for w in range(self.ways):
            if int(self.t_key[base + w]) == key:
                return LookupResult(True, (0, base // self.ways, w))
        return LookupResult(False)

    def install(self, addr: int, sdid: int = 0, *, write: bool = False) -> InstallOutcome:
        self._check(addr, sdid)
        kind, evicted, slot, wb = lru_access(*self._args(), np.uint8(sdid), np.uint64(addr), write)
        s, w = divmod(int(slot), self.ways)
        return InstallOutcome(kind=_KIND[kind], relocations_used=0, evicted=_split_key(evicted),
                              installed_set=(0, s), way=w, data_index=int(slot),
                              writeback=bool(wb))

    access = install

    def run_trace(self, addrs, sdids=0, writes=None) -> dict:
        addrs = np.ascontiguousarray(addrs, dtype=np.uint64)
        if addrs.size and int(addrs.max()) >> self.geometry.line_address_bits:
            raise ValueError("trace holds addresses wider than the line-address width")
        sdids = np.ascontiguousarray(np.broadcast_to(np.asarray(sdids, dtype=np.uint8), addrs.shape))
        if writes is None:
            writes = np.zeros(addrs.shape, dtype=np.uint8)
        writes = np.ascontiguousarray(np.broadcast_to(np.asarray(writes, dtype=np.uint8), addrs.shape))
        before = self.counters.copy()
        lru_trace(*self._args(), sdids, addrs, writes)
        return self.stats(self.counters - before)

    def stats(self, counters: np.ndarray | None = None) -> dict:
        c = self.counters if counters is None else counters
        return {"hits": int(c[C_HITS]), "misses": int(c[C_MISSES]), "gle": 0,
                "sae": int(c[C_SAE]), "fills": int(c[C_FILL]), "relocations": 0,
                "relocation_attempts": 0, "writebacks": int(c[C_WRITEBACKS]), "flushes": 0}

    def resident(self) -> list[tuple[int, int]]:
        keys = self.t_key[self.t_key != INVALID_KEY]
        return sorted(zip((keys & ADDR_FIELD).tolist(), (keys >> np.uint64(56)).tolist()))


class RandomSkewCache(MirageCache):
    """Skewed cache that picks the install skew at random (other set only if the chosen one is full)."""

    name = "random-skew"

    def __init__(self, geometry: CacheGeometry | None = None, seed: int = 0, **kw):
        kw.setdefault("max_relocations", 0)
        super().__init__(geometry, seed, selection="random", **kw)


class VWayCache(MirageCache):
    """Tag/data decoupled cache with extra tags but a single, unskewed set index.

    Built from a Mirage geometry by folding all skews into one: same set count,
    same data capacity, ``skews x`` the ways per set.
    """

    name = "vway"

    def __init__(self, geometry: CacheGeometry | None = None, seed: int = 0, *,
                 identity_mapping: bool = False, **kw):
        g = geometry or CacheGeometry()
        if g.skews != 1:
            g = CacheGeometry(g.sets_per_skew, 1, g.skews * g.base_ways_per_skew,
                              g.skews * g.extra_ways_per_skew, g.line_bytes, g.phys_addr_bits)
        kw.setdefault("max_relocations", 0)
        super().__init__(g, seed, identity_mapping=identity_mapping, **kw)


def make_baseline(kind: BaselineKind | str, geometry: CacheGeometry | None = None, seed: int = 0,
                  **kw):
    kind = BaselineKind(kind)
    g = geometry or CacheGeometry()
    if kind is BaselineKind.SET_ASSOC_LRU:
        return SetAssocLRU.from_geometry(g, seed, **kw)
    if kind is BaselineKind.RANDOM_SKEW:
        return RandomSkewCache(g, seed, **kw)
    return VWayCache(g, seed, **kw)


def baseline_install(model, addr: int, sdid: int = 0, *, write: bool = False) -> InstallOutcome:
    return model.install(addr, sdid, write=write)
