"""Functional model of a decoupled tag/data cache with skewed, keyed indexing.

The tag store is ``skews x sets_per_skew x ways_per_skew`` entries, each with a
forward pointer into a data store of ``skews x sets x base_ways`` entries; every
data entry keeps a reverse pointer back to its tag. A miss picks the indexed
set with more invalid tags, and the data entry comes from a free slot or from
a victim drawn uniformly from the whole data store (global eviction). Only
when every indexed set is full, and relocation (if enabled) fails, does the
model fall back to a set-associative eviction.

All state lives in flat numpy arrays; the per-access logic is compiled with
numba so that the same code serves single calls and 10^8-access traces.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numba as nb
import numpy as np

from ._rng import RawStream, draw
from .geometry import CacheGeometry
from .indexing import SkewIndexer, SkewKeySet, encode_block, skew_index
from .relocation import relocate

# params slots
P_SKEWS, P_SETS, P_WAYS, P_DATA, P_SELECT, P_TIE, P_IDENTITY, P_RELOC = range(8)
SELECT_LOAD_AWARE, SELECT_RANDOM = 0, 1
TIE_RANDOM, TIE_SKEW0 = 0, 1

# counters slots (5, 6, 10 are owned by the relocation kernel)
C_HITS, C_MISSES, C_GLE, C_SAE, C_FILL = 0, 1, 2, 3, 4
C_RELOCATIONS, C_RELOC_ATTEMPTS, C_WRITEBACKS, C_FLUSHES, C_NVALID, C_RELOC_FAILURES = 5, 6, 7, 8, 9, 10
N_COUNTERS = 12

K_HIT, K_GLE, K_SAE, K_FILL = 0, 1, 2, 3

# tag key of an invalid entry; real keys have line addresses below 2**55
INVALID_KEY = np.uint64(0xFFFFFFFFFFFFFFFF)
ADDR_FIELD = np.uint64((1 << 56) - 1)


class OutcomeKind(enum.Enum):
    HIT = "hit"
    GLOBAL_EVICTION = "gle"
    SET_ASSOCIATIVE_EVICTION = "sae"
    FILLED_INVALID_DATA = "fill"


_KIND = {K_HIT: OutcomeKind.HIT, K_GLE: OutcomeKind.GLOBAL_EVICTION,
         K_SAE: OutcomeKind.SET_ASSOCIATIVE_EVICTION, K_FILL: OutcomeKind.FILLED_INVALID_DATA}


@dataclass(frozen=True)
class InstallOutcome:
    kind: OutcomeKind
    relocations_used: int
    evicted: tuple[int, int] | None  # (line address, sdid)
    installed_set: tuple[int, int]  # (skew, set index)
    way: int
    data_index: int
    writeback: bool = False


@dataclass(frozen=True)
class LookupResult:
    hit: bool
    location: tuple[int, int, int] | None = None  # (skew, set, way)


@dataclass(frozen=True)
class BijectionReport:
    ok: bool
    diagnostics: str = ""

    def __bool__(self):
        return self.ok


# ----------------------------------------------------------------------
# kernels
# ----------------------------------------------------------------------


@nb.njit(cache=True)
def select_skew_kernel(inv, nskews, select, tie, buf, cur):
    """Pick the skew to install into given per-skew invalid counts ``inv``."""
    if select == SELECT_RANDOM:
        return draw(buf, cur, nskews)
    best = 0
    ties = 1
    for s in range(1, nskews):
        if inv[s] > inv[best]:
            best = s
            ties = 1
        elif inv[s] == inv[best]:
            ties += 1
            if tie == TIE_RANDOM and draw(buf, cur, ties) == 0:
                best = s
    return best


@nb.njit(cache=True)
def _index_sets(keys, params, sdid, addr, sets):
    nsets = params[P_SETS]
    identity = params[P_IDENTITY] != 0
    for s in range(params[P_SKEWS]):
        sets[s] = s * nsets + skew_index(keys, s, sdid, addr, nsets - 1, identity)


@nb.njit(cache=True)
def _find(params, t_key, sets, key):
    ways = params[P_WAYS]
    for s in range(params[P_SKEWS]):
        base = sets[s] * ways
        for w in range(ways):
            if t_key[base + w] == key:
                return base + w
    return -1


@nb.njit(cache=True)
def _data_take_free(d_perm, d_pos, counters, ndata, buf, cur):
    nv = counters[C_NVALID]
    j = nv + draw(buf, cur, ndata - nv)
    d = d_perm[j]
    other = d_perm[nv]
    d_perm[nv] = d
    d_pos[d] = nv
    d_perm[j] = other
    d_pos[other] = j
    counters[C_NVALID] = nv + 1
    return d


@nb.njit(cache=True)
def _data_release(d, d_perm, d_pos, counters):
    last = counters[C_NVALID] - 1
    p = d_pos[d]
    other = d_perm[last]
    d_perm[p] = other
    d_pos[other] = p
    d_perm[last] = d
    d_pos[d] = last
    counters[C_NVALID] = last


@nb.njit(cache=True)
def _drop_tag(t, t_valid, t_dirty, t_key, set_inv, counters, ways):
    """Invalidate tag ``t``; returns its key and whether it needs a writeback."""
    wb = t_dirty[t] != 0
    if wb:
        counters[C_WRITEBACKS] += 1
    key = t_key[t]
    t_valid[t] = 0
    t_dirty[t] = 0
    t_key[t] = INVALID_KEY
    set_inv[t // ways] += 1
    return key, wb


@nb.njit(cache=True)
def global_evict_kernel(params, t_valid, t_dirty, t_key, set_inv, d_valid, d_rptr,
                        d_perm, d_pos, counters, buf, cur, release):
    """Evict a data entry drawn uniformly from the valid ones (all of them once warm)."""
    j = draw(buf, cur, counters[C_NVALID])
    d = d_perm[j]
    key, wb = _drop_tag(d_rptr[d], t_valid, t_dirty, t_key, set_inv, counters, params[P_WAYS])
    if release:
        d_valid[d] = 0
        d_rptr[d] = -1
        _data_release(d, d_perm, d_pos, counters)
    return d, key, wb


@nb.njit(cache=True)
def access_kernel(keys, params, t_valid, t_dirty, t_key, t_fptr, set_inv,
                  d_valid, d_rptr, d_perm, d_pos, counters, buf, cur, scratch,
                  sdid, addr, write):
    """Look up ``(addr, sdid)`` and install it on a miss.

    Returns ``(kind, relocations, evicted key or INVALID_KEY, tag index, data index, writeback?)``.
    """
    nskews = params[P_SKEWS]
    ways = params[P_WAYS]
    sets = scratch[:nskews]
    inv = scratch[nskews:2 * nskews]
    cands = scratch[2 * nskews:]
    _index_sets(keys, params, sdid, addr, sets)
    key = encode_block(sdid, addr)
    t = _find(params, t_key, sets, key)
    if t >= 0:
        counters[C_HITS] += 1
        if write:
            t_dirty[t] = 1
        return K_HIT, 0, INVALID_KEY, t, np.int64(t_fptr[t]), False

    counters[C_MISSES] += 1
    for s in range(nskews):
        inv[s] = set_inv[sets[s]]
    chosen = select_skew_kernel(inv, nskews, params[P_SELECT], params[P_TIE], buf, cur)
    gset = sets[chosen]
    if params[P_SELECT] == SELECT_RANDOM and inv[chosen] == 0:
        # random selection falls back to another indexed set only when the
        # chosen one has no invalid tag; the SAE victim stays in the chosen set
        for s in range(nskews):
            if inv[s] > 0:
                gset = sets[s]
                break

    kind = K_FILL
    relocs = 0
    slot = -1
    evicted = INVALID_KEY
    wb = False
    d = np.int64(-1)
    if set_inv[gset] > 0:
        for w in range(ways):
            if not t_valid[gset * ways + w]:
                slot = gset * ways + w
                break
    else:
        if params[P_SELECT] == SELECT_LOAD_AWARE and params[P_RELOC] > 0 and nskews == 2:
            slot, relocs = relocate(keys, params, t_valid, t_dirty, t_key, t_fptr,
                                    set_inv, d_rptr, counters, buf, cur, sets[0], sets[1],
                                    params[P_RELOC], cands)
        if slot < 0:
            # set-associative eviction: random way of a random indexed set
            # (of the chosen set when skew selection is random)
            vset = sets[chosen]
            if params[P_SELECT] == SELECT_LOAD_AWARE:
                vset = sets[draw(buf, cur, nskews)]
            slot = vset * ways + draw(buf, cur, ways)
            d = np.int64(t_fptr[slot])
            evicted, wb = _drop_tag(slot, t_valid, t_dirty, t_key, set_inv, counters, ways)
            kind = K_SAE
            counters[C_SAE] += 1

    if kind != K_SAE:
        if counters[C_NVALID] < params[P_DATA]:
            d = np.int64(_data_take_free(d_perm, d_pos, counters, params[P_DATA], buf, cur))
            counters[C_FILL] += 1
        else:
            dd, evicted, wb = global_evict_kernel(params, t_valid, t_dirty, t_key, set_inv, d_valid,
                                                  d_rptr, d_perm, d_pos, counters, buf, cur, False)
            d = np.int64(dd)
            kind = K_GLE
            counters[C_GLE] += 1

    t_valid[slot] = 1
    t_dirty[slot] = 1 if write else 0
    t_key[slot] = key
    t_fptr[slot] = d
    set_inv[slot // ways] -= 1
    d_valid[d] = 1
    d_rptr[d] = slot
    return kind, relocs, evicted, np.int64(slot), d, wb


@nb.njit(cache=True)
def flush_kernel(keys, params, t_valid, t_dirty, t_key, t_fptr, set_inv,
                 d_valid, d_rptr, d_perm, d_pos, counters, scratch, sdid, addr):
    sets = scratch[:params[P_SKEWS]]
    _index_sets(keys, params, sdid, addr, sets)
    t = _find(params, t_key, sets, encode_block(sdid, addr))
    if t < 0:
        return False
    _drop_tag(t, t_valid, t_dirty, t_key, set_inv, counters, params[P_WAYS])
    d = t_fptr[t]
    d_valid[d] = 0
    d_rptr[d] = -1
    _data_release(d, d_perm, d_pos, counters)
    counters[C_FLUSHES] += 1
    return True


@nb.njit(cache=True)
def lookup_kernel(keys, params, t_key, scratch, sdid, addr):
    sets = scratch[:params[P_SKEWS]]
    _index_sets(keys, params, sdid, addr, sets)
    return _find(params, t_key, sets, encode_block(sdid, addr))


@nb.njit(cache=True)
def trace_kernel(keys, params, t_valid, t_dirty, t_key, t_fptr, set_inv,
                 d_valid, d_rptr, d_perm, d_pos, counters, buf, cur, scratch,
                 sdids, addrs, writes, start, margin):
    """Run accesses from ``start`` until the trace ends or the random buffer runs low."""
    n = addrs.shape[0]
    i = start
    while i < n:
        if buf.shape[0] - cur[0] < margin:
            break
        access_kernel(keys, params, t_valid, t_dirty, t_key, t_fptr, set_inv,
                      d_valid, d_rptr, d_perm, d_pos, counters, buf, cur, scratch,
                      sdids[i], addrs[i], writes[i] != 0)
        i += 1
    return i


@nb.njit(cache=True)
def bijection_kernel(params, t_valid, t_key, t_fptr, set_inv, d_valid, d_rptr, d_perm, d_pos,
                     counters):
    """0 if consistent, otherwise an error code; second value names the offending index."""
    ways = params[P_WAYS]
    ndata = params[P_DATA]
    ntags = t_valid.shape[0]
    nvt = 0
    for t in range(ntags):
        if t_valid[t]:
            nvt += 1
            f = t_fptr[t]
            if f < 0 or f >= ndata:
                return 1, t
            if not d_valid[f] or d_rptr[f] != t:
                return 2, t
        elif t_key[t] != INVALID_KEY:
            return 10, t
    nvd = 0
    for d in range(ndata):
        if d_valid[d]:
            nvd += 1
            r = d_rptr[d]
            if r < 0 or r >= ntags or not t_valid[r]:
                return 3, d
            if t_fptr[r] != d:
                return 4, d
    if nvt != nvd:
        return 5, nvt - nvd
    if nvd != counters[C_NVALID]:
        return 6, nvd
    for j in range(ndata):
        d = d_perm[j]
        if d_pos[d] != j:
            return 7, d
        if (j < nvd) != (d_valid[d] != 0):
            return 8, d
    for gs in range(set_inv.shape[0]):
        c = 0
        for w in range(ways):
            if not t_valid[gs * ways + w]:
                c += 1
        if c != set_inv[gs]:
            return 9, gs
    return 0, 0


_BIJECTION_ERRORS = {
    1: "tag {} has fptr outside the data store",
    2: "tag {} -> data fptr does not point back (rptr(fptr(t)) != t)",
    3: "data {} has rptr to an invalid or out-of-range tag",
    4: "data {} -> tag rptr does not point back (fptr(rptr(d)) != d)",
    5: "valid tag count differs from valid data count by {}",
    6: "free-list bookkeeping disagrees with {} valid data entries",
    7: "data permutation index broken at entry {}",
    8: "data entry {} on the wrong side of the free-list partition",
    9: "invalid-tag counter of set {} is stale",
    10: "invalid tag {} still carries a key",
}


# ----------------------------------------------------------------------
# model classes
# ----------------------------------------------------------------------


def default_max_relocations(geometry: CacheGeometry) -> int:
    return 3 if geometry.extra_ways_per_skew == 4 else 0


class MirageCache:
    """Mirage LLC: load-aware skew selection, global random eviction, optional relocation.

    ``selection`` is ``"load-aware"`` or ``"random"``; ``tie_break`` is
    ``"random"`` or ``"skew0"``. ``identity_mapping`` replaces the keyed index
    with the low address bits (used to model an attacker who knows the mapping).
    """

    name = "mirage"

    def __init__(self, geometry: CacheGeometry | None = None, seed: int = 0, *,
                 selection: str = "load-aware", tie_break: str = "random",
                 max_relocations: int | None = None, identity_mapping: bool = False,
                 keys: SkewKeySet | None = None):
        self.geometry = g = geometry or CacheGeometry()
        if selection not in ("load-aware", "random"):
            raise ValueError(f"unknown selection policy {selection!r}")
        if tie_break not in ("random", "skew0"):
            raise ValueError(f"unknown tie-break {tie_break!r}")
        if max_relocations is None:
            max_relocations = default_max_relocations(g)
        if max_relocations < 0:
            raise ValueError("max_relocations must be >= 0")
        if max_relocations and g.skews != 2:
            raise ValueError("relocation needs exactly two skews")
        self.seed = seed
        self.selection = selection
        self.tie_break = tie_break
        self.max_relocations = max_relocations
        self.keys = keys or SkewKeySet.from_seed(seed, g.skews)
        if len(self.keys) != g.skews:
            raise ValueError("one key per skew required")
        self.indexer = SkewIndexer(self.keys, g.sets_per_skew, identity=identity_mapping)
        self.keys_array = self.indexer.key_array
        self.params = np.array([g.skews, g.sets_per_skew, g.ways_per_skew, g.data_entries,
                                SELECT_RANDOM if selection == "random" else SELECT_LOAD_AWARE,
                                TIE_SKEW0 if tie_break == "skew0" else TIE_RANDOM,
                                int(identity_mapping), max_relocations], dtype=np.int64)
        ntags = g.tag_entries
        self.t_valid = np.zeros(ntags, dtype=np.uint8)
        self.t_dirty = np.zeros(ntags, dtype=np.uint8)
        self.t_key = np.full(ntags, INVALID_KEY, dtype=np.uint64)
        self.t_fptr = np.full(ntags, -1, dtype=np.int32)
        self.set_inv = np.full(g.skews * g.sets_per_skew, g.ways_per_skew, dtype=np.int32)
        self.d_valid = np.zeros(g.data_entries, dtype=np.uint8)
        self.d_rptr = np.full(g.data_entries, -1, dtype=np.int32)
        self.d_perm = np.arange(g.data_entries, dtype=np.int32)
        self.d_pos = np.arange(g.data_entries, dtype=np.int32)
        self.counters = np.zeros(N_COUNTERS, dtype=np.int64)
        self.rand = RawStream(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
        self._scratch = np.empty(2 * g.skews + 2 * g.ways_per_skew, dtype=np.int64)
        self._margin = 4 + g.skews + max_relocations

    # -- helpers -------------------------------------------------------

    def _state(self):
        return (self.keys_array, self.params, self.t_valid, self.t_dirty, self.t_key,
                self.t_fptr, self.set_inv, self.d_valid, self.d_rptr, self.d_perm, self.d_pos,
                self.counters)

    def tag_location(self, t: int) -> tuple[int, int, int]:
        g = self.geometry
        gs, way = divmod(t, g.ways_per_skew)
        skew, idx = divmod(gs, g.sets_per_skew)
        return skew, idx, way

    def _check(self, addr: int, sdid: int):
        if not 0 <= sdid < 256:
            raise ValueError(f"sdid {sdid} outside [0, 256)")
        if not 0 <= addr < (1 << self.geometry.line_address_bits):
            raise ValueError(f"line address {addr:#x} wider than {self.geometry.line_address_bits} bits")

    def indexed_sets(self, addr: int, sdid: int = 0) -> list[tuple[int, int]]:
        return [(s, self.indexer.derive_index(s, sdid, addr)) for s in range(self.geometry.skews)]

    # -- operations ----------------------------------------------------

    def lookup(self, addr: int, sdid: int = 0) -> LookupResult:
        self._check(addr, sdid)
        t = lookup_kernel(self.keys_array, self.params, self.t_key, self._scratch, np.uint8(sdid), np.uint64(addr))
        if t < 0:
            return LookupResult(False)
        return LookupResult(True, self.tag_location(int(t)))

    def install(self, addr: int, sdid: int = 0, *, write: bool = False) -> InstallOutcome:
        """Access ``(addr, sdid)``; on a miss the line is installed.

        ``write=True`` marks the line dirty (on a hit or on install).
        """
        self._check(addr, sdid)
        self.rand.ensure(self._margin)
        kind, relocs, evicted, t, d, wb = access_kernel(
            *self._state(), self.rand.buf, self.rand.cur, self._scratch,
            np.uint8(sdid), np.uint64(addr), write)
        skew, idx, way = self.tag_location(int(t))
        return InstallOutcome(
            kind=_KIND[kind], relocations_used=int(relocs),
            evicted=_split_key(evicted),
            installed_set=(skew, idx), way=way, data_index=int(d), writeback=bool(wb))

    access = install

    def write(self, addr: int, sdid: int = 0) -> InstallOutcome:
        return self.install(addr, sdid, write=True)

    def flush(self, addr: int, sdid: int = 0) -> bool:
        self._check(addr, sdid)
        return bool(flush_kernel(*self._state(), self._scratch, np.uint8(sdid), np.uint64(addr)))

    def global_evict(self) -> tuple[int, tuple[int, int]]:
        """Evict a uniformly random resident data entry; returns ``(data index, (addr, sdid))``."""
        if self.counters[C_NVALID] == 0:
            raise ValueError("global eviction from an empty cache")
        self.rand.ensure(1)
        d, key, _ = global_evict_kernel(
            self.params, self.t_valid, self.t_dirty, self.t_key, self.set_inv,
            self.d_valid, self.d_rptr, self.d_perm, self.d_pos, self.counters,
            self.rand.buf, self.rand.cur, True)
        return int(d), _split_key(key)

    def run_trace(self, addrs, sdids=0, writes=None) -> dict:
        """Feed a whole trace through the kernel; returns the counter deltas."""
        addrs = np.ascontiguousarray(addrs, dtype=np.uint64)
        if addrs.size and int(addrs.max()) >> self.geometry.line_address_bits:
            raise ValueError("trace holds addresses wider than the line-address width")
        sdids = np.ascontiguousarray(np.broadcast_to(np.asarray(sdids, dtype=np.uint8), addrs.shape))
        if writes is None:
            writes = np.zeros(addrs.shape, dtype=np.uint8)
        writes = np.ascontiguousarray(np.broadcast_to(np.asarray(writes, dtype=np.uint8), addrs.shape))
        before = self.counters.copy()
        i = 0
        n = addrs.shape[0]
        while i < n:
            self.rand.ensure(max(self._margin, min(n - i, 1 << 18) * 3))
            i = trace_kernel(*self._state(), self.rand.buf, self.rand.cur, self._scratch,
                             sdids, addrs, writes, i, self._margin)
        return self.stats(self.counters - before)

    # -- inspection ----------------------------------------------------

    def stats(self, counters: np.ndarray | None = None) -> dict:
        c = self.counters if counters is None else counters
        return {
            "hits": int(c[C_HITS]),
            "misses": int(c[C_MISSES]),
            "gle": int(c[C_GLE]),
            "sae": int(c[C_SAE]),
            "fills": int(c[C_FILL]),
            "relocations": int(c[C_RELOCATIONS]),
            "relocation_attempts": int(c[C_RELOC_ATTEMPTS]),
            "writebacks": int(c[C_WRITEBACKS]),
            "flushes": int(c[C_FLUSHES]),
        }

    @property
    def occupancy(self) -> int:
        return int(self.counters[C_NVALID])

    def resident(self) -> list[tuple[int, int]]:
        """Sorted ``(addr, sdid)`` pairs of every valid tag."""
        keys = self.t_key[self.t_valid.astype(bool)]
        return sorted(zip((keys & ADDR_FIELD).tolist(), (keys >> np.uint64(56)).tolist()))

    def set_valid_counts(self) -> np.ndarray:
        """Valid tags per set, shaped ``(skews, sets_per_skew)``."""
        g = self.geometry
        return (g.ways_per_skew - self.set_inv).reshape(g.skews, g.sets_per_skew)

    def validate_bijection(self) -> BijectionReport:
        code, where = bijection_kernel(self.params, self.t_valid, self.t_key, self.t_fptr, self.set_inv,
                                       self.d_valid, self.d_rptr, self.d_perm, self.d_pos,
                                       self.counters)
        if code == 0:
            return BijectionReport(True)
        return BijectionReport(False, _BIJECTION_ERRORS[int(code)].format(int(where)))


def _split_key(key) -> tuple[int, int] | None:
    key = int(key)
    if key == int(INVALID_KEY):
        return None
    return key & int(ADDR_FIELD), key >> 56


def select_skew(invalid_counts, rng: np.random.Generator | None = None, *,
                tie_break: str = "random") -> int:
    """Skew whose indexed set has the most invalid tags; ties per ``tie_break``."""
    inv = np.asarray(invalid_counts, dtype=np.int64)
    rng = rng or np.random.default_rng()
    stream = rng.bit_generator.random_raw(len(inv)).view(np.uint32)
    cur = np.zeros(1, dtype=np.int64)
    tie = TIE_SKEW0 if tie_break == "skew0" else TIE_RANDOM
    return int(select_skew_kernel(inv, len(inv), SELECT_LOAD_AWARE, tie, stream, cur))
