"""Cuckoo-style relocation of a resident tag into its alternative skew.

Only single-hop moves are modelled: a candidate drawn from the two conflicting
sets moves to the set it indexes in the other skew if that set has an invalid
tag. Candidates are drawn without replacement within one conflict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from ._rng import draw
from .indexing import skew_index

# counter slots shared with the cache kernels
C_RELOCATIONS = 5
C_RELOC_ATTEMPTS = 6
C_RELOC_FAILURES = 10


@dataclass(frozen=True)
class RelocationPolicy:
    max_attempts: int = 3

    def __post_init__(self):
        if self.max_attempts < 0:
            raise ValueError("max_attempts must be >= 0")


@dataclass(frozen=True)
class RelocationResult:
    freed: tuple[int, int, int] | None  # (skew, set, way) left invalid
    attempts: int


@nb.njit(cache=True)
def move_tag(src, dst, t_valid, t_dirty, t_key, t_fptr, set_inv, d_rptr, ways):
    t_valid[dst] = 1
    t_dirty[dst] = t_dirty[src]
    t_key[dst] = t_key[src]
    t_fptr[dst] = t_fptr[src]
    d_rptr[t_fptr[src]] = dst
    t_valid[src] = 0
    t_dirty[src] = 0
    t_key[src] = np.uint64(0xFFFFFFFFFFFFFFFF)
    set_inv[dst // ways] -= 1
    set_inv[src // ways] += 1


@nb.njit(cache=True)
def relocate(keys, params, t_valid, t_dirty, t_key, t_fptr, set_inv, d_rptr,
             counters, buf, cur, set0, set1, max_attempts, cands):
    """Try to free a slot in global sets ``set0`` (skew 0) / ``set1`` (skew 1).

    Returns ``(freed tag index or -1, attempts used)``.
    """
    nsets = params[1]
    ways = params[2]
    identity = params[6] != 0
    n = 0
    for gs in (set0, set1):
        for w in range(ways):
            t = gs * ways + w
            if t_valid[t]:
                cands[n] = t
                n += 1
    attempts = 0
    while attempts < max_attempts and attempts < n:
        j = attempts + draw(buf, cur, n - attempts)
        c = cands[j]
        cands[j] = cands[attempts]
        cands[attempts] = c
        attempts += 1
        counters[C_RELOC_ATTEMPTS] += 1
        skew = c // (nsets * ways)
        other = 1 - skew
        key = t_key[c]
        alt = other * nsets + skew_index(keys, other, key >> np.uint64(56),
                                         key & np.uint64(0xFFFFFFFFFFFFFF), nsets - 1, identity)
        if set_inv[alt] > 0:
            for w in range(ways):
                dst = alt * ways + w
                if not t_valid[dst]:
                    move_tag(c, dst, t_valid, t_dirty, t_key, t_fptr, set_inv, d_rptr, ways)
                    counters[C_RELOCATIONS] += 1
                    return c, attempts
        counters[C_RELOC_FAILURES] += 1
    return -1, attempts


def attempt_relocation(cache, set0: tuple[int, int], set1: tuple[int, int],
                       policy: RelocationPolicy | None = None) -> RelocationResult:
    """Run one relocation episode on ``cache`` for two full indexed sets.

    ``set0``/``set1`` are ``(skew, set index)`` pairs, one per skew.
    """
    policy = policy or RelocationPolicy()
    g = cache.geometry
    if g.skews != 2:
        raise ValueError("relocation needs exactly two skews")
    (s0, i0), (s1, i1) = sorted([tuple(set0), tuple(set1)])
    if (s0, s1) != (0, 1):
        raise ValueError("need one set from each skew")
    gs0, gs1 = i0, g.sets_per_skew + i1
    if cache.set_inv[gs0] or cache.set_inv[gs1]:
        raise ValueError("relocation only applies when both indexed sets are full")
    cache.rand.ensure(policy.max_attempts + 1)
    cands = np.empty(2 * g.ways_per_skew, dtype=np.int64)
    freed, used = relocate(cache.keys_array, cache.params, cache.t_valid, cache.t_dirty,
                           cache.t_key, cache.t_fptr, cache.set_inv,
                           cache.d_rptr, cache.counters, cache.rand.buf, cache.rand.cur,
                           gs0, gs1, policy.max_attempts, cands)
    if freed < 0:
        return RelocationResult(None, int(used))
    return RelocationResult(cache.tag_location(int(freed)), int(used))
