"""Random streams shared by the numba kernels.

Kernels never own generator state. Python keeps a PCG64 generator per model
instance and hands the kernels its raw output, viewed as 32-bit words, plus a
cursor; the kernels consume words sequentially and return early when the buffer
runs low. The consumed sequence is therefore independent of how the work is
chunked, which keeps every run reproducible from its seed.
"""

from __future__ import annotations

import numba as nb
import numpy as np


def seed_sequence(seed: int, stream: int = 0) -> np.random.SeedSequence:
    """Child ``stream`` of ``seed``; equal to ``SeedSequence(seed).spawn(n)[stream]``."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))


class RawStream:
    def __init__(self, seed: int | np.random.SeedSequence, block: int = 1 << 16):
        ss = seed if isinstance(seed, np.random.SeedSequence) else seed_sequence(seed)
        self._bitgen = np.random.PCG64(ss)
        self.block = block
        self.buf = np.empty(0, dtype=np.uint32)
        self.cur = np.zeros(1, dtype=np.int64)

    def ensure(self, n: int) -> None:
        """Guarantee at least ``n`` unread words after the cursor."""
        left = self.buf.shape[0] - int(self.cur[0])
        if left >= n:
            return
        fresh = self._bitgen.random_raw((max(self.block, n) + 1) // 2).view(np.uint32)
        if left:
            fresh = np.concatenate([self.buf[int(self.cur[0]):], fresh])
        self.buf = fresh
        self.cur[0] = 0

    def remaining(self) -> int:
        return self.buf.shape[0] - int(self.cur[0])


@nb.njit(cache=True, inline="always")
def draw(buf, cur, n):
    """Uniform integer in ``[0, n)`` by multiply-shift of the next word (n < 2**32)."""
    r = np.uint64(buf[cur[0]])
    cur[0] += 1
    return np.int64((r * np.uint64(n)) >> np.uint64(32))


@nb.njit(cache=True, inline="always")
def draw_bit(buf, cur):
    r = buf[cur[0]]
    cur[0] += 1
    return np.int64(r >> np.uint32(31))
