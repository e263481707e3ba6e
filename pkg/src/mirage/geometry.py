from __future__ import annotations

import math
from dataclasses import asdict, dataclass


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class CacheGeometry:
    """Shape of a skewed, decoupled tag/data cache.

    Defaults describe the 16 MB LLC: 2 skews x 16K sets x (8 base + 6 extra) ways,
    64-byte lines and a 46-bit physical address.
    """

    sets_per_skew: int = 16384
    skews: int = 2
    base_ways_per_skew: int = 8
    extra_ways_per_skew: int = 6
    line_bytes: int = 64
    phys_addr_bits: int = 46

    def __post_init__(self):
        if not _is_pow2(self.sets_per_skew):
            raise ValueError(f"sets_per_skew must be a power of two, got {self.sets_per_skew}")
        if self.skews < 1:
            raise ValueError("need at least one skew")
        if self.base_ways_per_skew < 1 or self.extra_ways_per_skew < 0:
            raise ValueError("base ways must be >= 1 and extra ways >= 0")
        if not _is_pow2(self.line_bytes):
            raise ValueError(f"line_bytes must be a power of two, got {self.line_bytes}")
        if self.line_address_bits > 55:
            raise ValueError("line address wider than 55 bits does not fit next to an 8-bit SDID")
        if self.line_address_bits < self.index_bits:
            raise ValueError("physical address too narrow for the set index")

    @property
    def ways_per_skew(self) -> int:
        return self.base_ways_per_skew + self.extra_ways_per_skew

    @property
    def data_entries(self) -> int:
        return self.skews * self.sets_per_skew * self.base_ways_per_skew

    @property
    def tag_entries(self) -> int:
        return self.skews * self.sets_per_skew * self.ways_per_skew

    @property
    def offset_bits(self) -> int:
        return int(math.log2(self.line_bytes))

    @property
    def index_bits(self) -> int:
        return int(math.log2(self.sets_per_skew))

    @property
    def line_address_bits(self) -> int:
        return self.phys_addr_bits - self.offset_bits

    @property
    def fptr_bits(self) -> int:
        return max(1, math.ceil(math.log2(self.data_entries)))

    @property
    def rptr_bits(self) -> int:
        return max(1, math.ceil(math.log2(self.tag_entries)))

    @property
    def capacity_bytes(self) -> int:
        return self.data_entries * self.line_bytes

    def to_dict(self) -> dict:
        return asdict(self)
