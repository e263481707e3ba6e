"""Steady-state occupancy of a bucket as a birth-death chain, and the numbers
derived from it: spill probability, installs per SAE, relocation
extrapolation, wall-clock conversion, and tag/data storage accounting.

Probabilities are carried as base-10 logarithms so the double-exponential
tail never underflows.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .geometry import CacheGeometry

log = logging.getLogger(__name__)

SECONDS_PER_YEAR = 3.1536e7
DEFAULT_P0 = 4e-6

SEED, FULL, TAIL = "seed", "full", "tail"


@dataclass(frozen=True)
class SteadyState:
    p0: float
    load_ratio: float
    switch_threshold: float
    log10_probs: np.ndarray  # log10 Pr(n=N), N = 0..n_max
    regimes: tuple[str, ...]  # which recursion produced each level

    @property
    def n_max(self) -> int:
        return len(self.log10_probs) - 1

    @property
    def probs(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.power(10.0, self.log10_probs)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.probs)

    @property
    def switch_level(self) -> int | None:
        """First level computed with the tail form."""
        for n, r in enumerate(self.regimes):
            if r == TAIL:
                return n
        return None

    def prob(self, n: int) -> float:
        return float(10.0 ** self.log10_probs[n])

    def to_dict(self) -> dict:
        return {
            "p0": self.p0,
            "load_ratio": self.load_ratio,
            "switch_threshold": self.switch_threshold,
            "log10_probs": self.log10_probs.tolist(),
            "regimes": list(self.regimes),
        }


def _pow10(x: float) -> float:
    return math.inf if x > 308.0 else 10.0 ** x


def _full_step(p: float, cum: float, n: int, load_ratio: float) -> float:
    return load_ratio / (n + 1) * (p * p + 2.0 * p * (1.0 - cum))


def _tail_step_log10(lp: float, n: int, load_ratio: float) -> float:
    return 2.0 * lp + math.log10(load_ratio / (n + 1))


def steady_state(p0: float = DEFAULT_P0, load_ratio: float = 8.0, n_max: int = 20,
                 switch_threshold: float = 0.01) -> SteadyState:
    """Occupancy distribution from the empty-bucket probability ``p0``.

    Level ``N+1`` follows from level ``N`` by balancing insertions into
    ``N``-ball buckets against removals from ``N+1``-ball buckets, using the
    running cumulative sum for ``Pr(n>N)``. Past the peak, once ``Pr(n=N)``
    drops below ``switch_threshold``, ``Pr(n>N)`` is neglected and the step
    reduces to squaring.
    """
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie in (0, 1)")
    if load_ratio <= 0:
        raise ValueError("load_ratio must be positive")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    lps = [math.log10(p0)]
    regimes = [SEED]
    cum = p0
    tail = False
    for n in range(n_max):
        lp = lps[-1]
        p = _pow10(lp)
        falling = n > 0 and lp < lps[-2]
        if not tail and falling and p < switch_threshold:
            tail = True
            log.debug("switch at N=%d: Pr=%.3g full-form next=%.3g tail-form next=%.3g",
                      n, p, _full_step(p, cum, n, load_ratio),
                      _pow10(_tail_step_log10(lp, n, load_ratio)))
        if not tail:
            nxt = _full_step(p, cum, n, load_ratio)
            if nxt > 0.0:
                lps.append(math.log10(nxt))
                regimes.append(FULL)
                cum += nxt
                continue
            # cumulative already at 1: only the tail form is meaningful
            tail = True
            log.debug("full form non-positive at N=%d, using tail form", n)
        lps.append(_tail_step_log10(lp, n, load_ratio))
        regimes.append(TAIL)
        cum += _pow10(lps[-1])
    return SteadyState(p0, float(load_ratio), switch_threshold, np.array(lps), tuple(regimes))


def balance_residuals(state: SteadyState) -> np.ndarray:
    """Relative mismatch between up- and down-transition rates at each level.

    The upward rate uses the ``Pr(n>N)`` that the recursion assumed at that
    level: one minus the running cumulative sum, or zero in the tail.
    """
    lps = state.log10_probs
    out = np.empty(state.n_max)
    cum = 0.0
    for n in range(state.n_max):
        p = _pow10(lps[n])
        cum += p
        down_log = lps[n + 1] + math.log10((n + 1) / state.load_ratio)
        if state.regimes[n + 1] == TAIL:
            up_log = 2.0 * lps[n]
            out[n] = abs(math.expm1((up_log - down_log) * math.log(10.0)))
        else:
            up = p * p + 2.0 * p * (1.0 - cum)
            down = 10.0 ** down_log
            out[n] = abs(up - down) / max(abs(up), abs(down))
    return out


def log10_spill_probability(state: SteadyState, capacity: int) -> float:
    if not 0 <= capacity <= state.n_max:
        raise ValueError(f"capacity must be within [0, {state.n_max}]")
    return 2.0 * float(state.log10_probs[capacity])


def spill_probability(state: SteadyState, capacity: int) -> float:
    """Chance that an install finds both candidate buckets full: ``Pr(n=W)^2``."""
    return 10.0 ** log10_spill_probability(state, capacity)


def log10_installs_per_sae(state: SteadyState, capacity: int) -> float:
    return -log10_spill_probability(state, capacity)


def installs_per_sae(state: SteadyState, capacity: int) -> float:
    return 10.0 ** log10_installs_per_sae(state, capacity)


def installs_per_sae_with_relocation(base: float, attempts: int, sets_per_skew: int = 16384) -> float:
    """Each failed attempt costs a factor ``p = 1/sets_per_skew``."""
    if attempts < 0:
        raise ValueError("attempts must be >= 0")
    if sets_per_skew < 1:
        raise ValueError("sets_per_skew must be >= 1")
    return base * float(sets_per_skew) ** attempts


@dataclass(frozen=True)
class Duration:
    seconds: float

    @property
    def years(self) -> float:
        return self.seconds / SECONDS_PER_YEAR

    def human(self) -> str:
        s = self.seconds
        if s < 1e-6:
            return f"{s * 1e9:.3g} ns"
        if s < 1e-3:
            return f"{s * 1e6:.3g} us"
        if s < 1:
            return f"{s * 1e3:.3g} ms"
        if s < 86400:
            return f"{s:.3g} s"
        if s < SECONDS_PER_YEAR:
            return f"{s / 86400:.3g} days"
        return f"{self.years:.3g} years"


def time_per_sae(installs: float, installs_per_second: float = 1e9) -> Duration:
    if installs_per_second <= 0:
        raise ValueError("installs_per_second must be positive")
    return Duration(installs / installs_per_second)


def _normalization_gap(log10_p0: float, load_ratio: float, n_max: int, threshold: float) -> float:
    return float(steady_state(10.0 ** log10_p0, load_ratio, n_max, threshold).probs.sum() - 1.0)


def calibrate_p0(load_ratio: float, n_max: int = 24, switch_threshold: float = 0.01,
                 lo: float = -30.0, hi: float = -0.5, step: float = 0.5) -> float:
    """Seed probability for which the recursion's distribution sums to one.

    The gap is neither monotone nor continuous in ``p0`` (the regime switch
    jumps), so a coarse log-grid scan picks the first bracket where it turns
    from negative to positive before the root is polished.
    """
    grid = np.arange(lo, hi + step / 2, step)
    gaps = [_normalization_gap(x, load_ratio, n_max, switch_threshold) for x in grid]
    for i in range(len(grid) - 1):
        if gaps[i] < 0 <= gaps[i + 1]:
            x = brentq(_normalization_gap, grid[i], grid[i + 1],
                       args=(load_ratio, n_max, switch_threshold), xtol=1e-12)
            return 10.0 ** x
    raise ValueError(f"no normalizing p0 found for load_ratio={load_ratio}")


@dataclass(frozen=True)
class AssociativityRow:
    associativity: int
    extra_ways_per_skew: int
    capacity: int
    p0: float
    log10_installs: float

    @property
    def installs(self) -> float:
        return 10.0 ** self.log10_installs


def associativity_table(associativities=(8, 16, 32), extra_ways=(1, 5, 6),
                        calibrate: bool = True) -> list[AssociativityRow]:
    """Installs per SAE for two-skew designs whose baseline has ``A`` ways.

    Each skew holds ``A/2`` base ways, so the mean bucket load is ``A/2``.
    With ``calibrate`` the seed comes from :func:`calibrate_p0`; otherwise
    the observed default is used for every row.
    """
    rows = []
    for a in associativities:
        load = a / 2
        p0 = calibrate_p0(load) if calibrate else DEFAULT_P0
        st = steady_state(p0, load, n_max=int(load) + max(extra_ways) + 2)
        for x in extra_ways:
            w = int(load) + x
            rows.append(AssociativityRow(a, x, w, p0, log10_installs_per_sae(st, w)))
    return rows


# ----------------------------------------------------------------------
# storage
# ----------------------------------------------------------------------


class StorageVariant(enum.Enum):
    BASELINE = "baseline"
    MIRAGE75 = "mirage75"
    MIRAGE50 = "mirage50"


STATUS_BITS = 2
SDID_BITS = 8


@dataclass(frozen=True)
class StoreBits:
    entries: int
    fields: dict  # name -> bits

    @property
    def bits_per_entry(self) -> int:
        return sum(self.fields.values())

    @property
    def total_bits(self) -> int:
        return self.entries * self.bits_per_entry

    @property
    def kib(self) -> float:
        return self.total_bits / 8 / 1024


@dataclass(frozen=True)
class StorageReport:
    variant: StorageVariant
    tag: StoreBits
    data: StoreBits
    baseline_total_bits: int

    @property
    def total_bits(self) -> int:
        return self.tag.total_bits + self.data.total_bits

    @property
    def total_kib(self) -> float:
        return self.total_bits / 8 / 1024

    @property
    def ratio(self) -> float:
        return self.total_bits / self.baseline_total_bits

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "tag_fields": dict(self.tag.fields),
            "tag_bits_per_entry": self.tag.bits_per_entry,
            "tag_entries": self.tag.entries,
            "tag_store_kb": self.tag.kib,
            "data_fields": dict(self.data.fields),
            "data_bits_per_entry": self.data.bits_per_entry,
            "data_entries": self.data.entries,
            "data_store_kb": self.data.kib,
            "total_kb": self.total_kib,
            "ratio_vs_baseline": self.ratio,
        }


def _baseline_stores(g: CacheGeometry) -> tuple[StoreBits, StoreBits]:
    # a set-associative cache with the same data capacity and set count
    ways = g.skews * g.base_ways_per_skew
    sets = g.data_entries // ways
    tag_bits = g.line_address_bits - int(math.log2(sets))
    tag = StoreBits(g.data_entries, {"tag": tag_bits, "status": STATUS_BITS})
    data = StoreBits(g.data_entries, {"data": g.line_bytes * 8})
    return tag, data


def storage_report(geometry: CacheGeometry | None = None,
                   variant: StorageVariant | str = StorageVariant.MIRAGE75) -> StorageReport:
    """Exact bit accounting; Mirage variants override the extra ways (75% or 50% of base)."""
    g = geometry or CacheGeometry()
    variant = StorageVariant(variant)
    b_tag, b_data = _baseline_stores(g)
    baseline_bits = b_tag.total_bits + b_data.total_bits
    if variant is StorageVariant.BASELINE:
        return StorageReport(variant, b_tag, b_data, baseline_bits)
    num = 3 if variant is StorageVariant.MIRAGE75 else 2
    if (g.base_ways_per_skew * num) % 4:
        raise ValueError("base ways per skew must split into the requested extra fraction")
    extra = g.base_ways_per_skew * num // 4
    mg = CacheGeometry(g.sets_per_skew, g.skews, g.base_ways_per_skew, extra, g.line_bytes,
                       g.phys_addr_bits)
    tag = StoreBits(mg.tag_entries, {"tag": mg.line_address_bits, "status": STATUS_BITS,
                                     "fptr": mg.fptr_bits, "sdid": SDID_BITS})
    data = StoreBits(mg.data_entries, {"data": mg.line_bytes * 8, "rptr": mg.rptr_bits})
    return StorageReport(variant, tag, data, baseline_bits)
