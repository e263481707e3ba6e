"""Buckets-and-balls Monte Carlo for spill (SAE) frequency.

Buckets stand for tag sets and balls for resident lines. Every throw removes
one ball chosen uniformly over all balls (a global eviction) and then inserts a
fresh ball with one uniform bucket choice per skew. A spill happens when the
placement policy finds no room; the spilled ball then replaces a random ball
of one of its chosen buckets and the global removal is rolled back, so the
population never changes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numba as nb
import numpy as np

from ._rng import RawStream, draw, draw_bit, seed_sequence

SELECTIONS = ("load-aware", "random")
TIE_BREAKS = ("random", "skew0")
ORDERS = ("insert-first", "remove-first")

# counter slots
N_THROWS, N_SPILLS, N_CONFLICTS, N_RELOC_ATTEMPTS, N_RELOCATIONS, N_SAMPLES, N_PHASE = range(7)
N_COUNTERS = 7


@dataclass(frozen=True)
class BallSimConfig:
    buckets_per_skew: int = 16384
    skews: int = 2
    balls: int = 262144
    bucket_capacity: int = 14
    selection: str = "load-aware"
    tie_break: str = "random"
    relocation_attempts: int = 0
    throws: int = 10_000_000
    seed: int = 0
    sample_every: int = 64
    order: str = "remove-first"

    def __post_init__(self):
        if self.buckets_per_skew < 1 or self.skews < 1:
            raise ValueError("need at least one bucket and one skew")
        if not 1 <= self.bucket_capacity <= 1024:
            raise ValueError("bucket_capacity must be in [1, 1024]")
        if self.balls < 0 or self.throws < 0:
            raise ValueError("balls and throws must be >= 0")
        if self.balls > self.total_capacity:
            raise ValueError(f"{self.balls} balls exceed total capacity {self.total_capacity}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}")
        if self.relocation_attempts < 0:
            raise ValueError("relocation_attempts must be >= 0")
        if self.relocation_attempts and (self.skews != 2 or self.selection != "load-aware"):
            raise ValueError("relocation needs two skews and load-aware selection")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if self.buckets_per_skew >= 1 << 31 or self.balls >= 1 << 31:
            raise ValueError("problem too large for 32-bit indices")

    @property
    def total_buckets(self) -> int:
        return self.buckets_per_skew * self.skews

    @property
    def total_capacity(self) -> int:
        return self.total_buckets * self.bucket_capacity

    @property
    def avg_load(self) -> float:
        return self.balls / self.total_buckets

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SpillStats:
    throws: int = 0
    spills: int = 0
    conflicts: int = 0
    relocation_attempts: int = 0
    relocations: int = 0
    samples: int = 0
    # summed bucket counts per load level over all samples
    occupancy_histogram: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))
    # conflicts resolved after k attempts (k = 1..n) plus a final slot for failures
    relocation_attempt_histogram: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))

    @property
    def installs_per_spill(self) -> float:
        return self.throws / self.spills if self.spills else math.inf

    @property
    def occupancy_probs(self) -> np.ndarray:
        """Time-averaged fraction of buckets at each load."""
        h = self.occupancy_histogram.astype(np.float64)
        total = h.sum()
        return h / total if total else h

    @property
    def relocation_failure_rate(self) -> float:
        """Fraction of relocation attempts that found the alternative bucket full."""
        if not self.relocation_attempts:
            return math.nan
        return 1.0 - self.relocations / self.relocation_attempts

    def merge(self, other: "SpillStats") -> "SpillStats":
        return SpillStats(
            throws=self.throws + other.throws,
            spills=self.spills + other.spills,
            conflicts=self.conflicts + other.conflicts,
            relocation_attempts=self.relocation_attempts + other.relocation_attempts,
            relocations=self.relocations + other.relocations,
            samples=self.samples + other.samples,
            occupancy_histogram=_add_padded(self.occupancy_histogram, other.occupancy_histogram),
            relocation_attempt_histogram=_add_padded(self.relocation_attempt_histogram,
                                                     other.relocation_attempt_histogram),
        )

    def to_dict(self) -> dict:
        ips = self.installs_per_spill
        return {
            "throws": self.throws,
            "spills": self.spills,
            "installs_per_spill": ips if math.isfinite(ips) else None,
            "conflicts": self.conflicts,
            "relocation_attempts": self.relocation_attempts,
            "relocations": self.relocations,
            "samples": self.samples,
            "occupancy_histogram": self.occupancy_histogram.tolist(),
            "relocation_attempt_histogram": self.relocation_attempt_histogram.tolist(),
        }


def _add_padded(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = max(len(a), len(b))
    out = np.zeros(n, dtype=np.int64)
    out[:len(a)] += a
    out[:len(b)] += b
    return out


# ----------------------------------------------------------------------
# kernels
# ----------------------------------------------------------------------


@nb.njit(cache=True, inline="always")
def _take(ball, b, load, members, pos, hist, cap):
    k = pos[ball]
    last = load[b] - 1
    other = members[b * cap + last]
    members[b * cap + k] = other
    pos[other] = k
    load[b] = last
    hist[last + 1] -= 1
    hist[last] += 1


@nb.njit(cache=True, inline="always")
def _put(ball, b, load, members, pos, ball_bucket, hist, cap):
    n = load[b]
    members[b * cap + n] = ball
    pos[ball] = n
    ball_bucket[ball] = b
    load[b] = n + 1
    hist[n] -= 1
    hist[n + 1] += 1


@nb.njit(cache=True)
def _choose(c, load, nskews, random_skew, tie_skew0, buf, cur):
    """Index into ``c`` of the bucket the policy picks."""
    if random_skew:
        return draw(buf, cur, nskews)
    best = 0
    ties = 1
    for s in range(1, nskews):
        if load[c[s]] < load[c[best]]:
            best = s
            ties = 1
        elif load[c[s]] == load[c[best]]:
            ties += 1
            if not tie_skew0:
                if ties == 2:
                    if draw_bit(buf, cur):
                        best = s
                elif draw(buf, cur, ties) == 0:
                    best = s
    return best


@nb.njit(cache=True)
def _target(c, load, nskews, cap, random_skew, tie_skew0, buf, cur):
    """Bucket the policy places into; it is full only when every candidate is."""
    t = c[_choose(c, load, nskews, random_skew, tie_skew0, buf, cur)]
    if random_skew and load[t] >= cap:
        # the other indexed bucket is used only when the chosen one is full
        for s in range(nskews):
            if load[c[s]] < cap:
                return c[s]
    return t


@nb.njit(cache=True)
def init_kernel(nballs, nb_per_skew, nskews, cap, random_skew, tie_skew0,
                load, members, pos, ball_bucket, choice, hist, buf, cur, start, margin):
    """Insert balls ``start..nballs``; a ball with no room in any candidate is redrawn."""
    c = np.empty(nskews, dtype=np.int64)
    i = start
    while i < nballs:
        if buf.shape[0] - cur[0] < margin:
            break
        for s in range(nskews):
            c[s] = s * nb_per_skew + draw(buf, cur, nb_per_skew)
        t = _target(c, load, nskews, cap, random_skew, tie_skew0, buf, cur)
        if load[t] >= cap:
            continue
        for s in range(nskews):
            choice[i, s] = c[s]
        _put(i, t, load, members, pos, ball_bucket, hist, cap)
        i += 1
    return i


@nb.njit(cache=True)
def _relocate(c, cap, max_reloc, load, members, pos, ball_bucket, choice, hist,
              reloc_hist, counters, cands, buf, cur):
    """Move one resident of the two full buckets ``c`` to its other bucket; -1 if all tries fail."""
    counters[N_CONFLICTS] += 1
    n = 0
    for s in range(2):
        for k in range(cap):
            cands[n] = members[c[s] * cap + k]
            n += 1
    tries = 0
    while tries < max_reloc and tries < n:
        r = tries + draw(buf, cur, n - tries)
        y = cands[r]
        cands[r] = cands[tries]
        cands[tries] = y
        tries += 1
        counters[N_RELOC_ATTEMPTS] += 1
        by = ball_bucket[y]
        alt = choice[y, 1] if by == choice[y, 0] else choice[y, 0]
        if load[alt] < cap:
            _take(y, by, load, members, pos, hist, cap)
            _put(y, alt, load, members, pos, ball_bucket, hist, cap)
            counters[N_RELOCATIONS] += 1
            reloc_hist[tries - 1] += 1
            return by
    reloc_hist[max_reloc] += 1
    return -1


@nb.njit(cache=True)
def throw_kernel(nballs, nb_per_skew, nskews, cap, random_skew, tie_skew0, max_reloc,
                 insert_first, sample_every, load, members, pos, ball_bucket, choice, hist,
                 hist_acc, reloc_hist, counters, cands, buf, cur, todo, margin):
    """Perform up to ``todo`` throws; stops early when the random buffer runs low.

    Ball arrays carry one spare id (``nballs``) used by the insert-first order.
    """
    c = np.empty(nskews, dtype=np.int64)
    done = 0
    while done < todo:
        if buf.shape[0] - cur[0] < margin:
            break
        done += 1
        counters[N_THROWS] += 1
        if nballs > 0:
            if insert_first:
                x = nballs
            else:
                x = draw(buf, cur, nballs)
                bx = ball_bucket[x]
                _take(x, bx, load, members, pos, hist, cap)
            for s in range(nskews):
                c[s] = s * nb_per_skew + draw(buf, cur, nb_per_skew)
            target = _target(c, load, nskews, cap, random_skew, tie_skew0, buf, cur)
            if load[target] >= cap and max_reloc > 0:
                freed = _relocate(c, cap, max_reloc, load, members, pos, ball_bucket, choice,
                                  hist, reloc_hist, counters, cands, buf, cur)
                if freed >= 0:
                    target = freed
            if load[target] < cap:
                for s in range(nskews):
                    choice[x, s] = c[s]
                _put(x, target, load, members, pos, ball_bucket, hist, cap)
                if insert_first:
                    # global eviction among all balls, the new one included
                    r = draw(buf, cur, nballs + 1)
                    _take(r, ball_bucket[r], load, members, pos, hist, cap)
                    if r != nballs:
                        # relabel the new ball as r so ids stay 0..nballs-1
                        b = ball_bucket[x]
                        members[b * cap + pos[x]] = r
                        pos[r] = pos[x]
                        ball_bucket[r] = b
                        for s in range(nskews):
                            choice[r, s] = choice[x, s]
            else:
                counters[N_SPILLS] += 1
                # the incoming ball takes over a random resident of one chosen
                # bucket; no global eviction happens on this throw
                vb = target
                if not random_skew:
                    vb = c[draw(buf, cur, nskews)]
                v = members[vb * cap + draw(buf, cur, cap)]
                for s in range(nskews):
                    choice[v, s] = c[s]
                if not insert_first:
                    _put(x, bx, load, members, pos, ball_bucket, hist, cap)
        counters[N_PHASE] += 1
        if counters[N_PHASE] == sample_every:
            counters[N_PHASE] = 0
            counters[N_SAMPLES] += 1
            for k in range(cap + 1):
                hist_acc[k] += hist[k]
    return done


@nb.njit(cache=True)
def lean_throw_kernel(nballs, nb_per_skew, nskews, cap, random_skew, tie_skew0, insert_first,
                      sample_every, load, ball_bucket, hist, hist_acc, counters, buf, cur,
                      todo, margin):
    """Same process as ``throw_kernel`` without relocation, tracking loads only."""
    c = np.empty(nskews, dtype=np.int64)
    done = 0
    while done < todo:
        if buf.shape[0] - cur[0] < margin:
            break
        done += 1
        counters[N_THROWS] += 1
        if nballs > 0:
            if not insert_first:
                x = draw(buf, cur, nballs)
                bx = ball_bucket[x]
                n = load[bx]
                load[bx] = n - 1
                hist[n] -= 1
                hist[n - 1] += 1
            for s in range(nskews):
                c[s] = s * nb_per_skew + draw(buf, cur, nb_per_skew)
            t = _target(c, load, nskews, cap, random_skew, tie_skew0, buf, cur)
            n = load[t]
            if n >= cap:
                counters[N_SPILLS] += 1
                if not insert_first:
                    n = load[bx]
                    load[bx] = n + 1
                    hist[n] -= 1
                    hist[n + 1] += 1
            else:
                load[t] = n + 1
                hist[n] -= 1
                hist[n + 1] += 1
                if insert_first:
                    # global eviction among all balls, the new one included
                    x = draw(buf, cur, nballs + 1)
                    bx = t if x == nballs else ball_bucket[x]
                    n = load[bx]
                    load[bx] = n - 1
                    hist[n] -= 1
                    hist[n - 1] += 1
                if x < nballs:
                    ball_bucket[x] = t
        counters[N_PHASE] += 1
        if counters[N_PHASE] == sample_every:
            counters[N_PHASE] = 0
            counters[N_SAMPLES] += 1
            for k in range(cap + 1):
                hist_acc[k] += hist[k]
    return done


@nb.njit(cache=True)
def max_load_kernel(nballs, nbuckets, nchoices, buf, cur, load):
    """Throw ``nballs`` without removal, each to the least loaded of ``nchoices`` random buckets."""
    worst = 0
    for _ in range(nballs):
        best = draw(buf, cur, nbuckets)
        for _k in range(1, nchoices):
            b = draw(buf, cur, nbuckets)
            if load[b] < load[best]:
                best = b
        load[best] += 1
        if load[best] > worst:
            worst = load[best]
    return worst


# ----------------------------------------------------------------------
# simulator
# ----------------------------------------------------------------------


class BallSim:
    """Stateful simulator; ``run`` can be called repeatedly to extend a trial."""

    chunk = 1 << 20

    def __init__(self, config: BallSimConfig, seed: int | np.random.SeedSequence | None = None):
        self.config = cfg = config
        self.rand = RawStream(seed_sequence(cfg.seed) if seed is None else seed)
        nbk, cap = cfg.total_buckets, cfg.bucket_capacity
        self.load = np.zeros(nbk, dtype=np.int16)
        self.members = np.full(nbk * cap, -1, dtype=np.int32)
        # one spare ball id for the insert-first order
        self.pos = np.zeros(cfg.balls + 1, dtype=np.int32)
        self.ball_bucket = np.zeros(cfg.balls + 1, dtype=np.int32)
        self.choice = np.zeros((cfg.balls + 1, cfg.skews), dtype=np.int32)
        self.hist = np.zeros(cap + 1, dtype=np.int64)
        self.hist[0] = nbk
        self.hist_acc = np.zeros(cap + 1, dtype=np.int64)
        self.reloc_hist = np.zeros(cfg.relocation_attempts + 1, dtype=np.int64)
        self.counters = np.zeros(N_COUNTERS, dtype=np.int64)
        self._cands = np.empty(2 * cap, dtype=np.int64)
        self._random = cfg.selection == "random"
        self._skew0 = cfg.tie_break == "skew0"
        self._margin = 4 + 2 * cfg.skews + cfg.relocation_attempts
        # without relocation only loads and ball positions matter
        self.lean = cfg.relocation_attempts == 0
        self._fill()
        if self.lean:
            self.members = self.pos = self.choice = None

    def _fill(self):
        cfg = self.config
        i = 0
        while i < cfg.balls:
            self.rand.ensure(self.chunk)
            i = init_kernel(cfg.balls, cfg.buckets_per_skew, cfg.skews, cfg.bucket_capacity,
                            self._random, self._skew0, self.load, self.members, self.pos,
                            self.ball_bucket, self.choice, self.hist, self.rand.buf,
                            self.rand.cur, i, self._margin)

    def run(self, throws: int) -> SpillStats:
        """Perform ``throws`` more throws and return the stats of just those throws."""
        cfg = self.config
        before = self.counters.copy()
        acc_before = self.hist_acc.copy()
        reloc_before = self.reloc_hist.copy()
        left = throws
        words = 4 + cfg.skews + cfg.relocation_attempts
        while left > 0:
            step = min(left, self.chunk)
            self.rand.ensure(step * words + self._margin)
            if self.lean:
                left -= lean_throw_kernel(
                    cfg.balls, cfg.buckets_per_skew, cfg.skews, cfg.bucket_capacity,
                    self._random, self._skew0, cfg.order == "insert-first", cfg.sample_every,
                    self.load, self.ball_bucket, self.hist, self.hist_acc, self.counters,
                    self.rand.buf, self.rand.cur, step, self._margin)
                continue
            left -= throw_kernel(cfg.balls, cfg.buckets_per_skew, cfg.skews,
                                 cfg.bucket_capacity, self._random, self._skew0,
                                 cfg.relocation_attempts, cfg.order == "insert-first",
                                 cfg.sample_every, self.load, self.members, self.pos,
                                 self.ball_bucket, self.choice, self.hist, self.hist_acc,
                                 self.reloc_hist, self.counters, self._cands,
                                 self.rand.buf, self.rand.cur, step, self._margin)
        d = self.counters - before
        return SpillStats(
            throws=int(d[N_THROWS]), spills=int(d[N_SPILLS]), conflicts=int(d[N_CONFLICTS]),
            relocation_attempts=int(d[N_RELOC_ATTEMPTS]), relocations=int(d[N_RELOCATIONS]),
            samples=int(d[N_SAMPLES]), occupancy_histogram=self.hist_acc - acc_before,
            relocation_attempt_histogram=self.reloc_hist - reloc_before)

    @property
    def population(self) -> int:
        return int(self.load.sum())

    def check(self) -> None:
        """Raise if the incremental bookkeeping disagrees with a recount."""
        cfg = self.config
        cap = cfg.bucket_capacity
        if self.load.max(initial=0) > cap:
            raise AssertionError("bucket over capacity")
        if self.population != cfg.balls:
            raise AssertionError("ball count changed")
        if not np.array_equal(np.bincount(self.load, minlength=cap + 1), self.hist):
            raise AssertionError("load histogram out of sync")
        if cfg.balls:
            bb = self.ball_bucket[:cfg.balls]
            if not np.array_equal(np.bincount(bb, minlength=cfg.total_buckets), self.load):
                raise AssertionError("ball-to-bucket map out of sync")
            if self.lean:
                return
            slots = bb.astype(np.int64) * cap + self.pos[:cfg.balls]
            if not np.array_equal(self.members[slots], np.arange(cfg.balls)):
                raise AssertionError("member lists out of sync")
            own = (self.choice[:cfg.balls] == bb[:, None]).any(axis=1)
            if not own.all():
                raise AssertionError("ball sits outside its candidate buckets")


def run_trial(config: BallSimConfig) -> SpillStats:
    return BallSim(config).run(config.throws)


def _trial(args) -> SpillStats:
    config, base_seed, i = args
    return BallSim(config, seed_sequence(base_seed, i)).run(config.throws)


def run_parallel(config: BallSimConfig, trials: int, base_seed: int | None = None,
                 workers: int | None = None) -> SpillStats:
    """Run ``trials`` independent trials of ``config.throws`` throws each and merge them.

    Trial ``i`` is seeded from child ``i`` of ``base_seed``, so trial 0 equals
    ``run_trial`` with ``seed=base_seed`` and results do not depend on scheduling.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    base_seed = config.seed if base_seed is None else base_seed
    jobs = [(config, base_seed, i) for i in range(trials)]
    workers = min(trials, workers or os.cpu_count() or 1)
    if workers == 1:
        results = [_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_trial, jobs))
    merged = SpillStats(occupancy_histogram=np.zeros(config.bucket_capacity + 1, dtype=np.int64),
                        relocation_attempt_histogram=np.zeros(config.relocation_attempts + 1,
                                                              dtype=np.int64))
    for r in results:
        merged = merged.merge(r)
    return merged


@dataclass(frozen=True)
class P0Estimate:
    p0: float
    stderr: float
    bucket_samples: int


def measure_p0(config: BallSimConfig, batches: int = 20) -> P0Estimate:
    """Time-averaged fraction of empty buckets with a batch-means standard error."""
    if config.balls == 0:
        return P0Estimate(1.0, 0.0, 0)
    sim = BallSim(config)
    per = max(config.sample_every, config.throws // batches)
    fracs = []
    samples = 0
    for _ in range(batches):
        st = sim.run(per)
        h = st.occupancy_histogram
        if h.sum():
            fracs.append(h[0] / h.sum())
            samples += int(h.sum())
    fracs = np.array(fracs)
    err = fracs.std(ddof=1) / math.sqrt(len(fracs)) if len(fracs) > 1 else math.nan
    return P0Estimate(float(fracs.mean()), float(err), samples)


def max_load(n: int, choices: int, seed: int = 0) -> int:
    """Max bucket load after ``n`` balls into ``n`` buckets, best of ``choices`` draws each."""
    if n < 1 or choices < 1:
        raise ValueError("need n >= 1 and choices >= 1")
    rng = RawStream(seed_sequence(seed, 0))
    rng.ensure(n * choices)
    load = np.zeros(n, dtype=np.int64)
    return int(max_load_kernel(n, n, choices, rng.buf, rng.cur, load))


def sweep(config: BallSimConfig, capacities, throws_for=None) -> dict[int, SpillStats]:
    """Run one trial per bucket capacity; ``throws_for(W)`` overrides ``config.throws``."""
    out = {}
    for w in capacities:
        cfg = replace(config, bucket_capacity=w,
                      throws=throws_for(w) if throws_for else config.throws)
        out[w] = run_trial(cfg)
    return out
