"""Experiment plumbing: traces, JSON configs, and reports."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import jsonschema
import numpy as np

from . import analytic
from ._rng import seed_sequence
from .ballsim import BallSimConfig, run_parallel
from .baselines import RandomSkewCache, SetAssocLRU, VWayCache
from .cache import MirageCache
from .geometry import CacheGeometry
from .indexing import SkewIndexer, SkewKeySet

SCHEMA_VERSION = 1
CACHE_MODELS = ("mirage", "random-skew", "vway", "set-assoc")
MODELS = CACHE_MODELS + ("ballsim", "analytic")
TRACE_KINDS = ("uniform", "zipf", "adversarial", "replay")
SDID_MODES = ("fixed", "round-robin", "random")

# trace seeds are a separate child of the experiment seed
TRACE_STREAM = 2


class ConfigError(ValueError):
    pass


class ReplayParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


# ----------------------------------------------------------------------
# traces
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class TraceSpec:
    kind: str = "uniform"
    length: int | None = 1_000_000
    address_space_bits: int = 40
    zipf_s: float = 1.0
    target_set: int = 0
    sets: int = 16384  # set count of the mapping the adversary targets
    mapping: str = "identity"  # or "keyed": search addresses under key_seed
    key_seed: int = 0
    path: str | None = None
    sdid_mode: str = "fixed"
    sdid: int = 0
    domains: int = 1
    write_fraction: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in TRACE_KINDS:
            raise ConfigError(f"trace kind must be one of {TRACE_KINDS}")
        if self.kind == "replay":
            if not self.path:
                raise ConfigError("replay traces need a path")
        elif self.length is None or self.length < 1:
            raise ConfigError("trace length must be >= 1")
        if not 1 <= self.address_space_bits <= 55:
            raise ConfigError("address_space_bits must be in [1, 55]")
        if self.zipf_s <= 0:
            raise ConfigError("zipf exponent must be > 0")
        if self.kind == "zipf" and self.address_space_bits > 26:
            raise ConfigError("zipf traces support at most 2^26 distinct addresses")
        if self.sets < 1 or self.sets & (self.sets - 1):
            raise ConfigError("sets must be a power of two")
        if not 0 <= self.target_set < self.sets:
            raise ConfigError("target_set out of range")
        if self.mapping not in ("identity", "keyed"):
            raise ConfigError("mapping must be 'identity' or 'keyed'")
        if self.sdid_mode not in SDID_MODES:
            raise ConfigError(f"sdid_mode must be one of {SDID_MODES}")
        if not 0 <= self.sdid < 256 or not 1 <= self.domains <= 256:
            raise ConfigError("sdid must be in [0, 256) and domains in [1, 256]")
        if not 0.0 <= self.write_fraction <= 1.0:
            raise ConfigError("write_fraction must be in [0, 1]")


@dataclass
class Trace:
    addrs: np.ndarray  # uint64 line addresses
    sdids: np.ndarray  # uint8
    writes: np.ndarray  # uint8

    def __len__(self):
        return len(self.addrs)


def _zipf_ranks(rng: np.random.Generator, n_items: int, s: float, length: int) -> np.ndarray:
    weights = np.arange(1, n_items + 1, dtype=np.float64) ** -s
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, rng.random(length), side="right"), n_items - 1)


def _scatter(ranks: np.ndarray, bits: int) -> np.ndarray:
    # odd multiplier: a bijection on [0, 2^bits) that spreads hot ranks over sets
    mask = np.uint64((1 << bits) - 1)
    return (ranks.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)) & mask


def _adversarial(spec: TraceSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.length
    step = np.uint64(spec.sets)
    if spec.mapping == "identity":
        tags = rng.permutation(min(n, (1 << spec.address_space_bits) // spec.sets))
        if len(tags) < n:
            raise ConfigError("address space too small for that many distinct conflicting lines")
        return tags.astype(np.uint64) * step + np.uint64(spec.target_set)
    # keyed: the adversary knows the key and filters candidates through the PRF
    indexer = SkewIndexer(SkewKeySet.from_seed(spec.key_seed, 1), spec.sets)
    found: list[np.ndarray] = []
    have = 0
    while have < n:
        cand = rng.integers(0, 1 << spec.address_space_bits, 1 << 18, dtype=np.uint64)
        hit = cand[indexer.derive_indices(0, spec.sdid, cand) == spec.target_set]
        found.append(hit)
        have += len(hit)
    return np.unique(np.concatenate(found))[:n] if n else np.empty(0, np.uint64)


def parse_replay(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``hex-line-address sdid`` records; ``#`` starts a comment."""
    addrs, sdids = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ReplayParseError(path, lineno, f"expected 'address sdid', got {line!r}")
            try:
                a = int(parts[0], 16)
            except ValueError:
                raise ReplayParseError(path, lineno, f"bad hex address {parts[0]!r}") from None
            try:
                s = int(parts[1], 10)
            except ValueError:
                raise ReplayParseError(path, lineno, f"bad sdid {parts[1]!r}") from None
            if not 0 <= a < 1 << 55:
                raise ReplayParseError(path, lineno, "address out of range")
            if not 0 <= s < 256:
                raise ReplayParseError(path, lineno, "sdid out of range")
            addrs.append(a)
            sdids.append(s)
    if not addrs:
        raise ReplayParseError(path, 0, "no records")
    return np.array(addrs, dtype=np.uint64), np.array(sdids, dtype=np.uint8)


def format_replay(trace: Trace) -> str:
    lines = ["# line-address sdid"]
    lines += [f"{a:x} {s}" for a, s in zip(trace.addrs.tolist(), trace.sdids.tolist())]
    return "\n".join(lines) + "\n"


def write_replay(trace: Trace, path) -> None:
    Path(path).write_text(format_replay(trace))


def generate_trace(spec: TraceSpec, seed: int = 0) -> Trace:
    """Deterministic for a fixed ``spec.seed``, falling back to ``seed`` when it is None."""
    rng = np.random.default_rng(seed_sequence(spec.seed if spec.seed is not None else seed,
                                              TRACE_STREAM))
    if spec.kind == "replay":
        addrs, sdids = parse_replay(spec.path)
        if spec.length is not None:
            addrs, sdids = addrs[:spec.length], sdids[:spec.length]
        n = len(addrs)
    else:
        n = spec.length
        if spec.kind == "uniform":
            addrs = rng.integers(0, 1 << spec.address_space_bits, n, dtype=np.uint64)
        elif spec.kind == "zipf":
            ranks = _zipf_ranks(rng, 1 << spec.address_space_bits, spec.zipf_s, n)
            addrs = _scatter(ranks, spec.address_space_bits)
        else:
            addrs = _adversarial(spec, rng)
        if spec.sdid_mode == "fixed":
            sdids = np.full(n, spec.sdid, dtype=np.uint8)
        elif spec.sdid_mode == "round-robin":
            sdids = (np.arange(n) % spec.domains).astype(np.uint8)
        else:
            sdids = rng.integers(0, spec.domains, n).astype(np.uint8)
    if spec.write_fraction > 0:
        writes = (rng.random(n) < spec.write_fraction).astype(np.uint8)
    else:
        writes = np.zeros(n, dtype=np.uint8)
    return Trace(np.ascontiguousarray(addrs, dtype=np.uint64), sdids, writes)


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------


def _props(cls, types: dict) -> dict:
    return {f.name: types.get(f.name, {}) for f in fields(cls)}


_INT = {"type": "integer"}
_NUM = {"type": "number"}
_STR = {"type": "string"}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "experiment configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "model": {"enum": list(MODELS)},
        "seed": {"type": "integer", "minimum": 0},
        "geometry": {
            "type": "object", "additionalProperties": False,
            "properties": {f.name: _INT for f in fields(CacheGeometry)},
        },
        "model_options": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "selection": {"enum": ["load-aware", "random"]},
                "tie_break": {"enum": ["random", "skew0"]},
                "max_relocations": {"type": ["integer", "null"], "minimum": 0},
                "identity_mapping": {"type": "boolean"},
                "keyed": {"type": "boolean"},
            },
        },
        "trace": {
            "type": "object", "additionalProperties": False,
            "properties": _props(TraceSpec, {
                "kind": {"enum": list(TRACE_KINDS)}, "length": {"type": ["integer", "null"]},
                "address_space_bits": _INT, "zipf_s": _NUM, "target_set": _INT, "sets": _INT,
                "mapping": {"enum": ["identity", "keyed"]}, "key_seed": _INT,
                "path": {"type": ["string", "null"]}, "sdid_mode": {"enum": list(SDID_MODES)},
                "sdid": _INT, "domains": _INT, "write_fraction": _NUM,
                "seed": {"type": ["integer", "null"]},
            }),
        },
        "ballsim": {
            "type": "object", "additionalProperties": False,
            "properties": dict(_props(BallSimConfig, {
                "selection": {"enum": ["load-aware", "random"]},
                "tie_break": {"enum": ["random", "skew0"]},
                "order": {"enum": ["remove-first", "insert-first"]},
                "buckets_per_skew": _INT, "skews": _INT, "balls": _INT, "bucket_capacity": _INT,
                "relocation_attempts": _INT, "throws": _INT, "seed": _INT, "sample_every": _INT,
            }), capacities={"type": "array", "items": _INT, "minItems": 1},
                trials={"type": "integer", "minimum": 1},
                workers={"type": ["integer", "null"], "minimum": 1}),
        },
        "analytic": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "p0": {"type": ["number", "null"]}, "load_ratio": _NUM, "n_max": _INT,
                "switch_threshold": _NUM,
                "capacities": {"type": "array", "items": _INT},
                "relocation_attempts": {"type": "array", "items": _INT},
                "sets_per_skew": _INT, "installs_per_second": _NUM,
            },
        },
    },
}


@dataclass(frozen=True)
class AnalyticSpec:
    p0: float | None = analytic.DEFAULT_P0  # None: calibrate so probabilities sum to one
    load_ratio: float = 8.0
    n_max: int = 20
    switch_threshold: float = 0.01
    capacities: tuple[int, ...] = (12, 13, 14)
    relocation_attempts: tuple[int, ...] = (0, 1, 2, 3)
    sets_per_skew: int = 16384
    installs_per_second: float = 1e9


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "mirage"
    seed: int = 0
    geometry: CacheGeometry = field(default_factory=CacheGeometry)
    model_options: dict = field(default_factory=dict)
    trace: TraceSpec = field(default_factory=TraceSpec)
    ballsim: BallSimConfig = field(default_factory=BallSimConfig)
    capacities: tuple[int, ...] | None = None
    trials: int = 1
    workers: int | None = None
    analytic: AnalyticSpec = field(default_factory=AnalyticSpec)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"{where}: {e.message}") from None
        seed = doc.get("seed", 0)
        try:
            geometry = CacheGeometry(**doc.get("geometry", {}))
            trace = TraceSpec(**doc.get("trace", {}))
            b = dict(doc.get("ballsim", {}))
            capacities = tuple(b.pop("capacities")) if "capacities" in b else None
            trials = b.pop("trials", 1)
            workers = b.pop("workers", None)
            b.setdefault("seed", seed)
            ballsim = BallSimConfig(**b)
            for w in capacities or ():
                replace(ballsim, bucket_capacity=w)  # validates each capacity up front
            a = dict(doc.get("analytic", {}))
            for k in ("capacities", "relocation_attempts"):
                if k in a:
                    a[k] = tuple(a[k])
            spec = AnalyticSpec(**a)
            if spec.p0 is not None and not 0 < spec.p0 < 1:
                raise ConfigError("analytic.p0 must lie in (0, 1)")
            if max(spec.capacities, default=0) > spec.n_max:
                raise ConfigError("analytic.capacities must not exceed n_max")
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        return cls(model=doc["model"], seed=seed, geometry=geometry,
                   model_options=dict(doc.get("model_options", {})), trace=trace,
                   ballsim=ballsim, capacities=capacities, trials=trials, workers=workers,
                   analytic=spec)

    def to_dict(self) -> dict:
        doc = {"schema_version": SCHEMA_VERSION, "model": self.model, "seed": self.seed}
        if self.model in CACHE_MODELS:
            doc["geometry"] = self.geometry.to_dict()
            doc["model_options"] = dict(self.model_options)
            doc["trace"] = asdict(self.trace)
        elif self.model == "ballsim":
            b = self.ballsim.to_dict()
            if self.capacities:
                b["capacities"] = list(self.capacities)
            b["trials"] = self.trials
            doc["ballsim"] = b
        else:
            a = asdict(self.analytic)
            a["capacities"] = list(a["capacities"])
            a["relocation_attempts"] = list(a["relocation_attempts"])
            doc["analytic"] = a
        return doc


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    return ExperimentConfig.from_dict(doc)


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------

CACHE_COLUMNS = ("model", "seed", "trace_length", "hits", "misses", "gle", "sae", "fills",
                 "relocations", "relocation_attempts", "writebacks", "installs_per_sae")
BALLSIM_COLUMNS = ("bucket_capacity", "selection", "throws", "spills", "installs_per_spill",
                   "relocation_attempts", "relocations")
ANALYTIC_COLUMNS = ("capacity", "log10_pr_full", "log10_installs_per_sae", "years_per_sae")


@dataclass
class ExperimentReport:
    model: str
    seed: int
    config: dict
    results: dict
    columns: tuple[str, ...]
    rows: list[dict]
    wall_time_s: float | None = None

    def to_dict(self) -> dict:
        doc = {"schema_version": SCHEMA_VERSION, "model": self.model, "seed": self.seed,
               "config": self.config, "results": self.results}
        if self.wall_time_s is not None:
            doc["wall_time_s"] = self.wall_time_s
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self.columns), lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k)) for k in self.columns})
        return buf.getvalue()

    def to_table(self) -> str:
        cells = [list(self.columns)] + [[_fmt(r.get(k)) for k in self.columns] for r in self.rows]
        widths = [max(len(c[i]) for c in cells) for i in range(len(self.columns))]
        lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        if fmt == "table":
            return self.to_table()
        raise ValueError(f"unknown format {fmt!r}")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.6g}"
    return str(v)


def build_cache_model(cfg: ExperimentConfig):
    opts = dict(cfg.model_options)
    if cfg.model == "set-assoc":
        keyed = opts.pop("keyed", False)
        if opts:
            raise ConfigError(f"set-assoc does not take options {sorted(opts)}")
        return SetAssocLRU.from_geometry(cfg.geometry, cfg.seed, keyed=keyed)
    if "keyed" in opts:
        raise ConfigError("'keyed' applies to the set-assoc model only")
    if cfg.model == "mirage":
        return MirageCache(cfg.geometry, cfg.seed, **opts)
    if cfg.model == "random-skew":
        opts.pop("selection", None)
        return RandomSkewCache(cfg.geometry, cfg.seed, **opts)
    return VWayCache(cfg.geometry, cfg.seed, **opts)


def _run_cache(cfg: ExperimentConfig) -> tuple[dict, list[dict]]:
    try:
        model = build_cache_model(cfg)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    trace = generate_trace(cfg.trace, cfg.seed)
    if len(trace) and int(trace.addrs.max()) >> model.geometry.line_address_bits:
        raise ConfigError("trace addresses are wider than the cache's line-address width")
    st = model.run_trace(trace.addrs, trace.sdids, trace.writes)
    st["trace_length"] = len(trace)
    st["installs_per_sae"] = st["misses"] / st["sae"] if st["sae"] else None
    assert st["hits"] + st["misses"] == len(trace)
    assert st["sae"] <= st["misses"]
    assert st["gle"] + st["sae"] + st["fills"] == st["misses"]
    row = dict(st, model=cfg.model, seed=cfg.seed)
    if row["installs_per_sae"] is None:
        row["installs_per_sae"] = math.inf
    return st, [row]


def _run_ballsim(cfg: ExperimentConfig) -> tuple[dict, list[dict]]:
    caps = cfg.capacities or (cfg.ballsim.bucket_capacity,)
    per = {}
    rows = []
    for w in caps:
        bcfg = replace(cfg.ballsim, bucket_capacity=w)
        st = run_parallel(bcfg, cfg.trials, bcfg.seed, cfg.workers)
        per[str(w)] = st.to_dict()
        rows.append({"bucket_capacity": w, "selection": bcfg.selection, "throws": st.throws,
                     "spills": st.spills, "installs_per_spill": st.installs_per_spill,
                     "relocation_attempts": st.relocation_attempts,
                     "relocations": st.relocations})
    return {"capacities": per}, rows


def _run_analytic(cfg: ExperimentConfig) -> tuple[dict, list[dict]]:
    a = cfg.analytic
    p0 = a.p0 if a.p0 is not None else analytic.calibrate_p0(a.load_ratio, a.n_max,
                                                            a.switch_threshold)
    st = analytic.steady_state(p0, a.load_ratio, a.n_max, a.switch_threshold)
    rows, sae = [], {}
    for w in a.capacities:
        li = analytic.log10_installs_per_sae(st, w)
        years = analytic.time_per_sae(10.0 ** min(li, 300), a.installs_per_second).years
        sae[str(w)] = {"log10_installs_per_sae": li, "years_per_sae": years}
        rows.append({"capacity": w, "log10_pr_full": float(st.log10_probs[w]),
                     "log10_installs_per_sae": li, "years_per_sae": years})
    reloc = {}
    if a.capacities:
        base = analytic.installs_per_sae(st, min(a.capacities))
        for n in a.relocation_attempts:
            reloc[str(n)] = analytic.installs_per_sae_with_relocation(base, n, a.sets_per_skew)
    results = {"p0": p0, "steady_state": st.to_dict(), "installs_per_sae": sae,
               "relocation": reloc,
               "balance_max_residual": float(analytic.balance_residuals(st).max())}
    return results, rows


def run_experiment(config: ExperimentConfig | dict | str | Path, *, timing: bool = False
                   ) -> ExperimentReport:
    """Run one experiment; raises ConfigError for bad configs before doing any work."""
    if isinstance(config, (str, Path)):
        config = load_config(config)
    elif isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    t0 = time.perf_counter()
    if config.model in CACHE_MODELS:
        results, rows = _run_cache(config)
        cols = CACHE_COLUMNS
    elif config.model == "ballsim":
        results, rows = _run_ballsim(config)
        cols = BALLSIM_COLUMNS
    else:
        results, rows = _run_analytic(config)
        cols = ANALYTIC_COLUMNS
    wall = time.perf_counter() - t0 if timing else None
    return ExperimentReport(config.model, config.seed, config.to_dict(), results, cols, rows, wall)


STORAGE_COLUMNS = ("variant", "tag_bits_per_entry", "tag_entries", "tag_store_kb",
                   "data_bits_per_entry", "data_entries", "data_store_kb", "total_kb",
                   "ratio_vs_baseline")


def storage_experiment(geometry: CacheGeometry | None = None, variants=None) -> ExperimentReport:
    g = geometry or CacheGeometry()
    variants = variants or [v.value for v in analytic.StorageVariant]
    rows = [analytic.storage_report(g, v).to_dict() for v in variants]
    results = {r["variant"]: r for r in rows}
    config = {"schema_version": SCHEMA_VERSION, "model": "storage", "geometry": g.to_dict(),
              "variants": list(variants)}
    return ExperimentReport("storage", 0, config, results, STORAGE_COLUMNS, rows)


def write_atomic(path, text: str) -> None:
    """Write via a temporary sibling so a failed run never leaves a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
