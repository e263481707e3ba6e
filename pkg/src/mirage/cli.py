"""Command-line front end: ``mirage <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import analytic
from .geometry import CacheGeometry
from .harness import (ANALYTIC_COLUMNS, CONFIG_SCHEMA, ConfigError, ExperimentConfig,
                      ExperimentReport, ReplayParseError, TraceSpec, format_replay,
                      generate_trace, run_experiment, storage_experiment, write_atomic)

log = logging.getLogger("mirage")


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # registered on the main parser and again on each subparser, so the flags
    # may appear before or after the subcommand
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=d)
    parser.add_argument("--out", default=d, help="output file (default: stdout)")
    parser.add_argument("--format", choices=("json", "csv", "table"),
                        default=argparse.SUPPRESS if suppress else "table")
    parser.add_argument("--timing", action="store_true",
                        default=argparse.SUPPRESS if suppress else False,
                        help="record wall time in the report (breaks byte-identity)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def _geometry_flags(p):
    g = p.add_argument_group("geometry")
    g.add_argument("--sets-per-skew", type=int)
    g.add_argument("--skews", type=int)
    g.add_argument("--base-ways", type=int, dest="base_ways_per_skew")
    g.add_argument("--extra-ways", type=int, dest="extra_ways_per_skew")
    g.add_argument("--line-bytes", type=int)
    g.add_argument("--phys-addr-bits", type=int)


def _trace_flags(p):
    t = p.add_argument_group("trace")
    t.add_argument("--trace", dest="kind", choices=("uniform", "zipf", "adversarial", "replay"))
    t.add_argument("--length", type=int)
    t.add_argument("--address-bits", type=int, dest="address_space_bits")
    t.add_argument("--zipf-s", type=float)
    t.add_argument("--target-set", type=int)
    t.add_argument("--target-sets", type=int, dest="sets", help="set count of the targeted mapping")
    t.add_argument("--mapping", choices=("identity", "keyed"))
    t.add_argument("--key-seed", type=int)
    t.add_argument("--replay", dest="path")
    t.add_argument("--sdid-mode", choices=("fixed", "round-robin", "random"))
    t.add_argument("--sdid", type=int)
    t.add_argument("--domains", type=int)
    t.add_argument("--write-fraction", type=float)
    t.add_argument("--trace-seed", type=int, dest="trace_seed")


GEOMETRY_KEYS = ("sets_per_skew", "skews", "base_ways_per_skew", "extra_ways_per_skew",
                 "line_bytes", "phys_addr_bits")
TRACE_KEYS = ("kind", "length", "address_space_bits", "zipf_s", "target_set", "sets", "mapping",
              "key_seed", "path", "sdid_mode", "sdid", "domains", "write_fraction")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mirage", description="Randomized LLC security models")
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        _globals(p, suppress=True)
        return p

    p = add("cachesim", "run a trace through a cache model")
    p.add_argument("--model", choices=("mirage", "random-skew", "vway", "set-assoc"))
    _geometry_flags(p)
    m = p.add_argument_group("model options")
    m.add_argument("--selection", choices=("load-aware", "random"))
    m.add_argument("--tie-break", choices=("random", "skew0"))
    m.add_argument("--relocations", type=int, dest="max_relocations")
    m.add_argument("--identity-mapping", action="store_true", default=None)
    m.add_argument("--keyed", action="store_true", default=None,
                   help="set-assoc only: index through the keyed PRF")
    _trace_flags(p)

    p = add("ballsim", "buckets-and-balls spill measurement")
    p.add_argument("--capacity", type=int, nargs="+", help="ways per bucket (one run each)")
    p.add_argument("--throws", type=int)
    p.add_argument("--balls", type=int)
    p.add_argument("--buckets-per-skew", type=int)
    p.add_argument("--skews", type=int)
    p.add_argument("--selection", choices=("load-aware", "random"))
    p.add_argument("--tie-break", choices=("random", "skew0"))
    p.add_argument("--relocations", type=int, dest="relocation_attempts")
    p.add_argument("--order", choices=("remove-first", "insert-first"))
    p.add_argument("--sample-every", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)

    p = add("analytic", "steady-state occupancy and installs-per-SAE")
    p.add_argument("--p0", help="seed probability, or 'calibrate'")
    p.add_argument("--load-ratio", type=float)
    p.add_argument("--n-max", type=int)
    p.add_argument("--threshold", type=float, dest="switch_threshold")
    p.add_argument("--capacities", type=int, nargs="+")
    p.add_argument("--relocation-attempts", type=int, nargs="+")
    p.add_argument("--installs-per-second", type=float)
    p.add_argument("--table", choices=("sae", "occupancy", "relocation", "associativity"),
                   default="sae")

    p = add("storage", "tag/data store bit accounting")
    _geometry_flags(p)
    p.add_argument("--variant", nargs="+", choices=[v.value for v in analytic.StorageVariant])

    p = add("trace-gen", "write a synthetic trace in replay format")
    _trace_flags(p)

    add("run", "run the experiment described by --config as-is")
    add("schema", "print the JSON schema of experiment configs")
    return parser


def _load_doc(args) -> dict:
    if not args.config:
        return {}
    try:
        return json.loads(Path(args.config).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{args.config}: invalid JSON at line {e.lineno}: {e.msg}") from None


def _override(section: dict, args, keys) -> dict:
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            section[k] = v
    return section


def _apply_seed(doc: dict, args) -> dict:
    if args.seed is not None:
        doc["seed"] = args.seed
        doc.get("ballsim", {}).pop("seed", None)
    return doc


def _trace_doc(doc: dict, args) -> dict:
    t = _override(dict(doc.get("trace", {})), args, TRACE_KEYS)
    if getattr(args, "trace_seed", None) is not None:
        t["seed"] = args.trace_seed
    if t.get("path") and "kind" not in t:
        t["kind"] = "replay"
    return t


def _cachesim(args) -> ExperimentReport:
    doc = _load_doc(args)
    if args.model:
        doc["model"] = args.model
    doc.setdefault("model", "mirage")
    doc["geometry"] = _override(dict(doc.get("geometry", {})), args, GEOMETRY_KEYS)
    doc["model_options"] = _override(dict(doc.get("model_options", {})), args,
                                     ("selection", "tie_break", "max_relocations",
                                      "identity_mapping", "keyed"))
    doc["trace"] = _trace_doc(doc, args)
    return run_experiment(_apply_seed(doc, args), timing=args.timing)


def _ballsim(args) -> ExperimentReport:
    doc = _load_doc(args)
    doc["model"] = "ballsim"
    b = _override(dict(doc.get("ballsim", {})), args,
                  ("throws", "balls", "buckets_per_skew", "skews", "selection", "tie_break",
                   "relocation_attempts", "order", "sample_every", "trials", "workers"))
    if args.capacity:
        b["capacities"] = args.capacity
    doc["ballsim"] = b
    return run_experiment(_apply_seed(doc, args), timing=args.timing)


def _analytic(args) -> ExperimentReport:
    doc = _load_doc(args)
    doc["model"] = "analytic"
    a = _override(dict(doc.get("analytic", {})), args,
                  ("load_ratio", "n_max", "switch_threshold", "capacities",
                   "relocation_attempts", "installs_per_second"))
    if args.p0 is not None:
        if args.p0 == "calibrate":
            a["p0"] = None
        else:
            try:
                a["p0"] = float(args.p0)
            except ValueError:
                raise ConfigError(f"--p0 must be a number or 'calibrate', got {args.p0!r}") from None
    doc["analytic"] = a
    cfg = ExperimentConfig.from_dict(_apply_seed(doc, args))
    if args.table == "associativity":
        rows = [dict(asdict(r), installs=r.installs) for r in analytic.associativity_table()]
        cols = tuple(rows[0])
        return ExperimentReport("analytic", cfg.seed, {"table": "associativity"},
                                {"associativity": rows}, cols, rows)
    rep = run_experiment(cfg, timing=args.timing)
    if args.table == "occupancy":
        st = rep.results["steady_state"]
        rep.columns = ("n", "log10_prob", "regime")
        rep.rows = [{"n": n, "log10_prob": lp, "regime": rg}
                    for n, (lp, rg) in enumerate(zip(st["log10_probs"], st["regimes"]))]
    elif args.table == "relocation":
        rep.columns = ("attempts", "installs_per_sae")
        rep.rows = [{"attempts": int(k), "installs_per_sae": v}
                    for k, v in rep.results["relocation"].items()]
    else:
        rep.columns = ANALYTIC_COLUMNS
    return rep


def _storage(args) -> ExperimentReport:
    doc = _load_doc(args)
    geo = _override(dict(doc.get("geometry", {})), args, GEOMETRY_KEYS)
    try:
        g = CacheGeometry(**geo)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return storage_experiment(g, args.variant)


def _emit(text: str, out) -> None:
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "schema":
            _emit(json.dumps(CONFIG_SCHEMA, indent=2) + "\n", args.out)
            return 0
        if args.command == "trace-gen":
            doc = _load_doc(args)
            spec = TraceSpec(**_trace_doc(doc, args))
            trace = generate_trace(spec, args.seed if args.seed is not None else doc.get("seed", 0))
            _emit(format_replay(trace), args.out)
            return 0
        if args.command == "run":
            if not args.config:
                raise ConfigError("'run' needs --config")
            rep = run_experiment(_apply_seed(_load_doc(args), args), timing=args.timing)
        else:
            rep = {"cachesim": _cachesim, "ballsim": _ballsim, "analytic": _analytic,
                   "storage": _storage}[args.command](args)
    except (ConfigError, ReplayParseError, TypeError, ValueError) as e:
        print(f"mirage: error: {e}", file=sys.stderr)
        return 2
    _emit(rep.render(args.format), args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
