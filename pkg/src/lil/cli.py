"""``lil`` command line: generate, build, validate, bench, pareto."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Sequence

from lil._blob import FormatError
from lil.bench import (
    BenchConfig,
    CacheMode,
    bench_grid,
    checked_pareto_front,
    measure_build,
    read_csv,
    write_csv,
)
from lil.core import SearchStrategy, validate_index
from lil.datasets import DatasetSpec, LookupMode, gen_lookups, generate, load_sosd, save_sosd
from lil.registry import IndexSpec, load_index

DEFAULT_SEED = 42
DEFAULT_WORKLOAD_SEED = 7


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        # one line, no usage dump
        self.exit(2, f"{self.prog}: error: {message}\n")


def _dataset_params(args) -> dict[str, Any]:
    out = {}
    for name in ("mu", "sigma", "scale", "outlier_count", "low_band_bits", "high_band_bits"):
        v = getattr(args, name, None)
        if v is not None:
            out[name] = v
    return out


def _add_dataset_flags(p: argparse.ArgumentParser, required_kind: bool) -> None:
    g = p.add_argument_group("synthetic dataset")
    g.add_argument("--kind", required=required_kind, help="uniform, lognormal or outlier_tail")
    g.add_argument("--n", type=int, help="number of keys")
    g.add_argument("--seed", type=int, help=f"generator seed (default {DEFAULT_SEED})")
    g.add_argument("--mu", type=float, help="lognormal location")
    g.add_argument("--sigma", type=float, help="lognormal shape")
    g.add_argument("--scale", type=float, help="lognormal multiplier applied before truncation to integers")
    g.add_argument("--outlier-count", type=int, help="outlier_tail: number of huge keys")
    g.add_argument("--low-band-bits", type=int, help="outlier_tail: regular keys lie below 2**bits")
    g.add_argument("--high-band-bits", type=int, help="outlier_tail: outliers lie at or above 2**bits")


def _add_workload_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("workload")
    g.add_argument("--queries", type=int, help="number of lookups (default 10000)")
    g.add_argument("--mode", help="existing (keys drawn from the data) or uniform (any value in key range)")
    g.add_argument("--workload-seed", type=int, help=f"lookup seed (default {DEFAULT_WORKLOAD_SEED})")


def _load_dataset(data: str | None, args, spec: dict | None = None):
    if data:
        return load_sosd(data)
    spec = dict(spec or {})
    if args.kind:
        spec["kind"] = args.kind
    if args.n is not None:
        spec["n"] = args.n
    if args.seed is not None:
        spec["seed"] = args.seed
    params = {**spec.get("params", {}), **_dataset_params(args)}
    if "kind" not in spec or "n" not in spec:
        raise ValueError("give --data FILE or a synthetic dataset (--kind and --n)")
    return generate(DatasetSpec(spec["kind"], int(spec["n"]), int(spec.get("seed", DEFAULT_SEED)), params))


def _workload(d, args, spec: dict | None = None):
    spec = spec or {}
    m = args.queries if args.queries is not None else int(spec.get("queries", 10_000))
    mode = args.mode or spec.get("mode", LookupMode.EXISTING_KEYS.value)
    seed = args.workload_seed if args.workload_seed is not None else int(spec.get("seed", DEFAULT_WORKLOAD_SEED))
    return gen_lookups(d, m, seed, mode)


# ---------------------------------------------------------------- subcommands


def cmd_generate(args) -> int:
    d = _load_dataset(None, args)
    save_sosd(d, args.output)
    print(f"wrote {d.n} keys to {args.output}")
    return 0


def cmd_build(args) -> int:
    d = _load_dataset(args.data, args)
    spec = IndexSpec.parse(args.index)
    timing = measure_build(spec.build, d, args.repetitions)
    blob = timing.index.to_bytes()
    with open(args.output, "wb") as f:
        f.write(blob)
    print(f"{spec} size_bytes={timing.index.size_bytes()} build_ns={timing.build_ns} -> {args.output}")
    return 0


def cmd_validate(args) -> int:
    d = _load_dataset(args.data, args)
    if args.index_file:
        with open(args.index_file, "rb") as f:
            index = load_index(f.read())
        if index.n != d.n:
            raise ValueError(f"index was built over {index.n} keys, dataset has {d.n}")
    elif args.index:
        index = IndexSpec.parse(args.index).build(d)
    else:
        raise ValueError("give --index-file FILE or --index SPEC")
    w = _workload(d, args)
    report = validate_index(index, d, w.queries)
    print(f"{report.violations} violations in {report.checked} queries")
    if report.violations:
        print(f"first violating key: {report.first_violation}")
        return 1
    return 0


def _read_manifest(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as f:
        try:
            m = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(m, dict):
        raise ValueError(f"{path}: manifest must be a JSON object")
    unknown = set(m) - {"dataset", "indexes", "workload", "bench", "output"}
    if unknown:
        raise ValueError(f"{path}: unknown manifest keys {', '.join(sorted(unknown))}")
    return m


def cmd_bench(args) -> int:
    m = _read_manifest(args.manifest)
    ds = m.get("dataset", {})
    data = args.data or ds.get("path")
    d = _load_dataset(data, args, None if data else ds)
    w = _workload(d, args, m.get("workload"))
    specs = args.index or m.get("indexes")
    if not specs:
        raise ValueError("no indexes to benchmark (manifest 'indexes' or --index)")
    b = dict(m.get("bench", {}))
    for flag, key in (("strategy", "strategy"), ("repetitions", "repetitions"), ("cache_mode", "cache_mode"),
                      ("evict_mb", "eviction_mb"), ("threads", "threads"), ("batch", "batch")):
        v = getattr(args, flag)
        if v is not None:
            b[key] = v
    if args.fence is not None:
        b["fence"] = args.fence
    unknown = set(b) - {"strategy", "repetitions", "fence", "cache_mode", "eviction_mb", "threads", "batch"}
    if unknown:
        raise ValueError(f"unknown bench settings {', '.join(sorted(unknown))}")
    cfg = BenchConfig(**b)
    output = args.output or m.get("output")
    if not output:
        raise ValueError("no output path (manifest 'output' or -o)")
    parsed = [IndexSpec.parse(s) for s in specs]
    results = bench_grid(d, [str(s) for s in parsed], w, cfg)
    write_csv(results, output)
    checked_pareto_front(results)
    bad = [r for r in results if r.violations or not r.checksum_ok]
    for r in results:
        print(f"{r.index:8s} {r.config:45s} size={r.size_bytes:<10d} lookup={r.avg_lookup_ns:9.1f}ns "
              f"log2={r.avg_log2_bound:6.2f} violations={r.violations} checksum={'ok' if r.checksum_ok else 'MISMATCH'}")
    print(f"wrote {len(results)} row{'' if len(results) == 1 else 's'} to {output}")
    return 1 if bad else 0


def cmd_pareto(args) -> int:
    rows = read_csv(args.input)
    front = checked_pareto_front(rows)
    write_csv(front, args.output)
    print(f"kept {len(front)} of {len(rows)} rows -> {args.output}")
    return 0


def _on_off(text: str) -> bool:
    if text.lower() in ("on", "true", "1", "yes"):
        return True
    if text.lower() in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lil", description="Learned index structures and a lookup benchmark harness.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset as a key file")
    _add_dataset_flags(g, required_kind=True)
    g.add_argument("-o", "--output", required=True, help="key file to write")
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("build", help="build one index and serialize it")
    b.add_argument("--data", help="key file (otherwise generate from the dataset flags)")
    _add_dataset_flags(b, required_kind=False)
    b.add_argument("--index", required=True, help="index spec, e.g. rs:epsilon=32,radix_bits=12")
    b.add_argument("--repetitions", type=int, default=1, help="timed builds; the median is reported")
    b.add_argument("-o", "--output", required=True, help="index blob to write")
    b.set_defaults(func=cmd_build)

    v = sub.add_parser("validate", help="count search bounds that miss the true lower bound")
    v.add_argument("--data", help="key file (otherwise generate from the dataset flags)")
    _add_dataset_flags(v, required_kind=False)
    v.add_argument("--index-file", help="serialized index from 'lil build'")
    v.add_argument("--index", help="index spec to build on the fly instead of --index-file")
    _add_workload_flags(v)
    v.set_defaults(func=cmd_validate)

    be = sub.add_parser("bench", help="benchmark an index grid and write a CSV")
    be.add_argument("--manifest", help="JSON run manifest; flags override its fields")
    be.add_argument("--data", help="key file, overriding the manifest dataset")
    _add_dataset_flags(be, required_kind=False)
    be.add_argument("--index", action="append", help="index spec; repeat for a grid (replaces the manifest list)")
    _add_workload_flags(be)
    be.add_argument("--strategy", choices=[s.name.lower() for s in SearchStrategy], help="last-mile search")
    be.add_argument("--repetitions", type=int, help="timed repetitions (default 5)")
    be.add_argument("--fence", type=_on_off, help="memory fence between lookups: on or off")
    be.add_argument("--cache-mode", choices=[c.value for c in CacheMode], help="warm or cold")
    be.add_argument("--evict-mb", type=int, help="cold-mode eviction buffer in MiB (default $LIL_EVICT_MB or 64)")
    be.add_argument("--threads", type=int, help="worker threads (default 1)")
    be.add_argument("--batch", type=int, help="lookups per timed batch (default 100)")
    be.add_argument("-o", "--output", help="CSV to write")
    be.set_defaults(func=cmd_bench)

    pa = sub.add_parser("pareto", help="keep only rows no other row beats on both size and latency")
    pa.add_argument("input", help="CSV from 'lil bench'")
    pa.add_argument("-o", "--output", required=True, help="filtered CSV to write")
    pa.set_defaults(func=cmd_pareto)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, FormatError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"lil: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
