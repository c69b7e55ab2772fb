"""Measurement harness: build time, lookup latency, search-bound width, threads, Pareto front, CSV.

Lookups run inside compiled kernels that read the processor cycle counter
themselves, so interpreter overhead never lands inside a timed region. Warm
runs time whole batches; cold runs overwrite an eviction buffer before every
lookup and time only the lookup itself.
"""

from __future__ import annotations

import csv
import enum
import os
import statistics
import threading
import time
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Iterable, NamedTuple, Sequence

import numpy as np

from lil import _jit
from lil.core import ApproximateIndex, SearchStrategy, SortedDataset, avg_log2_bound, lower_bounds
from lil.datasets import LookupWorkload, checksum

DEFAULT_EVICT_MB = 64
DEFAULT_BATCH = 100
_MASK = (1 << 64) - 1

CSV_HEADER = (
    "dataset,index,config,size_bytes,build_ns,avg_lookup_ns,p50_ns,p99_ns,"
    "avg_log2_bound,threads,fence,cache_mode,checksum,violations"
).split(",")


class CacheMode(enum.Enum):
    WARM = "warm"
    COLD = "cold"

    @classmethod
    def parse(cls, name: str | CacheMode) -> CacheMode:
        if isinstance(name, CacheMode):
            return name
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown cache mode {name!r} (choose warm or cold)") from None


def eviction_mb_default() -> int:
    raw = os.environ.get("LIL_EVICT_MB")
    if raw is None:
        return DEFAULT_EVICT_MB
    try:
        mb = int(raw)
    except ValueError:
        raise ValueError(f"LIL_EVICT_MB must be an integer, got {raw!r}") from None
    if mb < 1:
        raise ValueError(f"LIL_EVICT_MB must be >= 1, got {mb}")
    return mb


@dataclass
class BenchConfig:
    index: str = "binary"
    strategy: SearchStrategy = SearchStrategy.BINARY
    repetitions: int = 5
    fence: bool = False
    cache_mode: CacheMode = CacheMode.WARM
    # None means LIL_EVICT_MB or the built-in default
    eviction_mb: int | None = None
    threads: int = 1
    batch: int = DEFAULT_BATCH

    def __post_init__(self):
        self.strategy = SearchStrategy.parse(self.strategy)
        self.cache_mode = CacheMode.parse(self.cache_mode)
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")
        if self.eviction_mb is not None and self.eviction_mb < 1:
            raise ValueError("eviction buffer must be >= 1 MiB")

    @property
    def evict_mb(self) -> int:
        return self.eviction_mb if self.eviction_mb is not None else eviction_mb_default()


@dataclass
class BenchResult:
    dataset: str
    index: str
    config: str
    size_bytes: int
    build_ns: int
    avg_lookup_ns: float
    p50_ns: float
    p99_ns: float
    avg_log2_bound: float
    threads: int
    fence: bool
    cache_mode: str
    checksum: int
    violations: int
    throughput_lookups_per_s: float = 0.0
    expected_checksum: int | None = field(default=None, compare=False)

    @property
    def checksum_ok(self) -> bool:
        return self.expected_checksum is None or self.checksum == self.expected_checksum


# ---------------------------------------------------------------- timing

_cycles_per_ns: float | None = None


def cycles_per_ns() -> float:
    """Cycle-counter ticks per nanosecond, measured once against the wall clock; 0 if no counter."""
    global _cycles_per_ns
    if _cycles_per_ns is None:
        c0, t0 = int(_jit.read_cycles()), time.perf_counter_ns()
        while time.perf_counter_ns() - t0 < 20_000_000:
            pass
        c1, t1 = int(_jit.read_cycles()), time.perf_counter_ns()
        _cycles_per_ns = max(0.0, (c1 - c0) / (t1 - t0))
    return _cycles_per_ns


class BuildMeasurement(NamedTuple):
    build_ns: int
    index: Any


def measure_build(builder: Callable[[SortedDataset], Any], d: SortedDataset, repetitions: int = 5) -> BuildMeasurement:
    """Median wall-clock build time over ``repetitions`` runs, plus the last index built."""
    times = []
    index = None
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        index = builder(d)
        times.append(time.perf_counter_ns() - t0)
    return BuildMeasurement(int(statistics.median(times)), index)


class _Run(NamedTuple):
    checksum: int
    # mean per-lookup latency of every batch
    batch_ns: list[float]
    # summed lookup time over all threads
    busy_ns: float
    wall_ns: int


def _worker(index: ApproximateIndex, d: SortedDataset, queries: np.ndarray, strategy: int, fenced: bool,
            evict: np.ndarray, batch: int, cpn: float, out: list, slot: int) -> None:
    total = 0
    busy = 0.0
    per_batch = []
    for s in range(0, queries.shape[0], batch):
        q = queries[s : s + batch]
        t0 = time.perf_counter_ns()
        got, spent, _ = index.run_queries(d.keys, d.payloads, q, strategy, fenced, evict)
        wall = time.perf_counter_ns() - t0
        total = (total + int(got)) & _MASK
        ns = int(spent) / cpn if cpn > 0 else wall
        busy += ns
        per_batch.append(ns / q.shape[0])
    out[slot] = (total, per_batch, busy)


def _run_threads(index, d, queries, threads, strategy, fenced, evict_words, batch) -> _Run:
    cpn = cycles_per_ns()
    chunks = np.array_split(queries, threads)
    out: list = [None] * threads
    bufs = [np.zeros(evict_words, np.uint64) for _ in range(threads)]
    workers = [
        threading.Thread(target=_worker, args=(index, d, c, int(strategy), fenced, b, batch, cpn, out, i))
        for i, (c, b) in enumerate(zip(chunks, bufs))
    ]
    t0 = time.perf_counter_ns()
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    wall = time.perf_counter_ns() - t0
    total = 0
    busy = 0.0
    per_batch: list[float] = []
    for got, pb, b in out:
        total = (total + got) & _MASK
        per_batch.extend(pb)
        busy += b
    return _Run(total, per_batch, busy, wall)


def _evict_words(cfg: BenchConfig) -> int:
    if cfg.cache_mode != CacheMode.COLD:
        return 0
    return cfg.evict_mb * (1 << 20) // 8


def measure_lookups(
    index: ApproximateIndex,
    d: SortedDataset,
    workload: LookupWorkload,
    cfg: BenchConfig,
    *,
    build_ns: int = 0,
    expected_checksum: int | None = None,
) -> BenchResult:
    queries = np.ascontiguousarray(workload.queries, dtype=np.uint64)
    lo, hi = index.lookup_many(queries)
    truth = lower_bounds(d, queries)
    violations = int(np.count_nonzero((truth < lo) | (truth >= hi)))
    if expected_checksum is None:
        expected_checksum = checksum(d, queries)

    words = _evict_words(cfg)
    # untimed pass so kernel loading and first-touch faults stay out of the numbers
    _run_threads(index, d, queries[: cfg.batch], 1, cfg.strategy, cfg.fence, min(words, 1 << 17), cfg.batch)

    runs = [_run_threads(index, d, queries, cfg.threads, cfg.strategy, cfg.fence, words, cfg.batch)
            for _ in range(cfg.repetitions)]
    sums = {r.checksum for r in runs}
    measured = runs[0].checksum if len(sums) == 1 else next(s for s in sums if s != expected_checksum)
    per_batch = np.array([x for r in runs for x in r.batch_ns])
    m = queries.shape[0]
    avg = statistics.median(r.busy_ns / m for r in runs)
    wall = statistics.median(r.wall_ns for r in runs)
    return BenchResult(
        dataset=d.name,
        index=getattr(index, "kind", type(index).__name__),
        config=index.describe(),
        size_bytes=int(index.size_bytes()),
        build_ns=int(build_ns),
        avg_lookup_ns=float(avg),
        p50_ns=float(np.percentile(per_batch, 50)),
        p99_ns=float(np.percentile(per_batch, 99)),
        avg_log2_bound=avg_log2_bound(lo, hi),
        threads=cfg.threads,
        fence=cfg.fence,
        cache_mode=cfg.cache_mode.value,
        checksum=measured,
        violations=violations,
        throughput_lookups_per_s=m * 1e9 / wall if wall > 0 else 0.0,
        expected_checksum=expected_checksum,
    )


class ThroughputResult(NamedTuple):
    lookups_per_s: float
    checksum: int


def run_multithreaded(
    index: ApproximateIndex,
    d: SortedDataset,
    workload: LookupWorkload,
    threads: int,
    strategy: SearchStrategy | str = SearchStrategy.BINARY,
    fence: bool = False,
) -> ThroughputResult:
    """Split the workload over ``threads`` workers sharing ``index``; lookups per wall-clock second."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    strategy = SearchStrategy.parse(strategy)
    q = np.ascontiguousarray(workload.queries, dtype=np.uint64)
    # one kernel call per thread keeps dispatch overhead out of the wall clock
    run = _run_threads(index, d, q, threads, strategy, fence, 0, -(-q.shape[0] // threads))
    return ThroughputResult(q.shape[0] * 1e9 / max(run.wall_ns, 1), run.checksum)


def bench_grid(
    d: SortedDataset,
    specs: Iterable[str],
    workload: LookupWorkload,
    cfg: BenchConfig,
    build: Callable[[str, SortedDataset], ApproximateIndex] | None = None,
) -> list[BenchResult]:
    from lil.registry import build_index

    build = build or build_index
    expected = checksum(d, workload)
    out = []
    for spec in specs:
        timing = measure_build(lambda data, s=spec: build(s, data), d, cfg.repetitions)
        out.append(measure_lookups(timing.index, d, workload, cfg, build_ns=timing.build_ns,
                                   expected_checksum=expected))
    return out


# ---------------------------------------------------------------- Pareto


def _coords(row: Any) -> tuple[float, float]:
    if isinstance(row, BenchResult):
        return float(row.size_bytes), float(row.avg_lookup_ns)
    return float(row[0]), float(row[1])


def _dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def pareto_front(rows: Sequence[Any]) -> list[Any]:
    """Rows that no other row strictly dominates on (size, latency), in input order.

    Rows are ``(size, latency, ...)`` tuples or BenchResult objects.
    """
    pts = [_coords(r) for r in rows]
    order = sorted(range(len(rows)), key=lambda i: pts[i])
    keep = [False] * len(rows)
    best_smaller = float("inf")  # lowest latency among strictly smaller sizes
    i = 0
    while i < len(order):
        j = i
        size = pts[order[i]][0]
        while j < len(order) and pts[order[j]][0] == size:
            j += 1
        group_min = pts[order[i]][1]
        for k in order[i:j]:
            lat = pts[k][1]
            keep[k] = lat == group_min and lat < best_smaller
        best_smaller = min(best_smaller, group_min)
        i = j
    return [r for r, k in zip(rows, keep) if k]


def dominated_pairs(rows: Sequence[Any]) -> list[tuple[int, int]]:
    """Exhaustive O(m^2) check: every (i, j) where row j strictly dominates row i."""
    pts = [_coords(r) for r in rows]
    return [(i, j) for i in range(len(pts)) for j in range(len(pts)) if i != j and _dominates(pts[j], pts[i])]


def checked_pareto_front(rows: Sequence[Any]) -> list[Any]:
    front = pareto_front(rows)
    bad = dominated_pairs(front)
    if bad:
        raise AssertionError(f"Pareto front keeps dominated rows: {bad}")
    return front


# ---------------------------------------------------------------- CSV


def _fmt(name: str, value: Any) -> str:
    if name == "fence":
        return "on" if value else "off"
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def write_csv(results: Iterable[BenchResult], path: str | os.PathLike) -> None:
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in results:
                w.writerow([_fmt(c, getattr(r, c)) for c in CSV_HEADER])
    except OSError as e:
        raise OSError(f"cannot write {os.fspath(path)}: {e.strerror or e}") from e


_TYPES = {f.name: f.type for f in fields(BenchResult)}


def _parse(name: str, text: str) -> Any:
    kind = _TYPES[name]
    if name == "fence":
        if text not in ("on", "off"):
            raise ValueError(f"fence must be on or off, got {text!r}")
        return text == "on"
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def read_csv(path: str | os.PathLike) -> list[BenchResult]:
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise OSError(f"cannot read {os.fspath(path)}: {e.strerror or e}") from e
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{os.fspath(path)}: missing or unexpected CSV header")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"{os.fspath(path)}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            out.append(BenchResult(**{c: _parse(c, v) for c, v in zip(CSV_HEADER, row)}))
        except ValueError as e:
            raise ValueError(f"{os.fspath(path)}:{lineno}: {e}") from None
    return out
