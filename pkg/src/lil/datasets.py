"""Synthetic key sets, lookup workloads, payloads and SOSD-style key files."""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from lil._blob import FormatError
from lil.core import SortedDataset, lower_bounds

FOOTER_MAGIC = b"LIP1"
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


class DatasetKind(enum.Enum):
    UNIFORM = "uniform"
    LOGNORMAL = "lognormal"
    OUTLIER_TAIL = "outlier_tail"

    @classmethod
    def parse(cls, name: str | DatasetKind) -> DatasetKind:
        if isinstance(name, DatasetKind):
            return name
        key = name.lower().replace("-", "_")
        for k in cls:
            if k.value == key or k.value.replace("_", "") == key:
                return k
        choices = ", ".join(k.value for k in cls)
        raise ValueError(f"unknown dataset kind {name!r} (choose from {choices})")


_DEFAULTS: dict[DatasetKind, dict[str, Any]] = {
    DatasetKind.UNIFORM: {},
    DatasetKind.LOGNORMAL: {"mu": 0.0, "sigma": 2.0, "scale": 1e9},
    DatasetKind.OUTLIER_TAIL: {"outlier_count": 100, "low_band_bits": 50, "high_band_bits": 59},
}


@dataclass(frozen=True)
class DatasetSpec:
    kind: DatasetKind
    n: int
    seed: int = 42
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        kind = DatasetKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.n < 2:
            raise ValueError(f"a dataset needs n >= 2, got {self.n}")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must fit in 64 unsigned bits")
        unknown = set(self.params) - set(_DEFAULTS[kind])
        if unknown:
            raise ValueError(f"unknown {kind.value} parameters: {', '.join(sorted(unknown))}")
        object.__setattr__(self, "params", {**_DEFAULTS[kind], **self.params})

    @property
    def name(self) -> str:
        return f"{self.kind.value}_{self.n}_s{self.seed}"


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def gen_payloads(keys: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic pseudo-random 64-bit payload per key."""
    keys = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix64(keys + np.uint64(seed) * _GOLDEN + _GOLDEN)


def _fill_unique(draw, n: int, limit_rounds: int = 64) -> np.ndarray:
    keys = np.unique(draw(n))
    stalled = 0
    while keys.shape[0] < n:
        before = keys.shape[0]
        keys = np.unique(np.concatenate([keys, draw(n - before)]))
        stalled = stalled + 1 if keys.shape[0] == before else 0
        if stalled >= limit_rounds:
            raise ValueError(f"key universe too small: stuck at {before} unique keys, wanted {n}")
    return keys


def _uniform_band(rng, lo_bits: int | None, hi: int):
    lo = 0 if lo_bits is None else 1 << lo_bits
    return lambda m: rng.integers(lo, hi, size=m, dtype=np.uint64, endpoint=True)


def generate(spec: DatasetSpec) -> SortedDataset:
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    n = spec.n
    if spec.kind == DatasetKind.UNIFORM:
        keys = _fill_unique(_uniform_band(rng, None, (1 << 64) - 1), n)
    elif spec.kind == DatasetKind.LOGNORMAL:
        ceiling = float(np.nextafter(2.0**64, 0))

        def draw(m):
            v = rng.lognormal(p["mu"], p["sigma"], size=m) * p["scale"]
            return np.minimum(v, ceiling).astype(np.uint64)

        keys = _fill_unique(draw, n)
    else:
        k = int(p["outlier_count"])
        low_bits, high_bits = int(p["low_band_bits"]), int(p["high_band_bits"])
        if not 0 <= k < n:
            raise ValueError(f"outlier_count must be in [0, n), got {k}")
        if not 0 < low_bits <= high_bits < 64:
            raise ValueError("need 0 < low_band_bits <= high_band_bits < 64")
        if n - k > 1 << low_bits or k > (1 << 64) - (1 << high_bits):
            raise ValueError("key universe too small for the requested counts")
        low = _fill_unique(_uniform_band(rng, None, (1 << low_bits) - 1), n - k)
        high = _fill_unique(_uniform_band(rng, high_bits, (1 << 64) - 1), k) if k else low[:0]
        keys = np.concatenate([low, high])
    return SortedDataset(keys, gen_payloads(keys, spec.seed), payload_seed=spec.seed, name=spec.name)


# ---------------------------------------------------------------- workloads


class LookupMode(enum.Enum):
    EXISTING_KEYS = "existing"
    UNIFORM_IN_RANGE = "uniform"

    @classmethod
    def parse(cls, name: str | LookupMode) -> LookupMode:
        if isinstance(name, LookupMode):
            return name
        for m in cls:
            if name.lower() in (m.value, m.name.lower()):
                return m
        raise ValueError(f"unknown lookup mode {name!r} (choose existing or uniform)")


@dataclass(frozen=True, eq=False)
class LookupWorkload:
    queries: np.ndarray
    mode: LookupMode

    def __len__(self) -> int:
        return int(self.queries.shape[0])


def gen_lookups(d: SortedDataset, m: int, seed: int, mode: LookupMode | str = LookupMode.EXISTING_KEYS) -> LookupWorkload:
    if m < 1:
        raise ValueError(f"need at least one lookup, got {m}")
    mode = LookupMode.parse(mode)
    rng = np.random.default_rng(seed)
    if mode == LookupMode.EXISTING_KEYS:
        q = d.keys[rng.integers(0, d.n, size=m)]
    else:
        q = rng.integers(d.min_key, d.max_key, size=m, dtype=np.uint64, endpoint=True)
    q = np.ascontiguousarray(q, dtype=np.uint64)
    q.flags.writeable = False
    return LookupWorkload(q, mode)


def checksum(d: SortedDataset, workload: LookupWorkload | np.ndarray) -> int:
    """Wrapping 64-bit sum of the payload at each query's lower bound; past-the-end adds 0."""
    q = workload.queries if isinstance(workload, LookupWorkload) else np.asarray(workload, dtype=np.uint64)
    lb = lower_bounds(d, q)
    return int(np.sum(d.payloads[lb[lb < d.n]], dtype=np.uint64))


# ---------------------------------------------------------------- SOSD files


def save_sosd(d: SortedDataset, path: str | os.PathLike) -> None:
    """Little-endian u64 count, the keys, then a ``LIP1`` footer carrying the payload seed."""
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", d.n))
        f.write(d.keys.astype("<u8").tobytes())
        f.write(FOOTER_MAGIC + struct.pack("<Q", d.payload_seed))


def load_sosd(path: str | os.PathLike, name: str | None = None) -> SortedDataset:
    """Read a key file; files without the footer get payload seed 0."""
    with open(path, "rb") as f:
        raw = f.read()
    where = os.fspath(path)
    if len(raw) < 8:
        raise FormatError(f"{where}: truncated header ({len(raw)} bytes)")
    (count,) = struct.unpack_from("<Q", raw)
    body = 8 * count
    seed = 0
    if len(raw) == 8 + body + 12 and raw[8 + body : 12 + body] == FOOTER_MAGIC:
        (seed,) = struct.unpack_from("<Q", raw, 12 + body)
    elif len(raw) != 8 + body:
        raise FormatError(f"{where}: header declares {count} keys ({body} bytes) but {len(raw) - 8} bytes follow")
    keys = np.frombuffer(raw, dtype="<u8", count=count, offset=8).astype(np.uint64)
    if count < 2:
        raise FormatError(f"{where}: need at least 2 keys, found {count}")
    down = np.flatnonzero(keys[1:] < keys[:-1])
    if down.size:
        i = int(down[0])
        raise FormatError(f"{where}: unsorted keys at index {i + 1} ({keys[i]} followed by {keys[i + 1]})")
    dup = np.flatnonzero(keys[1:] == keys[:-1])
    if dup.size:
        i = int(dup[0])
        raise FormatError(f"{where}: duplicate key {keys[i]} at index {i + 1}")
    label = name or os.path.splitext(os.path.basename(where))[0]
    return SortedDataset(keys, gen_payloads(keys, seed), payload_seed=seed, name=label)
