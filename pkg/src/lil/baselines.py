"""Non-learned comparators: radix binary search, stride sampling and plain binary search."""

from __future__ import annotations

import numpy as np
from numba import njit

from lil import _jit
from lil._blob import BlobReader, BlobWriter
from lil.core import ApproximateIndex, SearchBound, SortedDataset, check_key

MAX_RADIX_BITS = 30


def radix_shift(key_universe_max: int, r: int) -> int:
    return max(0, int(key_universe_max).bit_length() - r)


def prefix_offsets(sorted_keys: np.ndarray, r: int, shift: int) -> np.ndarray:
    """offsets[p] = first index whose ``key >> shift`` is >= p, for p in 0..2**r."""
    prefixes = np.asarray(sorted_keys, dtype=np.uint64) >> np.uint64(shift)
    return np.searchsorted(prefixes, np.arange((1 << r) + 1, dtype=np.uint64), side="left").astype(np.int64)


def _check_radix_bits(r: int) -> None:
    if not 1 <= r <= MAX_RADIX_BITS:
        raise ValueError(f"radix bits must be in 1..{MAX_RADIX_BITS}, got {r}")


# ---------------------------------------------------------------- RBS


@njit(cache=True, nogil=True)
def _rbs_bound(table, shift, n, x):
    b = x >> shift
    if b >= np.uint64(table.shape[0] - 1):
        return n, n + 1
    lo = table[b]
    hi = table[b + 1] + 1
    if hi > n + 1:
        hi = n + 1
    return lo, hi


@njit(cache=True, nogil=True)
def _rbs_many(table, shift, n, xs):
    lo = np.empty(xs.shape[0], np.int64)
    hi = np.empty(xs.shape[0], np.int64)
    for i in range(xs.shape[0]):
        lo[i], hi[i] = _rbs_bound(table, shift, n, xs[i])
    return lo, hi


@njit(cache=True, nogil=True)
def _rbs_run(table, shift, n, keys, payloads, queries, strategy, fenced, evict):
    total = np.uint64(0)
    spent = np.uint64(0)
    sink = np.uint64(0)
    cold = evict.shape[0] > 0
    c0 = _jit.cycle_counter()
    for i in range(queries.shape[0]):
        x = queries[i]
        if cold:
            sink += _jit.touch_lines(evict)
            _jit.full_fence()
            c0 = _jit.cycle_counter()
        lo, hi = _rbs_bound(table, shift, n, x)
        total += _jit.finish_query(keys, payloads, lo, hi, x, strategy)
        if fenced:
            _jit.full_fence()
        if cold:
            _jit.full_fence()
            spent += _jit.cycle_counter() - c0
    if not cold:
        spent = _jit.cycle_counter() - c0
    return total, spent, sink


class RbsIndex(ApproximateIndex):
    """Radix binary search: a bare table over r-bit key prefixes."""

    kind = "rbs"
    _run_kernel = staticmethod(_rbs_run)

    def __init__(self, r: int, shift: int, table: np.ndarray, n: int):
        self.r = r
        self.shift = shift
        self.table = np.ascontiguousarray(table, dtype=np.int64)
        self.n = n
        if self.table.shape[0] != (1 << r) + 1:
            raise ValueError("radix table must have 2**r + 1 entries")

    def _kernel_args(self):
        return self.table, np.uint64(self.shift), np.int64(self.n)

    def lookup(self, x: int) -> SearchBound:
        lo, hi = _rbs_bound(self.table, np.uint64(self.shift), np.int64(self.n), check_key(x))
        return SearchBound(int(lo), int(hi))

    def lookup_many(self, xs):
        return _rbs_many(*self._kernel_args(), np.asarray(xs, dtype=np.uint64))

    def size_bytes(self) -> int:
        return 4 * self.table.shape[0] + 16

    def describe(self) -> str:
        return f"radix_bits={self.r}"

    def to_bytes(self) -> bytes:
        return BlobWriter(b"RBS1").u64(self.r).u64(self.shift).u64(self.n).array(self.table, "i8").getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> RbsIndex:
        rd = BlobReader(data, b"RBS1")
        r, shift, n = rd.u64(), rd.u64(), rd.u64()
        table = rd.array("i8")
        rd.done()
        return cls(r, shift, table, n)


def build_rbs(d: SortedDataset, r: int) -> RbsIndex:
    _check_radix_bits(r)
    shift = radix_shift(d.max_key, r)
    return RbsIndex(r, shift, prefix_offsets(d.keys, r, shift), d.n)


def rbs_lookup(rbs: RbsIndex, x: int) -> SearchBound:
    return rbs.lookup(x)


# ---------------------------------------------------------------- sampling


@njit(cache=True, nogil=True)
def _sampled_bound(sample_keys, stride, n, x):
    # rightmost sample <= x
    lo = 0
    hi = sample_keys.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if sample_keys[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    j = lo - 1
    pos = 0 if j < 0 else j * stride
    end = pos + stride + 1
    if end > n + 1:
        end = n + 1
    return pos, end


@njit(cache=True, nogil=True)
def _sampled_many(sample_keys, stride, n, xs):
    lo = np.empty(xs.shape[0], np.int64)
    hi = np.empty(xs.shape[0], np.int64)
    for i in range(xs.shape[0]):
        lo[i], hi[i] = _sampled_bound(sample_keys, stride, n, xs[i])
    return lo, hi


@njit(cache=True, nogil=True)
def _sampled_run(sample_keys, stride, n, keys, payloads, queries, strategy, fenced, evict):
    total = np.uint64(0)
    spent = np.uint64(0)
    sink = np.uint64(0)
    cold = evict.shape[0] > 0
    c0 = _jit.cycle_counter()
    for i in range(queries.shape[0]):
        x = queries[i]
        if cold:
            sink += _jit.touch_lines(evict)
            _jit.full_fence()
            c0 = _jit.cycle_counter()
        lo, hi = _sampled_bound(sample_keys, stride, n, x)
        total += _jit.finish_query(keys, payloads, lo, hi, x, strategy)
        if fenced:
            _jit.full_fence()
        if cold:
            _jit.full_fence()
            spent += _jit.cycle_counter() - c0
    if not cold:
        spent = _jit.cycle_counter() - c0
    return total, spent, sink


class SampledIndex(ApproximateIndex):
    """Every k-th key with its position; a flat stand-in for a sparsely filled tree."""

    kind = "sampled"
    _run_kernel = staticmethod(_sampled_run)

    def __init__(self, stride: int, sample_keys: np.ndarray, n: int):
        self.stride = stride
        self.sample_keys = np.ascontiguousarray(sample_keys, dtype=np.uint64)
        self.n = n

    @property
    def samples(self) -> list[tuple[int, int]]:
        return [(int(k), j * self.stride) for j, k in enumerate(self.sample_keys)]

    def _kernel_args(self):
        return self.sample_keys, np.int64(self.stride), np.int64(self.n)

    def lookup(self, x: int) -> SearchBound:
        lo, hi = _sampled_bound(*self._kernel_args(), check_key(x))
        return SearchBound(int(lo), int(hi))

    def lookup_many(self, xs):
        return _sampled_many(*self._kernel_args(), np.asarray(xs, dtype=np.uint64))

    def size_bytes(self) -> int:
        # key + position per sample
        return 16 * self.sample_keys.shape[0]

    def describe(self) -> str:
        return f"stride={self.stride}"

    def to_bytes(self) -> bytes:
        return BlobWriter(b"SMP1").u64(self.stride).u64(self.n).array(self.sample_keys, "u8").getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> SampledIndex:
        rd = BlobReader(data, b"SMP1")
        stride, n = rd.u64(), rd.u64()
        keys = rd.array("u8")
        rd.done()
        return cls(stride, keys, n)


def build_sampled(d: SortedDataset, k: int) -> SampledIndex:
    if k < 1:
        raise ValueError(f"stride must be >= 1, got {k}")
    return SampledIndex(k, d.keys[::k].copy(), d.n)


def sampled_lookup(s: SampledIndex, x: int) -> SearchBound:
    return s.lookup(x)


# ---------------------------------------------------------------- binary search


@njit(cache=True, nogil=True)
def _binary_run(n, keys, payloads, queries, strategy, fenced, evict):
    total = np.uint64(0)
    spent = np.uint64(0)
    sink = np.uint64(0)
    cold = evict.shape[0] > 0
    c0 = _jit.cycle_counter()
    for i in range(queries.shape[0]):
        x = queries[i]
        if cold:
            sink += _jit.touch_lines(evict)
            _jit.full_fence()
            c0 = _jit.cycle_counter()
        total += _jit.finish_query(keys, payloads, 0, n + 1, x, strategy)
        if fenced:
            _jit.full_fence()
        if cold:
            _jit.full_fence()
            spent += _jit.cycle_counter() - c0
    if not cold:
        spent = _jit.cycle_counter() - c0
    return total, spent, sink


class BinaryBaseline(ApproximateIndex):
    """No structure at all: every lookup searches the whole array."""

    kind = "binary"
    _run_kernel = staticmethod(_binary_run)

    def __init__(self, n: int):
        self.n = n

    def _kernel_args(self):
        return (np.int64(self.n),)

    def lookup(self, x: int) -> SearchBound:
        check_key(x)
        return SearchBound(0, self.n + 1)

    def lookup_many(self, xs):
        m = np.asarray(xs).shape[0]
        return np.zeros(m, np.int64), np.full(m, self.n + 1, np.int64)

    def size_bytes(self) -> int:
        return 0

    def describe(self) -> str:
        return "-"

    def to_bytes(self) -> bytes:
        return BlobWriter(b"BIN1").u64(self.n).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> BinaryBaseline:
        rd = BlobReader(data, b"BIN1")
        n = rd.u64()
        rd.done()
        return cls(n)


def build_binary(d: SortedDataset) -> BinaryBaseline:
    return BinaryBaseline(d.n)


def binary_baseline_lookup(d: SortedDataset, x: int) -> SearchBound:
    return BinaryBaseline(d.n).lookup(x)
