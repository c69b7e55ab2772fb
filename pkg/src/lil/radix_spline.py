"""RadixSpline: a one-pass error-corridor linear spline plus a radix table over its points."""

from __future__ import annotations

from typing import Iterator, NamedTuple, Sequence

import numpy as np
from numba import njit

from lil import _jit
from lil._blob import BlobReader, BlobWriter
from lil.baselines import _check_radix_bits, prefix_offsets, radix_shift
from lil.core import ApproximateIndex, SearchBound, SortedDataset, check_key


class SplinePoint(NamedTuple):
    key: int
    position: float


class Spline(NamedTuple):
    keys: np.ndarray
    positions: np.ndarray

    def __len__(self) -> int:
        return int(self.keys.shape[0])

    def __iter__(self) -> Iterator[SplinePoint]:  # type: ignore[override]
        for k, p in zip(self.keys, self.positions):
            yield SplinePoint(int(k), float(p))


class RadixTable(NamedTuple):
    r: int
    shift: int
    offsets: np.ndarray

    def extract(self, key: int) -> int:
        return int(key) >> self.shift


@njit(cache=True)
def _corridor(keys, half_width):
    # Each keys[i] is read exactly once; a counting adapter relies on this.
    n = len(keys)
    out = np.empty(n, np.int64)
    spline_keys = np.empty(n, np.uint64)
    k = keys[0]
    out[0] = 0
    spline_keys[0] = k
    m = 1
    base_k = k
    base_p = 0
    prev_k = k
    upper = np.inf
    lower = -np.inf
    for i in range(1, n):
        k = keys[i]
        dx = float(k - base_k)
        slope = (i - base_p) / dx
        if slope > upper or slope < lower:
            out[m] = i - 1
            spline_keys[m] = prev_k
            m += 1
            base_k = prev_k
            base_p = i - 1
            dx = float(k - base_k)
            upper = (i + half_width - base_p) / dx
            lower = (i - half_width - base_p) / dx
        else:
            hi_slope = (i + half_width - base_p) / dx
            lo_slope = (i - half_width - base_p) / dx
            if hi_slope < upper:
                upper = hi_slope
            if lo_slope > lower:
                lower = lo_slope
        prev_k = k
    if n > 1:
        out[m] = n - 1
        spline_keys[m] = k
        m += 1
    return out[:m], spline_keys[:m]


def fit_spline_corridor(keys: Sequence[int] | np.ndarray, half_width: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions and keys of the spline points whose segments keep every key within ``half_width``.

    numpy input runs compiled; any other sequence runs the same code
    interpreted, touching each element once.
    """
    if half_width < 0:
        raise ValueError("corridor half-width must be >= 0")
    if len(keys) < 2:
        raise ValueError("need at least 2 keys")
    if isinstance(keys, np.ndarray):
        return _corridor(np.ascontiguousarray(keys, dtype=np.uint64), np.int64(half_width))
    return _corridor.py_func(keys, half_width)


def fit_spline(d: SortedDataset | Sequence[int] | np.ndarray, epsilon: int) -> Spline:
    """Spline whose interpolation error at every key is at most ``epsilon - 1``.

    The one position of slack lets a rounded estimate widened by ``epsilon``
    on both sides cover keys that fall between two dataset keys.
    """
    if epsilon < 1:
        raise ValueError(f"epsilon must be >= 1, got {epsilon}")
    keys = d.keys if isinstance(d, SortedDataset) else d
    idx, skeys = fit_spline_corridor(keys, epsilon - 1)
    return Spline(skeys.astype(np.uint64), idx.astype(np.float64))


def build_radix_table(spline: Spline | np.ndarray, r: int, key_universe_max: int) -> RadixTable:
    _check_radix_bits(r)
    skeys = spline.keys if isinstance(spline, Spline) else np.asarray(spline, dtype=np.uint64)
    shift = radix_shift(key_universe_max, r)
    return RadixTable(r, shift, prefix_offsets(skeys, r, shift))


@njit(cache=True, nogil=True)
def _segment(skeys, offsets, shift, x):
    """Index j of the first spline key >= x, searched only inside x's radix bucket."""
    m = skeys.shape[0]
    b = x >> shift
    lo = offsets[b]
    hi = offsets[b + 1] + 1
    if hi > m:
        hi = m
    return _jit.binary_lower_bound(skeys, lo, hi, x)


@njit(cache=True, nogil=True)
def _predict(skeys, spos, offsets, shift, n, x):
    m = skeys.shape[0]
    if x <= skeys[0]:
        return 0.0
    if x > skeys[m - 1]:
        return float(n)
    j = _segment(skeys, offsets, shift, x)
    k0 = skeys[j - 1]
    p0 = spos[j - 1]
    return p0 + float(x - k0) * (spos[j] - p0) / float(skeys[j] - k0)


@njit(cache=True, nogil=True)
def _rs_bound(skeys, spos, offsets, shift, eps, n, x):
    est = _jit.round_clamp(_predict(skeys, spos, offsets, shift, n, x), 0, n)
    return _jit.bound(est, eps, eps, n)


@njit(cache=True, nogil=True)
def _rs_many(skeys, spos, offsets, shift, eps, n, xs):
    lo = np.empty(xs.shape[0], np.int64)
    hi = np.empty(xs.shape[0], np.int64)
    for i in range(xs.shape[0]):
        lo[i], hi[i] = _rs_bound(skeys, spos, offsets, shift, eps, n, xs[i])
    return lo, hi


@njit(cache=True, nogil=True)
def _rs_predict_many(skeys, spos, offsets, shift, n, xs):
    out = np.empty(xs.shape[0], np.float64)
    for i in range(xs.shape[0]):
        out[i] = _predict(skeys, spos, offsets, shift, n, xs[i])
    return out


@njit(cache=True, nogil=True)
def _rs_estimate_many(skeys, spos, offsets, shift, n, xs):
    out = np.empty(xs.shape[0], np.int64)
    for i in range(xs.shape[0]):
        out[i] = _jit.round_clamp(_predict(skeys, spos, offsets, shift, n, xs[i]), 0, n)
    return out


@njit(cache=True, nogil=True)
def _rs_run(skeys, spos, offsets, shift, eps, n, keys, payloads, queries, strategy, fenced, evict):
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
        lo, hi = _rs_bound(skeys, spos, offsets, shift, eps, n, x)
        total += _jit.finish_query(keys, payloads, lo, hi, x, strategy)
        if fenced:
            _jit.full_fence()
        if cold:
            _jit.full_fence()
            spent += _jit.cycle_counter() - c0
    if not cold:
        spent = _jit.cycle_counter() - c0
    return total, spent, sink


class RsIndex(ApproximateIndex):
    kind = "rs"
    _run_kernel = staticmethod(_rs_run)

    def __init__(self, spline: Spline, table: RadixTable, epsilon: int, n: int):
        self.spline = Spline(
            np.ascontiguousarray(spline.keys, dtype=np.uint64),
            np.ascontiguousarray(spline.positions, dtype=np.float64),
        )
        self.table = RadixTable(table.r, table.shift, np.ascontiguousarray(table.offsets, dtype=np.int64))
        self.epsilon = epsilon
        self.n = n

    def _kernel_args(self):
        s, t = self.spline, self.table
        return s.keys, s.positions, t.offsets, np.uint64(t.shift), np.int64(self.epsilon), np.int64(self.n)

    def interpolate(self, x: int) -> float:
        s, t = self.spline, self.table
        return float(_predict(s.keys, s.positions, t.offsets, np.uint64(t.shift), np.int64(self.n), check_key(x)))

    def predict_many(self, xs: np.ndarray) -> np.ndarray:
        s, t = self.spline, self.table
        xs = np.asarray(xs, dtype=np.uint64)
        return _rs_predict_many(s.keys, s.positions, t.offsets, np.uint64(t.shift), np.int64(self.n), xs)

    def estimate_many(self, xs: np.ndarray) -> np.ndarray:
        """Rounded, clamped estimates: the centre of every search bound."""
        s, t = self.spline, self.table
        xs = np.asarray(xs, dtype=np.uint64)
        return _rs_estimate_many(s.keys, s.positions, t.offsets, np.uint64(t.shift), np.int64(self.n), xs)

    def lookup(self, x: int) -> SearchBound:
        lo, hi = _rs_bound(*self._kernel_args(), check_key(x))
        return SearchBound(int(lo), int(hi))

    def lookup_many(self, xs):
        return _rs_many(*self._kernel_args(), np.asarray(xs, dtype=np.uint64))

    def size_bytes(self) -> int:
        return 16 * len(self.spline) + 4 * self.table.offsets.shape[0] + 24

    def describe(self) -> str:
        return f"epsilon={self.epsilon};radix_bits={self.table.r}"

    def to_bytes(self) -> bytes:
        w = BlobWriter(b"RSP1").u64(self.epsilon).u64(self.table.r).u64(self.table.shift).u64(self.n)
        w.array(self.spline.keys, "u8").array(self.spline.positions, "f8").array(self.table.offsets, "i8")
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> RsIndex:
        rd = BlobReader(data, b"RSP1")
        eps, r, shift, n = rd.u64(), rd.u64(), rd.u64(), rd.u64()
        spline = Spline(rd.array("u8"), rd.array("f8"))
        offsets = rd.array("i8")
        rd.done()
        return cls(spline, RadixTable(r, shift, offsets), eps, n)


def build_rs(d: SortedDataset, epsilon: int, r: int) -> RsIndex:
    spline = fit_spline(d, epsilon)
    return RsIndex(spline, build_radix_table(spline, r, d.max_key), epsilon, d.n)


def rs_lookup(rs: RsIndex, x: int) -> SearchBound:
    return rs.lookup(x)


def rs_size_bytes(rs: RsIndex) -> int:
    return rs.size_bytes()
