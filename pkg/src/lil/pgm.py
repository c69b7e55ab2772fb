"""PGM index: a stack of optimal epsilon-bounded piecewise linear models.

The bottom level approximates key -> position; each level above approximates
first-key -> segment ordinal of the level beneath it, until one segment is left.
"""

from __future__ import annotations

from typing import Iterator, NamedTuple, Sequence

import numpy as np
from numba import njit

from lil import _jit
from lil._blob import BlobReader, BlobWriter
from lil.core import ApproximateIndex, SearchBound, SortedDataset, check_key


class Segment(NamedTuple):
    first_key: int
    slope: float
    # predicted position at first_key
    intercept: float

    def predict(self, x: int) -> float:
        return self.intercept + self.slope * float(int(x) - self.first_key)


class Segments(NamedTuple):
    first_keys: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    # index of each segment's first point in the fitted point sequence
    starts: np.ndarray

    def __len__(self) -> int:
        return int(self.first_keys.shape[0])

    def __iter__(self) -> Iterator[Segment]:  # type: ignore[override]
        for k, a, b in zip(self.first_keys, self.slopes, self.intercepts):
            yield Segment(int(k), float(a), float(b))

    def predict_points(self, keys: np.ndarray) -> np.ndarray:
        """Prediction of each fitted point by the segment that owns it."""
        owner = np.searchsorted(self.starts, np.arange(keys.shape[0]), side="right") - 1
        dx = (np.asarray(keys, dtype=np.uint64) - self.first_keys[owner]).astype(np.float64)
        return self.intercepts[owner] + self.slopes[owner] * dx


@njit(cache=True, inline="always")
def _lt(adx, ady, bdx, bdy):
    # slope a < slope b, for dx of equal sign
    return ady * bdx < adx * bdy


@njit(cache=True, inline="always")
def _gt(adx, ady, bdx, bdy):
    return ady * bdx > adx * bdy


@njit(cache=True, inline="always")
def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


@njit(cache=True)
def _pla(keys, ys, eps):
    n = keys.shape[0]
    starts = np.empty(n, np.int64)
    slopes = np.empty(n, np.float64)
    inters = np.empty(n, np.float64)
    ux = np.empty(n, np.float64)
    uy = np.empty(n, np.float64)
    lx = np.empty(n, np.float64)
    ly = np.empty(n, np.float64)
    rx = np.zeros(4, np.float64)
    ry = np.zeros(4, np.float64)
    count = 0
    i = 0
    while i < n:
        first = keys[i]
        pts = 0
        us = 0
        ls = 0
        usz = 0
        lsz = 0
        j = i
        while j < n:
            x = float(keys[j] - first)
            y = ys[j]
            p1y = y + eps
            p2y = y - eps
            if pts == 0:
                rx[0] = x
                ry[0] = p1y
                rx[1] = x
                ry[1] = p2y
                ux[0] = x
                uy[0] = p1y
                lx[0] = x
                ly[0] = p2y
                usz = 1
                lsz = 1
                pts = 1
                j += 1
                continue
            if pts == 1:
                rx[2] = x
                ry[2] = p2y
                rx[3] = x
                ry[3] = p1y
                ux[usz] = x
                uy[usz] = p1y
                usz += 1
                lx[lsz] = x
                ly[lsz] = p2y
                lsz += 1
                pts = 2
                j += 1
                continue
            s1dx = rx[2] - rx[0]
            s1dy = ry[2] - ry[0]
            s2dx = rx[3] - rx[1]
            s2dy = ry[3] - ry[1]
            if _lt(x - rx[2], p1y - ry[2], s1dx, s1dy) or _gt(x - rx[3], p2y - ry[3], s2dx, s2dy):
                break
            if _lt(x - rx[1], p1y - ry[1], s2dx, s2dy):
                # upper point tightens the max slope; pivot on the lower hull
                mdx = lx[ls] - x
                mdy = ly[ls] - p1y
                mi = ls
                for t in range(ls + 1, lsz):
                    vdx = lx[t] - x
                    vdy = ly[t] - p1y
                    if _gt(vdx, vdy, mdx, mdy):
                        break
                    mdx = vdx
                    mdy = vdy
                    mi = t
                rx[1] = lx[mi]
                ry[1] = ly[mi]
                rx[3] = x
                ry[3] = p1y
                ls = mi
                end = usz
                while end >= us + 2 and _cross(ux[end - 2], uy[end - 2], ux[end - 1], uy[end - 1], x, p1y) <= 0:
                    end -= 1
                ux[end] = x
                uy[end] = p1y
                usz = end + 1
            if _gt(x - rx[0], p2y - ry[0], s1dx, s1dy):
                # lower point tightens the min slope; pivot on the upper hull
                mdx = ux[us] - x
                mdy = uy[us] - p2y
                mi = us
                for t in range(us + 1, usz):
                    vdx = ux[t] - x
                    vdy = uy[t] - p2y
                    if _lt(vdx, vdy, mdx, mdy):
                        break
                    mdx = vdx
                    mdy = vdy
                    mi = t
                rx[0] = ux[mi]
                ry[0] = uy[mi]
                rx[2] = x
                ry[2] = p2y
                us = mi
                end = lsz
                while end >= ls + 2 and _cross(lx[end - 2], ly[end - 2], lx[end - 1], ly[end - 1], x, p2y) >= 0:
                    end -= 1
                lx[end] = x
                ly[end] = p2y
                lsz = end + 1
            pts += 1
            j += 1

        starts[count] = i
        if pts == 1:
            slopes[count] = 0.0
            inters[count] = 0.5 * (ry[0] + ry[1])
        else:
            s1dx = rx[2] - rx[0]
            s1dy = ry[2] - ry[0]
            s2dx = rx[3] - rx[1]
            s2dy = ry[3] - ry[1]
            slope = 0.5 * (s1dy / s1dx + s2dy / s2dx)
            # prefer a flat line over a falling one when both are feasible
            if slope < 0.0 and s2dy / s2dx >= 0.0:
                slope = 0.0
            # centre the intercept in its feasible range at this slope
            rmax = -np.inf
            rmin = np.inf
            for t in range(i, j):
                res = ys[t] - slope * float(keys[t] - first)
                if res > rmax:
                    rmax = res
                if res < rmin:
                    rmin = res
            slopes[count] = slope
            inters[count] = 0.5 * ((rmax - eps) + (rmin + eps))
        count += 1
        i = j
    return starts[:count], slopes[:count], inters[:count]


def optimal_pla(
    points: Sequence[tuple[int, float]] | tuple[np.ndarray, np.ndarray],
    epsilon: float,
) -> Segments:
    """Fewest segments such that every point is predicted within +-epsilon.

    ``points`` is a sequence of (key, position) pairs or a (keys, positions)
    pair of arrays; keys must be strictly increasing.
    """
    if isinstance(points, tuple) and len(points) == 2 and isinstance(points[0], np.ndarray):
        keys, ys = points
    else:
        pts = list(points)
        keys = np.array([int(p[0]) for p in pts], dtype=np.uint64)
        ys = np.array([float(p[1]) for p in pts], dtype=np.float64)
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    if keys.shape != ys.shape:
        raise ValueError("keys and positions differ in length")
    if keys.shape[0] == 0:
        raise ValueError("no points to fit")
    if np.any(keys[1:] <= keys[:-1]):
        raise ValueError("keys must be strictly increasing")
    starts, slopes, inters = _pla(keys, ys, float(epsilon))
    return Segments(keys[starts], slopes, inters, starts)


class PgmLevel(NamedTuple):
    segments: Segments
    covered_count: int


@njit(cache=True, nogil=True)
def _upper_bound(keys, lo, hi, x):
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True)
def _descend(fk, sl, ic, st, level_off, covered, eps, x):
    """Bottom-level segment owning x (x must be >= the first key)."""
    top = level_off.shape[0] - 2
    seg = 0
    for lev in range(top, 0, -1):
        g = level_off[lev] + seg
        nxt = covered[lev]
        if g + 1 < level_off[lev + 1]:
            nxt = st[g + 1]
        pred = ic[g] + sl[g] * float(x - fk[g])
        r = _jit.round_clamp(pred, st[g], nxt)
        cbase = level_off[lev - 1]
        ccount = level_off[lev] - cbase
        wlo = r - eps - 1
        if wlo < 0:
            wlo = 0
        whi = r + eps + 1
        if whi > ccount:
            whi = ccount
        seg = _upper_bound(fk, cbase + wlo, cbase + whi, x) - cbase - 1
    return seg


@njit(cache=True, nogil=True)
def _estimate(fk, sl, ic, st, level_off, covered, eps, n, x):
    if x <= fk[0]:
        return 0
    seg = _descend(fk, sl, ic, st, level_off, covered, eps, x)
    nxt = n
    if seg + 1 < level_off[1]:
        nxt = st[seg + 1]
    pred = ic[seg] + sl[seg] * float(x - fk[seg])
    return _jit.round_clamp(pred, st[seg], nxt)


@njit(cache=True, nogil=True)
def _pgm_bound(fk, sl, ic, st, level_off, covered, eps, n, x):
    r = _estimate(fk, sl, ic, st, level_off, covered, eps, n, x)
    return _jit.bound(r, eps, eps + 1, n)


@njit(cache=True, nogil=True)
def _estimate_many(fk, sl, ic, st, level_off, covered, eps, n, xs):
    out = np.empty(xs.shape[0], np.int64)
    for i in range(xs.shape[0]):
        out[i] = _estimate(fk, sl, ic, st, level_off, covered, eps, n, xs[i])
    return out


@njit(cache=True, nogil=True)
def _pgm_many(fk, sl, ic, st, level_off, covered, eps, n, xs):
    lo = np.empty(xs.shape[0], np.int64)
    hi = np.empty(xs.shape[0], np.int64)
    for i in range(xs.shape[0]):
        lo[i], hi[i] = _pgm_bound(fk, sl, ic, st, level_off, covered, eps, n, xs[i])
    return lo, hi


@njit(cache=True, nogil=True)
def _descend_many(fk, sl, ic, st, level_off, covered, eps, xs):
    out = np.empty(xs.shape[0], np.int64)
    for i in range(xs.shape[0]):
        out[i] = _descend(fk, sl, ic, st, level_off, covered, eps, xs[i])
    return out


@njit(cache=True, nogil=True)
def _pgm_run(fk, sl, ic, st, level_off, covered, eps, n, keys, payloads, queries, strategy, fenced, evict):
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
        lo, hi = _pgm_bound(fk, sl, ic, st, level_off, covered, eps, n, x)
        total += _jit.finish_query(keys, payloads, lo, hi, x, strategy)
        if fenced:
            _jit.full_fence()
        if cold:
            _jit.full_fence()
            spent += _jit.cycle_counter() - c0
    if not cold:
        spent = _jit.cycle_counter() - c0
    return total, spent, sink


class PgmIndex(ApproximateIndex):
    kind = "pgm"
    _run_kernel = staticmethod(_pgm_run)

    def __init__(self, epsilon: int, levels: Sequence[PgmLevel], n: int):
        if not levels or len(levels[-1].segments) != 1:
            raise ValueError("top PGM level must hold exactly one segment")
        self.epsilon = epsilon
        self.levels = list(levels)
        self.n = n
        segs = [lv.segments for lv in self.levels]
        self._fk = np.concatenate([s.first_keys for s in segs]).astype(np.uint64)
        self._sl = np.concatenate([s.slopes for s in segs]).astype(np.float64)
        self._ic = np.concatenate([s.intercepts for s in segs]).astype(np.float64)
        self._st = np.concatenate([s.starts for s in segs]).astype(np.int64)
        self._off = np.concatenate([[0], np.cumsum([len(s) for s in segs])]).astype(np.int64)
        self._covered = np.array([lv.covered_count for lv in self.levels], dtype=np.int64)

    def _kernel_args(self):
        return (self._fk, self._sl, self._ic, self._st, self._off, self._covered,
                np.int64(self.epsilon), np.int64(self.n))

    def lookup(self, x: int) -> SearchBound:
        lo, hi = _pgm_bound(*self._kernel_args(), check_key(x))
        return SearchBound(int(lo), int(hi))

    def lookup_many(self, xs):
        return _pgm_many(*self._kernel_args(), np.asarray(xs, dtype=np.uint64))

    def estimate_many(self, xs: np.ndarray) -> np.ndarray:
        """Integer position estimates, the centre of every search bound."""
        return _estimate_many(*self._kernel_args(), np.asarray(xs, dtype=np.uint64))

    def bottom_segment_many(self, xs: np.ndarray) -> np.ndarray:
        """Owning bottom segment found through the level-by-level descent."""
        args = self._kernel_args()[:-1]
        return _descend_many(*args, np.asarray(xs, dtype=np.uint64))

    def size_bytes(self) -> int:
        return 24 * sum(len(lv.segments) for lv in self.levels) + 16

    def describe(self) -> str:
        return f"epsilon={self.epsilon}"

    def to_bytes(self) -> bytes:
        w = BlobWriter(b"PGM1").u64(self.epsilon).u64(len(self.levels)).u64(self.n)
        for lv in self.levels:
            s = lv.segments
            w.u64(lv.covered_count)
            w.array(s.first_keys, "u8").array(s.slopes, "f8").array(s.intercepts, "f8").array(s.starts, "i8")
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> PgmIndex:
        rd = BlobReader(data, b"PGM1")
        eps, count, n = rd.u64(), rd.u64(), rd.u64()
        levels = []
        for _ in range(count):
            covered = rd.u64()
            segs = Segments(rd.array("u8"), rd.array("f8"), rd.array("f8"), rd.array("i8"))
            levels.append(PgmLevel(segs, covered))
        rd.done()
        return cls(eps, levels, n)


def build_pgm(d: SortedDataset, epsilon: int) -> PgmIndex:
    if epsilon < 1:
        raise ValueError(f"epsilon must be >= 1, got {epsilon}")
    keys = d.keys
    levels = [PgmLevel(optimal_pla((keys, np.arange(d.n, dtype=np.float64)), epsilon), d.n)]
    while len(levels[-1].segments) > 1:
        below = levels[-1].segments.first_keys
        m = below.shape[0]
        levels.append(PgmLevel(optimal_pla((below, np.arange(m, dtype=np.float64)), epsilon), m))
    return PgmIndex(epsilon, levels, d.n)


def pgm_lookup(pgm: PgmIndex, x: int) -> SearchBound:
    return pgm.lookup(x)


def pgm_size_bytes(pgm: PgmIndex) -> int:
    return pgm.size_bytes()
