"""Two-stage recursive model index.

A stage-1 model maps a key to a rough position, which picks one of B leaf
models; the chosen leaf's prediction, widened by that leaf's error envelope,
is the search bound.

Every model is evaluated relative to an integer origin so that large 64-bit
keys do not lose their low bits before the subtraction. Internally a model is
``(origin, scale, a, b, c, d)`` with ``t = (x - origin) * scale`` and
``pred = ((a t + b) t + c) t + d``; a linear model is the case ``a = b = 0``,
``scale = 1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from lil import _jit
from lil._blob import BlobReader, BlobWriter
from lil.core import ApproximateIndex, ErrorEnvelope, SearchBound, SortedDataset, check_key


class ModelKind(enum.IntEnum):
    LINEAR = 0
    CUBIC = 1

    @classmethod
    def parse(cls, name: str | ModelKind) -> ModelKind:
        if isinstance(name, ModelKind):
            return name
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown model kind {name!r} (choose linear or cubic)") from None


class LinearModel(NamedTuple):
    slope: float
    # prediction at ``origin``
    intercept: float
    origin: int = 0

    def predict(self, x: int) -> float:
        return self.intercept + self.slope * float(int(x) - self.origin)

    def params(self) -> tuple[int, np.ndarray]:
        return self.origin, np.array([1.0, 0.0, 0.0, self.slope, self.intercept])


class CubicModel(NamedTuple):
    """``a t^3 + b t^2 + c t + d`` with ``t = (x - origin) * scale`` in [0, 1] over the fitted keys."""

    a: float
    b: float
    c: float
    d: float
    origin: int = 0
    scale: float = 1.0

    def predict(self, x: int) -> float:
        t = float(int(x) - self.origin) * self.scale
        return ((self.a * t + self.b) * t + self.c) * t + self.d

    def params(self) -> tuple[int, np.ndarray]:
        return self.origin, np.array([self.scale, self.a, self.b, self.c, self.d])


Model = LinearModel | CubicModel


def _model_from(kind: ModelKind, origin: int, p: np.ndarray) -> Model:
    if kind == ModelKind.LINEAR:
        return LinearModel(float(p[3]), float(p[4]), int(origin))
    return CubicModel(float(p[1]), float(p[2]), float(p[3]), float(p[4]), int(origin), float(p[0]))


def _as_arrays(points) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(points, tuple) and len(points) == 2 and isinstance(points[0], np.ndarray):
        keys, ys = points
    else:
        pts = list(points)
        keys = np.array([int(p[0]) for p in pts], dtype=np.uint64)
        ys = np.array([float(p[1]) for p in pts], dtype=np.float64)
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if keys.shape[0] == 0:
        raise ValueError("no points to fit")
    if keys.shape != ys.shape:
        raise ValueError("keys and positions differ in length")
    return keys, ys


@njit(cache=True)
def _grouped_ols(keys, ys, leaf, count):
    """Per-group least squares, each group relative to its smallest key."""
    n = keys.shape[0]
    origin = np.zeros(count, np.uint64)
    seen = np.zeros(count, np.bool_)
    for i in range(n):
        g = leaf[i]
        if not seen[g] or keys[i] < origin[g]:
            origin[g] = keys[i]
            seen[g] = True
    cnt = np.zeros(count, np.float64)
    sx = np.zeros(count, np.float64)
    sy = np.zeros(count, np.float64)
    for i in range(n):
        g = leaf[i]
        cnt[g] += 1.0
        sx[g] += float(keys[i] - origin[g])
        sy[g] += ys[i]
    mx = np.zeros(count, np.float64)
    my = np.zeros(count, np.float64)
    for g in range(count):
        if cnt[g] > 0:
            mx[g] = sx[g] / cnt[g]
            my[g] = sy[g] / cnt[g]
    sxx = np.zeros(count, np.float64)
    sxy = np.zeros(count, np.float64)
    for i in range(n):
        g = leaf[i]
        dx = float(keys[i] - origin[g]) - mx[g]
        sxx[g] += dx * dx
        sxy[g] += dx * (ys[i] - my[g])
    slope = np.zeros(count, np.float64)
    inter = np.zeros(count, np.float64)
    for g in range(count):
        if sxx[g] > 0:
            slope[g] = sxy[g] / sxx[g]
        inter[g] = my[g] - slope[g] * mx[g]
    return origin, slope, inter, cnt


def fit_linear(points: Sequence[tuple[int, float]] | tuple[np.ndarray, np.ndarray]) -> LinearModel:
    """Ordinary least squares; a single point gives a flat line through it."""
    keys, ys = _as_arrays(points)
    origin, slope, inter, _ = _grouped_ols(keys, ys, np.zeros(keys.shape[0], np.int64), 1)
    return LinearModel(float(slope[0]), float(inter[0]), int(origin[0]))


def fit_cubic(points: Sequence[tuple[int, float]] | tuple[np.ndarray, np.ndarray]) -> CubicModel:
    """Least-squares cubic on keys scaled to [0, 1]; under 4 points it is the linear fit."""
    keys, ys = _as_arrays(points)
    origin = int(keys.min())
    span = float(int(keys.max()) - origin)
    scale = 1.0 / span if span > 0 else 1.0
    if keys.shape[0] < 4:
        lin = fit_linear((keys, ys))
        # the linear fit shares the origin, so only the slope needs rescaling
        return CubicModel(0.0, 0.0, lin.slope / scale, lin.intercept, origin, scale)
    t = (keys - np.uint64(origin)).astype(np.float64) * scale
    ym = float(ys.mean())
    vander = np.stack([t**3, t**2, t, np.ones_like(t)], axis=1)
    coef = np.linalg.lstsq(vander, ys - ym, rcond=None)[0]
    return CubicModel(float(coef[0]), float(coef[1]), float(coef[2]), float(coef[3]) + ym, origin, scale)


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True, inline="always")
def _eval(origin, p, x):
    if x >= origin:
        t = float(x - origin) * p[0]
    else:
        t = -float(origin - x) * p[0]
    return ((p[1] * t + p[2]) * t + p[3]) * t + p[4]


@njit(cache=True, nogil=True, inline="always")
def _leaf(s1o, s1p, branching, n, x):
    v = _eval(s1o, s1p, x) * branching / n
    if not (v >= 0.0):
        return 0
    if v >= branching:
        return branching - 1
    return np.int64(v)


@njit(cache=True, nogil=True)
def _estimate(s1o, s1p, lo_, lp, n, x):
    b = lo_.shape[0]
    j = _leaf(s1o, s1p, b, n, x)
    return j, _jit.round_clamp(_eval(lo_[j], lp[j], x), 0, n)


@njit(cache=True, nogil=True)
def _rmi_bound(s1o, s1p, lo_, lp, under, over, kmin, kmax, n, x):
    if x < kmin:
        return 0, 1
    if x > kmax:
        return n, n + 1
    j, est = _estimate(s1o, s1p, lo_, lp, n, x)
    return _jit.bound(est, under[j], over[j], n)


@njit(cache=True, nogil=True)
def _rmi_many(s1o, s1p, lo_, lp, under, over, kmin, kmax, n, xs):
    lo = np.empty(xs.shape[0], np.int64)
    hi = np.empty(xs.shape[0], np.int64)
    for i in range(xs.shape[0]):
        lo[i], hi[i] = _rmi_bound(s1o, s1p, lo_, lp, under, over, kmin, kmax, n, xs[i])
    return lo, hi


@njit(cache=True, nogil=True)
def _leaf_many(s1o, s1p, branching, n, xs):
    out = np.empty(xs.shape[0], np.int64)
    for i in range(xs.shape[0]):
        out[i] = _leaf(s1o, s1p, branching, n, xs[i])
    return out


@njit(cache=True, nogil=True)
def _rmi_run(s1o, s1p, lo_, lp, under, over, kmin, kmax, n, keys, payloads, queries, strategy, fenced, evict):
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
        lo, hi = _rmi_bound(s1o, s1p, lo_, lp, under, over, kmin, kmax, n, x)
        total += _jit.finish_query(keys, payloads, lo, hi, x, strategy)
        if fenced:
            _jit.full_fence()
        if cold:
            _jit.full_fence()
            spent += _jit.cycle_counter() - c0
    if not cold:
        spent = _jit.cycle_counter() - c0
    return total, spent, sink


@njit(cache=True)
def _transitions(s1o, s1p, branching, n, lo, hi):
    """Every x in (lo, hi] with leaf(x) != leaf(x - 1), assuming stage 1 is monotone on [lo, hi]."""
    out = np.empty(2 * branching + 2, np.uint64)
    m = 0
    stack_lo = np.empty(130, np.uint64)
    stack_hi = np.empty(130, np.uint64)
    sp = 0
    stack_lo[0] = lo
    stack_hi[0] = hi
    sp = 1
    while sp > 0:
        sp -= 1
        a = stack_lo[sp]
        b = stack_hi[sp]
        if _leaf(s1o, s1p, branching, n, a) == _leaf(s1o, s1p, branching, n, b):
            continue
        if b - a == np.uint64(1):
            if m == out.shape[0]:
                grown = np.empty(2 * m, np.uint64)
                grown[:m] = out
                out = grown
            out[m] = b
            m += 1
            continue
        mid = a + (b - a) // np.uint64(2)
        # push the upper half first so transitions come out in increasing order
        stack_lo[sp] = mid
        stack_hi[sp] = b
        sp += 1
        stack_lo[sp] = a
        stack_hi[sp] = mid
        sp += 1
    return out[:m]


@njit(cache=True)
def _envelopes(keys, s1o, s1p, lo_, lp, extra_x, extra_lb):
    """Exact per-leaf (under, over) over the witness set.

    Witnesses are every key, the smallest absent value of every key gap, and
    the extra points (leaf transitions, cubic turning points). Between two
    consecutive witnesses both the routed leaf and the lower bound are fixed
    and the estimate is monotone, so the extremes are attained at witnesses.
    """
    n = keys.shape[0]
    b = lo_.shape[0]
    under = np.zeros(b, np.int64)
    over = np.zeros(b, np.int64)
    for t in range(n):
        for w in range(2):
            if w == 0:
                x = keys[t]
            else:
                if t == 0 or keys[t - 1] + np.uint64(1) == keys[t]:
                    continue
                x = keys[t - 1] + np.uint64(1)
            j, est = _estimate(s1o, s1p, lo_, lp, n, x)
            if est - t > under[j]:
                under[j] = est - t
            if t - est > over[j]:
                over[j] = t - est
    for i in range(extra_x.shape[0]):
        x = extra_x[i]
        t = extra_lb[i]
        j, est = _estimate(s1o, s1p, lo_, lp, n, x)
        if est - t > under[j]:
            under[j] = est - t
        if t - est > over[j]:
            over[j] = t - est
    return under, over


def _turning_points(kind: ModelKind, origin: int, p: np.ndarray) -> list[float]:
    """Real x where a cubic model's derivative vanishes."""
    if kind == ModelKind.LINEAR:
        return []
    scale, a, b, c = float(p[0]), float(p[1]), float(p[2]), float(p[3])
    roots = np.roots([3 * a, 2 * b, c]) if (a != 0 or b != 0) else np.array([])
    out = []
    for r in np.atleast_1d(roots):
        if abs(r.imag) < 1e-12 and np.isfinite(r.real):
            out.append(origin + float(r.real) / scale)
    return out


def _int_neighbours(xs: list[float], kmin: int, kmax: int) -> list[int]:
    out = []
    for x in xs:
        if not kmin - 1 <= x <= kmax + 1:
            continue
        f = int(np.floor(x))
        for v in (f - 1, f, f + 1, f + 2):
            if kmin <= v <= kmax:
                out.append(v)
    return out


# ---------------------------------------------------------------- index


@dataclass(frozen=True)
class RmiConfig:
    stage1: ModelKind = ModelKind.LINEAR
    stage2: ModelKind = ModelKind.LINEAR
    branching: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stage1", ModelKind.parse(self.stage1))
        object.__setattr__(self, "stage2", ModelKind.parse(self.stage2))
        if self.branching < 1:
            raise ValueError(f"branching factor must be >= 1, got {self.branching}")


class TrainedRmi(ApproximateIndex):
    kind = "rmi"
    _run_kernel = staticmethod(_rmi_run)

    def __init__(self, cfg: RmiConfig, s1_origin: int, s1_params: np.ndarray, leaf_origins: np.ndarray,
                 leaf_params: np.ndarray, under: np.ndarray, over: np.ndarray, n: int, kmin: int, kmax: int):
        self.cfg = cfg
        self.n = n
        self.kmin = kmin
        self.kmax = kmax
        self._s1o = np.uint64(s1_origin)
        self._s1p = np.ascontiguousarray(s1_params, dtype=np.float64)
        self._lo = np.ascontiguousarray(leaf_origins, dtype=np.uint64)
        self._lp = np.ascontiguousarray(leaf_params, dtype=np.float64).reshape(-1, 5)
        self._under = np.ascontiguousarray(under, dtype=np.int64)
        self._over = np.ascontiguousarray(over, dtype=np.int64)
        if not (self._lo.shape[0] == self._lp.shape[0] == self._under.shape[0] == cfg.branching):
            raise ValueError("leaf arrays must all have one entry per leaf")

    @property
    def branching(self) -> int:
        return self.cfg.branching

    @property
    def stage1(self) -> Model:
        return _model_from(self.cfg.stage1, int(self._s1o), self._s1p)

    @property
    def leaves(self) -> list[Model]:
        return [_model_from(self.cfg.stage2, int(o), p) for o, p in zip(self._lo, self._lp)]

    @property
    def leaf_env(self) -> list[ErrorEnvelope]:
        return [ErrorEnvelope(int(u), int(o)) for u, o in zip(self._under, self._over)]

    def _kernel_args(self):
        return (self._s1o, self._s1p, self._lo, self._lp, self._under, self._over,
                np.uint64(self.kmin), np.uint64(self.kmax), np.int64(self.n))

    def leaf_index(self, x: int) -> int:
        return int(_leaf(self._s1o, self._s1p, self.branching, np.int64(self.n), check_key(x)))

    def leaf_index_many(self, xs: np.ndarray) -> np.ndarray:
        return _leaf_many(self._s1o, self._s1p, self.branching, np.int64(self.n), np.asarray(xs, dtype=np.uint64))

    def estimate(self, x: int) -> tuple[int, int]:
        """(leaf, clamped integer estimate) for a key inside the key range."""
        j, est = _estimate(self._s1o, self._s1p, self._lo, self._lp, np.int64(self.n), check_key(x))
        return int(j), int(est)

    def lookup(self, x: int) -> SearchBound:
        lo, hi = _rmi_bound(*self._kernel_args(), check_key(x))
        return SearchBound(int(lo), int(hi))

    def lookup_many(self, xs):
        return _rmi_many(*self._kernel_args(), np.asarray(xs, dtype=np.uint64))

    def size_bytes(self) -> int:
        per = {ModelKind.LINEAR: 16, ModelKind.CUBIC: 32}
        return per[self.cfg.stage1] + self.branching * (per[self.cfg.stage2] + 16) + 16

    def describe(self) -> str:
        c = self.cfg
        return f"stage1={c.stage1.name.lower()};stage2={c.stage2.name.lower()};branching={c.branching}"

    def to_bytes(self) -> bytes:
        c = self.cfg
        w = BlobWriter(b"RMI1").u64(c.stage1).u64(c.stage2).u64(c.branching)
        w.u64(self.n).u64(self.kmin).u64(self.kmax).u64(int(self._s1o))
        w.array(self._s1p, "f8").array(self._lo, "u8").array(self._lp.ravel(), "f8")
        w.array(self._under, "i8").array(self._over, "i8")
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> TrainedRmi:
        rd = BlobReader(data, b"RMI1")
        s1k, s2k, b = rd.u64(), rd.u64(), rd.u64()
        n, kmin, kmax, s1o = rd.u64(), rd.u64(), rd.u64(), rd.u64()
        s1p, lo_, lp = rd.array("f8"), rd.array("u8"), rd.array("f8")
        under, over = rd.array("i8"), rd.array("i8")
        rd.done()
        cfg = RmiConfig(ModelKind(s1k), ModelKind(s2k), b)
        return cls(cfg, s1o, s1p, lo_, lp, under, over, n, kmin, kmax)


def _fit_leaves(kind: ModelKind, keys: np.ndarray, ys: np.ndarray, leaf: np.ndarray, branching: int):
    origins, slopes, inters, counts = _grouped_ols(keys, ys, leaf, branching)
    params = np.zeros((branching, 5), np.float64)
    params[:, 0] = 1.0
    params[:, 3] = slopes
    params[:, 4] = inters
    # an empty leaf predicts where its partition starts: the count of keys routed below it
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    empty = counts == 0
    params[empty, 4] = starts[empty]
    if kind == ModelKind.CUBIC:
        order = np.argsort(leaf, kind="stable")
        bounds = np.searchsorted(leaf[order], np.arange(branching + 1))
        for j in np.flatnonzero(~empty):
            idx = order[bounds[j] : bounds[j + 1]]
            m = fit_cubic((keys[idx], ys[idx]))
            origins[j], params[j] = m.params()
    return origins, params


def train_rmi(d: SortedDataset, cfg: RmiConfig) -> TrainedRmi:
    if cfg.branching < 1:
        raise ValueError("branching factor must be >= 1")
    keys = d.keys
    n = d.n
    b = cfg.branching
    ys = np.arange(n, dtype=np.float64)
    s1 = fit_linear((keys, ys)) if cfg.stage1 == ModelKind.LINEAR else fit_cubic((keys, ys))
    s1o, s1p = s1.params()
    s1o = np.uint64(s1o)
    leaf = _leaf_many(s1o, s1p, b, np.int64(n), keys)
    lo_, lp = _fit_leaves(cfg.stage2, keys, ys, leaf, b)

    kmin, kmax = d.min_key, d.max_key
    # split the key range where stage 1 may change direction, then find leaf transitions
    cuts = sorted(set(_int_neighbours(_turning_points(cfg.stage1, int(s1o), s1p), kmin, kmax)))
    edges = [kmin] + cuts + [kmax]
    extra: list[int] = list(cuts)
    for a, z in zip(edges[:-1], edges[1:]):
        if z > a:
            for x in _transitions(s1o, s1p, b, np.int64(n), np.uint64(a), np.uint64(z)):
                extra.extend((int(x), int(x) - 1))
    for j in range(b):
        extra.extend(_int_neighbours(_turning_points(cfg.stage2, int(lo_[j]), lp[j]), kmin, kmax))
    ex = np.unique(np.array([v for v in extra if kmin <= v <= kmax], dtype=np.uint64))
    ex_lb = np.searchsorted(keys, ex, side="left").astype(np.int64)
    under, over = _envelopes(keys, s1o, s1p, lo_, lp, ex, ex_lb)
    return TrainedRmi(cfg, int(s1o), s1p, lo_, lp, under, over, n, kmin, kmax)


def leaf_index(rmi: TrainedRmi, x: int) -> int:
    return rmi.leaf_index(x)


def rmi_lookup(rmi: TrainedRmi, x: int) -> SearchBound:
    return rmi.lookup(x)


def rmi_size_bytes(rmi: TrainedRmi) -> int:
    return rmi.size_bytes()
