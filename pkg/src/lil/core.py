"""Approximate-index contract: lower-bound semantics, search bounds and last-mile search.

An index maps a lookup key to a half-open interval ``[lo, hi)`` of positions
that must contain the key's lower bound. ``hi`` may be ``n + 1`` so that a
lower bound of ``n`` (key past the end) can be expressed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import numpy as np

from lil import _jit

U64_MAX = (1 << 64) - 1


class ContractViolation(RuntimeError):
    """A search bound did not contain the lower bound it promised."""


class SearchStrategy(enum.IntEnum):
    BINARY = _jit.BINARY
    LINEAR = _jit.LINEAR
    INTERPOLATION = _jit.INTERPOLATION

    @classmethod
    def parse(cls, name: str | SearchStrategy) -> SearchStrategy:
        if isinstance(name, SearchStrategy):
            return name
        try:
            return cls[name.upper()]
        except KeyError:
            choices = ", ".join(s.name.lower() for s in cls)
            raise ValueError(f"unknown search strategy {name!r} (choose from {choices})") from None


class SearchBound(NamedTuple):
    lo: int
    hi: int

    @property
    def width(self) -> int:
        return self.hi - self.lo

    def __contains__(self, pos: object) -> bool:
        return isinstance(pos, (int, np.integer)) and self.lo <= pos < self.hi


class ErrorEnvelope(NamedTuple):
    """How far the true position may lie below (``under``) or above (``over``) an estimate."""

    under: int
    over: int


def check_key(x: int) -> np.uint64:
    if not 0 <= int(x) <= U64_MAX:
        raise ValueError(f"key {x} outside the unsigned 64-bit range")
    return np.uint64(x)


@dataclass(frozen=True, eq=False)
class SortedDataset:
    """Strictly increasing uint64 keys with parallel uint64 payloads."""

    keys: np.ndarray
    payloads: np.ndarray
    payload_seed: int = 0
    name: str = field(default="dataset", compare=False)

    def __post_init__(self) -> None:
        keys = np.ascontiguousarray(self.keys, dtype=np.uint64)
        payloads = np.ascontiguousarray(self.payloads, dtype=np.uint64)
        if keys.ndim != 1 or keys.shape[0] < 2:
            raise ValueError("a dataset needs at least 2 keys")
        if payloads.shape != keys.shape:
            raise ValueError(f"{payloads.shape[0]} payloads for {keys.shape[0]} keys")
        if not np.all(keys[1:] > keys[:-1]):
            raise ValueError("keys must be strictly increasing")
        keys.flags.writeable = False
        payloads.flags.writeable = False
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "payloads", payloads)

    def __len__(self) -> int:
        return int(self.keys.shape[0])

    @property
    def n(self) -> int:
        return int(self.keys.shape[0])

    @property
    def min_key(self) -> int:
        return int(self.keys[0])

    @property
    def max_key(self) -> int:
        return int(self.keys[-1])


def lower_bound_oracle(d: SortedDataset, x: int) -> int:
    """Index of the first key >= x, or ``n`` when every key is smaller."""
    return int(np.searchsorted(d.keys, check_key(x), side="left"))


def lower_bounds(d: SortedDataset, queries: np.ndarray) -> np.ndarray:
    return np.searchsorted(d.keys, np.asarray(queries, dtype=np.uint64), side="left")


def bound_from_estimate(estimate: int, env: ErrorEnvelope | tuple[int, int], n: int) -> SearchBound:
    under, over = env
    if under < 0 or over < 0:
        raise ValueError(f"negative error envelope {tuple(env)}")
    estimate = min(max(int(estimate), 0), n)
    return SearchBound(max(0, estimate - under), min(n + 1, estimate + over + 1))


def last_mile_search(
    d: SortedDataset,
    b: SearchBound | tuple[int, int],
    x: int,
    strategy: SearchStrategy | str = SearchStrategy.BINARY,
) -> int:
    """Resolve the exact lower bound of ``x`` inside ``b``.

    Raises ContractViolation when the bound provably excludes the answer.
    """
    strategy = SearchStrategy.parse(strategy)
    lo, hi = int(b[0]), int(b[1])
    n = d.n
    if not 0 <= lo < hi <= n + 1:
        raise ContractViolation(f"malformed bound [{lo}, {hi}) for n={n}")
    xk = check_key(x)
    if lo > 0 and d.keys[lo - 1] >= xk:
        raise ContractViolation(f"lower bound of {x} lies below [{lo}, {hi})")
    pos = int(_jit.lower_bound_in(d.keys, np.int64(lo), np.int64(hi), xk, int(strategy)))
    if pos == min(hi, n) and hi <= n:
        raise ContractViolation(f"lower bound of {x} lies above [{lo}, {hi})")
    return pos


@dataclass
class ValidationReport:
    checked: int
    violations: int
    first_violation: int | None = None

    @property
    def ok(self) -> bool:
        return self.violations == 0


def validate_index(
    lookup: Callable[[int], SearchBound] | object,
    d: SortedDataset,
    queries: Iterable[int] | np.ndarray,
) -> ValidationReport:
    """Count queries whose bound misses the oracle lower bound.

    ``lookup`` is either a plain callable or an index exposing ``lookup_many``,
    in which case the whole query batch is checked in one vectorised pass.
    """
    q = np.asarray(list(queries) if not isinstance(queries, np.ndarray) else queries, dtype=np.uint64)
    truth = lower_bounds(d, q)
    if hasattr(lookup, "lookup_many"):
        lo, hi = lookup.lookup_many(q)
    else:
        pairs = [tuple(lookup(int(x))) for x in q]
        lo = np.array([p[0] for p in pairs], dtype=np.int64)
        hi = np.array([p[1] for p in pairs], dtype=np.int64)
    bad = np.flatnonzero((truth < lo) | (truth >= hi))
    first = int(q[bad[0]]) if bad.size else None
    return ValidationReport(checked=int(q.shape[0]), violations=int(bad.size), first_violation=first)


def avg_log2_bound(lo: np.ndarray, hi: np.ndarray) -> float:
    width = np.maximum(np.asarray(hi, dtype=np.int64) - np.asarray(lo, dtype=np.int64), 1)
    return float(np.mean(np.log2(width)))


class ApproximateIndex:
    """Common surface of every index: scalar and batch lookups, size, serialization.

    Subclasses bind ``_run_kernel`` to a nogil numba kernel with signature
    ``(*self._kernel_args(), keys, payloads, queries, strategy, fenced, evict)``
    returning ``(checksum, cycles, sink)``; the benchmark harness drives it.
    """

    kind: str = "abstract"
    n: int

    def lookup(self, x: int) -> SearchBound:
        raise NotImplementedError

    def lookup_many(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def size_bytes(self) -> int:
        raise NotImplementedError

    def to_bytes(self) -> bytes:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError

    def _kernel_args(self) -> tuple:
        raise NotImplementedError

    def run_queries(
        self,
        keys: np.ndarray,
        payloads: np.ndarray,
        queries: np.ndarray,
        strategy: int,
        fenced: bool,
        evict: np.ndarray,
    ) -> tuple[int, int, int]:
        return type(self)._run_kernel(
            *self._kernel_args(), keys, payloads, queries, np.int64(strategy), fenced, evict
        )

    def __call__(self, x: int) -> SearchBound:
        return self.lookup(x)
