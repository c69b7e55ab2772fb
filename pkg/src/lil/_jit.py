"""Low-level numba kernels shared by every index.

Everything here operates on ``uint64`` key arrays and ``int64`` positions.
Mixing signed and unsigned integers inside numba silently promotes to
float64, so callers must hand keys over as ``np.uint64``.
"""

from __future__ import annotations

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.extending import intrinsic

BINARY = 0
LINEAR = 1
INTERPOLATION = 2

# uint64 slots per 64-byte cache line
LINE_STRIDE = 8


@intrinsic
def full_fence(typingctx):
    """Sequentially consistent fence (``mfence`` on x86-64)."""
    sig = types.void()

    def codegen(context, builder, signature, args):
        builder.fence("seq_cst")
        return context.get_dummy_value()

    return sig, codegen


@intrinsic
def cycle_counter(typingctx):
    """Raw processor cycle counter (``rdtsc`` on x86-64, 0 where unsupported)."""
    sig = types.uint64()

    def codegen(context, builder, signature, args):
        fnty = ir.FunctionType(ir.IntType(64), [])
        fn = builder.module.declare_intrinsic("llvm.readcyclecounter", fnty=fnty)
        return builder.call(fn, [])

    return sig, codegen


@njit(cache=True, nogil=True)
def read_cycles():
    return cycle_counter()


@njit(cache=True, nogil=True)
def binary_lower_bound(keys, lo, hi, x):
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True)
def linear_lower_bound(keys, lo, hi, x):
    for i in range(lo, hi):
        if keys[i] >= x:
            return i
    return hi


@njit(cache=True, nogil=True)
def interpolation_lower_bound(keys, lo, hi, x):
    # answer stays in [lo, hi]; keys[< lo] < x and keys[>= hi] >= x inside the window
    prev_width = hi - lo
    probes = 0
    while lo < hi:
        lk = keys[lo]
        if x <= lk:
            return lo
        hk = keys[hi - 1]
        if x > hk:
            return hi
        width = hi - lo
        if width <= 2:
            return binary_lower_bound(keys, lo, hi, x)
        frac = float(x - lk) / float(hk - lk)
        p = lo + np.int64(frac * float(hi - 1 - lo))
        if p < lo:
            p = lo
        elif p > hi - 1:
            p = hi - 1
        if keys[p] < x:
            lo = p + 1
        else:
            hi = p
        probes += 1
        if probes == 2:
            # require halving over every two probes, else finish with bisection
            if 2 * (hi - lo) > prev_width:
                return binary_lower_bound(keys, lo, hi, x)
            prev_width = hi - lo
            probes = 0
    return lo


@njit(cache=True, nogil=True)
def lower_bound_in(keys, lo, hi, x, strategy):
    """Lower bound of ``x`` restricted to ``keys[lo:hi]``; returns ``hi`` if none."""
    n = keys.shape[0]
    if hi > n:
        hi = n
    if lo >= hi:
        return hi
    if strategy == BINARY:
        return binary_lower_bound(keys, lo, hi, x)
    if strategy == LINEAR:
        return linear_lower_bound(keys, lo, hi, x)
    return interpolation_lower_bound(keys, lo, hi, x)


@njit(cache=True, nogil=True)
def touch_lines(buf):
    """Write every cache line of ``buf`` so previously cached lines are evicted."""
    acc = np.uint64(0)
    for i in range(0, buf.shape[0], LINE_STRIDE):
        buf[i] += np.uint64(1)
        acc += buf[i]
    return acc


@njit(cache=True, nogil=True)
def round_clamp(pred, lo, hi):
    """Round half up, then clamp into [lo, hi]. NaN maps to ``lo``."""
    if not (pred >= lo):
        return lo
    if pred >= hi:
        return hi
    r = np.int64(np.floor(pred + 0.5))
    if r > hi:
        return hi
    return r


@njit(cache=True, nogil=True)
def bound(estimate, under, over, n):
    lo = estimate - under
    if lo < 0:
        lo = 0
    hi = estimate + over + 1
    if hi > n + 1:
        hi = n + 1
    return lo, hi


@njit(cache=True, nogil=True)
def finish_query(keys, payloads, lo, hi, x, strategy):
    """Last-mile search plus payload fetch; positions past the end contribute 0."""
    pos = lower_bound_in(keys, lo, hi, x, strategy)
    if pos < keys.shape[0]:
        return payloads[pos]
    return np.uint64(0)
