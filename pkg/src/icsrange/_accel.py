"""Hot numeric kernels with an optional numba path.

Set ``ICSRANGE_NUMBA=0`` to force the pure numpy/Python implementations.
When numba is missing the fallback is used silently.  Both paths perform
the same floating point operations in the same order, so results are
bit-identical and a run does not depend on which backend was selected.
"""
from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("ICSRANGE_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "no", "off")

try:
    if not _WANT_NUMBA:
        raise ImportError("numba disabled by ICSRANGE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrapper(f):
            return f

        return wrapper


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# -- tank integration ------------------------------------------------------


def _integrate_levels_py(level0, net_flow, dt, area, level_max):
    out = np.empty(net_flow.shape[0], dtype=np.float64)
    level = level0
    for i in range(net_flow.shape[0]):
        level = level + net_flow[i] * dt / area
        if level < 0.0:
            level = 0.0
        elif level > level_max:
            level = level_max
        out[i] = level
    return out


def _step_levels_py(levels, net_flow, dt, areas, level_max):
    out = np.empty_like(levels)
    for i in range(levels.shape[0]):
        lv = levels[i] + net_flow[i] * dt / areas[i]
        if lv < 0.0:
            lv = 0.0
        elif lv > level_max[i]:
            lv = level_max[i]
        out[i] = lv
    return out


def _step_levels_np(levels, net_flow, dt, areas, level_max):
    return np.clip(levels + net_flow * dt / areas, 0.0, level_max)


# -- run-length detection ----------------------------------------------------


def _sustained_run_py(mask, window):
    run = 0
    for i in range(mask.shape[0]):
        if mask[i]:
            run += 1
            if run >= window:
                return i
        else:
            run = 0
    return -1


def _sustained_run_np(mask, window):
    mask = np.asarray(mask, dtype=bool)
    if window <= 0:
        return 0 if mask.shape[0] else -1
    if mask.shape[0] < window:
        return -1
    # run length ending at each index via cumulative count minus last reset
    idx = np.arange(mask.shape[0])
    last_false = np.maximum.accumulate(np.where(~mask, idx, -1))
    runs = idx - last_false
    hits = np.flatnonzero(runs >= window)
    return int(hits[0]) if hits.size else -1


# -- xor -------------------------------------------------------------------


def _xor_repeat_py(data, key):
    out = np.empty_like(data)
    n = key.shape[0]
    for i in range(data.shape[0]):
        out[i] = data[i] ^ key[i % n]
    return out


def _xor_repeat_np(data, key):
    reps = -(-data.shape[0] // key.shape[0]) if key.shape[0] else 0
    return np.bitwise_xor(data, np.tile(key, reps)[: data.shape[0]])


def _printable_counts_py(cipher):
    counts = np.zeros(256, dtype=np.int64)
    for k in range(256):
        c = 0
        for i in range(cipher.shape[0]):
            b = cipher[i] ^ k
            if 0x20 <= b <= 0x7E:
                c += 1
        counts[k] = c
    return counts


def _printable_counts_np(cipher):
    keys = np.arange(256, dtype=np.uint8)[:, None]
    plain = np.bitwise_xor(cipher[None, :], keys)
    ok = (plain >= 0x20) & (plain <= 0x7E)
    return ok.sum(axis=1).astype(np.int64)


if HAVE_NUMBA:
    integrate_levels = njit(cache=True)(_integrate_levels_py)
    step_levels = njit(cache=True)(_step_levels_py)
    sustained_run = njit(cache=True)(_sustained_run_py)
    # the per-byte modulo loop loses to numpy's tiled xor, so xor stays on numpy
    xor_repeat = _xor_repeat_np
    printable_counts = njit(cache=True)(_printable_counts_py)
else:
    integrate_levels = _integrate_levels_py
    step_levels = _step_levels_np
    sustained_run = _sustained_run_np
    xor_repeat = _xor_repeat_np
    printable_counts = _printable_counts_np

# reference implementations, always pure python/numpy; used by the benchmark
# and by tests that compare backends
PURE = {
    "integrate_levels": _integrate_levels_py,
    "step_levels": _step_levels_np,
    "sustained_run": _sustained_run_np,
    "xor_repeat": _xor_repeat_np,
    "printable_counts": _printable_counts_np,
}
