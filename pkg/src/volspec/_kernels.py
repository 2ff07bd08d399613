"""Hot loops: products and Cauchy sums over spectra.

Each kernel has a numba ``@njit`` implementation and a chunked numpy
fallback.  The numba path is used when numba imports cleanly and
``VS_NO_NUMBA`` is unset (or ``0``).  ``VS_NUM_THREADS`` caps the numba
thread pool.
"""
from __future__ import annotations

import os
import warnings

import numpy as np

_CHUNK = 256
_BLOCK = 8


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "0").strip().lower() not in ("", "0", "false", "no")


try:
    if _env_flag("VS_NO_NUMBA"):
        raise ImportError("numba disabled by VS_NO_NUMBA")
    import numba
    from numba import njit, prange

    NUMBA_AVAILABLE = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"
        # the TBB layer is never selected, so its version probe is noise
        warnings.filterwarnings("ignore", message="The TBB threading layer",
                                category=numba.NumbaWarning)
except ImportError:  # pragma: no cover - exercised via VS_NO_NUMBA in a subprocess
    NUMBA_AVAILABLE = False

if NUMBA_AVAILABLE:
    _threads = os.environ.get("VS_NUM_THREADS")
    if _threads:
        try:
            numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))
        except ValueError:
            pass

BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"


# ---------------------------------------------------------------- numpy path

def _np_log1m_sum(z, t):
    out = np.empty(z.shape[0], dtype=np.complex128)
    inv = 1.0 / t
    for lo in range(0, z.shape[0], _CHUNK):
        zz = z[lo:lo + _CHUNK, None]
        out[lo:lo + _CHUNK] = np.log(1.0 - zz * inv).sum(axis=1)
    return out


def _np_log_abs_sign(x, t, skip):
    n = x.shape[0]
    logs = np.empty(n)
    negs = np.empty(n, dtype=np.int64)
    inv = 1.0 / t
    cols = np.arange(t.shape[0])
    for lo in range(0, n, _CHUNK):
        f = 1.0 - x[lo:lo + _CHUNK, None] * inv
        mask = cols[None, :] == skip[lo:lo + _CHUNK, None]
        f = np.where(mask, 1.0, f)
        logs[lo:lo + _CHUNK] = np.log(np.abs(f)).sum(axis=1)
        negs[lo:lo + _CHUNK] = (f < 0).sum(axis=1)
    return logs, negs


def _np_cauchy_sum(z, t, w):
    out = np.empty(z.shape[0], dtype=np.complex128)
    for lo in range(0, z.shape[0], _CHUNK):
        zz = z[lo:lo + _CHUNK, None]
        out[lo:lo + _CHUNK] = (w * zz / (t * (t - zz))).sum(axis=1)
    return out


def _np_cauchy_sum_real(x, t, w):
    s = np.empty(x.shape[0])
    d = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], _CHUNK):
        xx = x[lo:lo + _CHUNK, None]
        r = 1.0 / (t - xx)
        s[lo:lo + _CHUNK] = (w * xx * r / t).sum(axis=1)
        d[lo:lo + _CHUNK] = (w * r * r).sum(axis=1)
    return s, d


# ---------------------------------------------------------------- numba path

if NUMBA_AVAILABLE:

    @njit(parallel=True, cache=True, nogil=True)
    def _nb_log1m_sum(z, t):
        # one complex log per block of factors; block products stay far from overflow
        n = z.shape[0]
        m = t.shape[0]
        out = np.empty(n, dtype=np.complex128)
        for i in prange(n):
            zi = z[i]
            acc = 0j
            j = 0
            while j < m:
                stop = min(j + _BLOCK, m)
                p = 1.0 + 0j
                while j < stop:
                    p *= 1.0 - zi / t[j]
                    j += 1
                acc += np.log(p)
            out[i] = acc
        return out

    @njit(parallel=True, cache=True, nogil=True)
    def _nb_log_abs_sign(x, t, skip):
        n = x.shape[0]
        m = t.shape[0]
        logs = np.empty(n)
        negs = np.empty(n, dtype=np.int64)
        inv = 1.0 / t
        for i in prange(n):
            xi = x[i]
            sk = skip[i]
            acc = 0.0
            neg = 0
            p = 1.0
            c = 0
            # one log per 8 factors; |factor| stays far from the double range
            for j in range(m):
                if j == sk:
                    continue
                f = 1.0 - xi * inv[j]
                if f < 0.0:
                    neg += 1
                    f = -f
                p *= f
                c += 1
                if c == 8:
                    acc += np.log(p)
                    p = 1.0
                    c = 0
            logs[i] = acc + np.log(p)
            negs[i] = neg
        return logs, negs

    @njit(parallel=True, cache=True, nogil=True)
    def _nb_cauchy_sum(z, t, w):
        n = z.shape[0]
        m = t.shape[0]
        out = np.empty(n, dtype=np.complex128)
        for i in prange(n):
            zi = z[i]
            acc = 0j
            for j in range(m):
                acc += w[j] * zi / (t[j] * (t[j] - zi))
            out[i] = acc
        return out

    @njit(parallel=True, cache=True, nogil=True)
    def _nb_cauchy_sum_real(x, t, w):
        n = x.shape[0]
        m = t.shape[0]
        s = np.empty(n)
        d = np.empty(n)
        for i in prange(n):
            xi = x[i]
            acc = 0.0
            dacc = 0.0
            for j in range(m):
                r = 1.0 / (t[j] - xi)
                acc += w[j] * xi * r / t[j]
                dacc += w[j] * r * r
            s[i] = acc
            d[i] = dacc
        return s, d


# ---------------------------------------------------------------- dispatch

def log1m_sum(z, t, backend: str | None = None):
    """Sum of ``log(1 - z/t_j)`` over ``t`` for each ``z`` (principal logs)."""
    z = np.ascontiguousarray(z, dtype=np.complex128).ravel()
    t = np.ascontiguousarray(t, dtype=np.float64)
    if t.size == 0:
        return np.zeros(z.shape[0], dtype=np.complex128)
    if _use_numba(backend):
        return _nb_log1m_sum(z, t)
    return _np_log1m_sum(z, t)


def log_abs_sign(x, t, skip=None, backend: str | None = None):
    """Return ``(sum log|1 - x/t_j|, #negative factors)``, omitting ``t[skip[i]]``."""
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    t = np.ascontiguousarray(t, dtype=np.float64)
    if skip is None:
        skip = np.full(x.shape[0], -1, dtype=np.int64)
    skip = np.ascontiguousarray(skip, dtype=np.int64)
    if t.size == 0:
        return np.zeros(x.shape[0]), np.zeros(x.shape[0], dtype=np.int64)
    if _use_numba(backend):
        return _nb_log_abs_sign(x, t, skip)
    return _np_log_abs_sign(x, t, skip)


def cauchy_sum(z, t, w, backend: str | None = None):
    """``sum_j w_j (1/(t_j - z) - 1/t_j)`` for complex ``z`` and weights."""
    z = np.ascontiguousarray(z, dtype=np.complex128).ravel()
    t = np.ascontiguousarray(t, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.complex128)
    if t.size == 0:
        return np.zeros(z.shape[0], dtype=np.complex128)
    if _use_numba(backend):
        return _nb_cauchy_sum(z, t, w)
    return _np_cauchy_sum(z, t, w)


def cauchy_sum_real(x, t, w, backend: str | None = None):
    """Real-axis Cauchy sum and its x-derivative for real weights."""
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    t = np.ascontiguousarray(t, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if t.size == 0:
        return np.zeros(x.shape[0]), np.zeros(x.shape[0])
    if _use_numba(backend):
        return _nb_cauchy_sum_real(x, t, w)
    return _np_cauchy_sum_real(x, t, w)


def _use_numba(backend):
    if backend is None:
        return NUMBA_AVAILABLE
    if backend == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but unavailable")
    return backend == "numba"
