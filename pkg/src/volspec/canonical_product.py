"""Generating function ``A(z) = v.p. prod (1 - z/t_n)`` of a spectrum.

The product runs over the materialized points plus (optionally) a stretch of
*virtual* points drawn from the tail descriptor.  Whatever lies beyond is
folded in as ``exp(-sum_k z^k S_k / k)`` with exact tail power sums ``S_k``.
Two-sided spectra are paired implicitly: the odd tail sums of mirrored
branches cancel, which is the principal-value convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import loggamma, zeta

from . import _kernels
from .errors import (DegeneracyError, ParameterError, ProductOverflowError,
                     ProximityError, TailDivergenceError)
from .spectra import Spectrum

PROXIMITY = 1e-12
DEGENERATE_GAP = 1e-14
MAX_TAIL_ORDER = 64
_LOG_OVERFLOW = 700.0

CLOSED_FORMS = ("squares", "livsic", "integers_punctured", "shifted_progression",
                "two_sided_power")


@dataclass
class ProductResult:
    value: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _log_hurwitz(s: float, q: float) -> float:
    """``log zeta(s, q)`` without underflow for large ``s log q``."""
    v = float(zeta(s, q))
    if v > 1e-280:
        return math.log(v)
    # (1 + m/q)^-s decays fast once zeta underflows
    total, m0, step = 0.0, 0, 4096
    while True:
        m = m0 + np.arange(step, dtype=float)
        terms = np.exp(-s * np.log1p(m / q))
        total += terms.sum()
        if terms[-1] < 1e-18 * total or m0 > 10**7:
            break
        m0 += step
    return -s * math.log(q) + math.log(total)


def _scaled_tail_sums(tail, order: int, ref: float) -> np.ndarray:
    """``S_k * ref**k`` for ``k = 1..order`` (index 0 unused)."""
    out = np.zeros(order + 1)
    for k in range(1, order + 1):
        pending = list(tail.branches)
        total = 0.0
        while pending:
            b = pending.pop(0)
            if k % 2 == 1:
                mate = next((o for o in pending if o.sign == -b.sign
                             and o.mirror_key() == b.mirror_key()), None)
                if mate is not None:
                    pending.remove(mate)
                    continue
            s = k * b.exponent
            if s <= 1.0:
                raise TailDivergenceError(
                    f"tail power sum of order {k} diverges (exponent {b.exponent}); "
                    "the product needs a higher-genus factor")
            lg = k * math.log(ref / b.scale) + _log_hurwitz(s, b.start + b.shift)
            total += b.multiplicity * (b.sign ** k) * math.exp(min(lg, _LOG_OVERFLOW))
        out[k] = total
    return out


class GeneratingFunction:
    """Evaluator of the normalized product with ``A(0) = 1``.

    Parameters
    ----------
    spectrum : Spectrum
    tail_order : {"auto", 0, 1, 2} or int
        Number of tail power sums folded into the correction factor.  ``"auto"``
        uses as many as needed (up to 64) and falls back to 2 when ``|z|`` comes
        within 10% of the first tail point.
    extend : float
        Virtual tail points per branch, as a multiple of ``spectrum.count``.
    strategy : {"numeric_product", "closed_form"}
    """

    def __init__(self, spectrum: Spectrum, tail_order="auto", extend: float = 1.0,
                 strategy: str = "numeric_product", backend: str | None = None):
        if strategy not in ("numeric_product", "closed_form"):
            raise ParameterError("strategy", f"unknown strategy {strategy!r}")
        if tail_order != "auto":
            if int(tail_order) != tail_order or not 0 <= tail_order <= MAX_TAIL_ORDER:
                raise ParameterError("tail_order", "must be 'auto' or an integer in [0, 64]")
            tail_order = int(tail_order)
        if extend < 0:
            raise ParameterError("extend", "must be >= 0")
        self.spectrum = spectrum
        self.strategy = strategy
        self.tail_order = tail_order
        self.extend = float(extend)
        self.backend = backend
        self.nodes = spectrum.points
        if strategy == "closed_form":
            self._closed = _closed_form(spectrum)
        n_virtual = int(round(self.extend * spectrum.count)) if spectrum.tail.known else 0
        virtual, rest = spectrum.tail.virtual_points(n_virtual)
        self.virtual = virtual
        self.factors = np.concatenate([self.nodes, virtual]) if virtual.size else self.nodes
        self.tail = rest
        self.tail_ref = rest.nearest()
        order = 0 if not rest.known else (MAX_TAIL_ORDER if tail_order == "auto" else tail_order)
        self._S = _scaled_tail_sums(rest, order, self.tail_ref) if order else np.zeros(1)
        self.gaps = np.diff(self.nodes)
        self._node_cache = None

    # ------------------------------------------------------------- tail
    def _orders(self, absz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-point series order and a flag for clamped (unreliable) points."""
        K = len(self._S) - 1
        if K == 0:
            return np.zeros(absz.shape, dtype=int), np.zeros(absz.shape, dtype=bool)
        ratio = absz / self.tail_ref
        if self.tail_order != "auto":
            return np.full(absz.shape, K), ratio >= 0.9
        with np.errstate(divide="ignore"):
            need = np.ceil(np.log(1e-17) / np.log(np.clip(ratio, 1e-300, 0.999)))
        k = np.clip(need, 1, K).astype(int)
        clamped = ratio >= 0.9
        k[clamped] = min(2, K)
        return k, clamped

    def tail_log_correction(self, z) -> tuple[np.ndarray, dict]:
        """``-sum_{k<=K} z^k S_k / k`` and diagnostics for each ``z``."""
        z = np.asarray(z, dtype=complex).ravel()
        K = len(self._S) - 1
        if K == 0:
            err = np.full(z.shape, np.nan if not self.tail.known else 0.0)
            return np.zeros(z.shape, dtype=complex), {
                "tail_order": 0, "tail_known": self.spectrum.tail.known,
                "tail_error_estimate": float(np.nanmax(err, initial=0.0))
                if self.tail.known else None, "clamped": 0}
        k_used, clamped = self._orders(np.abs(z))
        w = z / self.tail_ref
        corr = np.zeros(z.shape, dtype=complex)
        p = np.ones(z.shape, dtype=complex)
        err = np.zeros(z.shape)
        for k in range(1, K + 1):
            p = p * w
            term = p * self._S[k] / k
            corr -= np.where(k <= k_used, term, 0.0)
            err = np.where(k == k_used, np.abs(term) * np.abs(w), err)
        diag = {"tail_order": int(k_used.max()) if k_used.size else 0,
                "tail_known": True, "clamped": int(clamped.sum()),
                "tail_error_estimate": float(err.max()) if err.size else 0.0}
        return corr, diag

    # ------------------------------------------------------------- values
    def log_eval(self, z) -> tuple[np.ndarray, dict]:
        """Complex ``log A(z)`` (imaginary part defined mod 2 pi)."""
        z = np.asarray(z, dtype=complex).ravel()
        if self.strategy == "closed_form":
            return self._closed.log(z), {"strategy": "closed_form"}
        logs = _kernels.log1m_sum(z, self.factors, self.backend)
        corr, diag = self.tail_log_correction(z)
        diag.update(strategy="numeric_product", terms=int(self.nodes.size),
                    virtual_terms=int(self.virtual.size))
        return logs + corr, diag

    def evaluate(self, z) -> ProductResult:
        scalar = np.ndim(z) == 0
        lg, diag = self.log_eval(z)
        if np.any(lg.real > _LOG_OVERFLOW):
            raise ProductOverflowError("|A(z)| overflows double precision; use log_abs_eval")
        val = np.exp(lg)
        z_arr = np.asarray(z, dtype=complex).ravel()
        val[z_arr == 0] = 1.0
        real_axis = z_arr.imag == 0
        val[real_axis] = val[real_axis].real
        return ProductResult(val[0] if scalar else val, diag)

    def eval(self, z):
        """Value of ``A`` at ``z`` (scalar or array)."""
        return self.evaluate(z).value

    __call__ = eval

    def _check_proximity(self, z: np.ndarray):
        near = _nearest_node_distance(self.nodes, z)
        tol = PROXIMITY * np.maximum(1.0, np.abs(z))
        bad = near < tol
        if np.any(bad):
            raise ProximityError(f"z={z[bad][0]} lies within {PROXIMITY:g} of a node")

    def log_abs_eval(self, z):
        """``log|A(z)|``; safe against overflow."""
        scalar = np.ndim(z) == 0
        z = np.asarray(z, dtype=complex).ravel()
        self._check_proximity(z)
        if self.strategy == "closed_form":
            out = self._closed.log(z).real
        else:
            out = np.empty(z.size)
            real = z.imag == 0
            if np.any(real):
                la, _ = _kernels.log_abs_sign(z[real].real, self.factors, None, self.backend)
                out[real] = la
            if np.any(~real):
                out[~real] = _kernels.log1m_sum(z[~real], self.factors, self.backend).real
            out += self.tail_log_correction(z)[0].real
        return float(out[0]) if scalar else out

    # ------------------------------------------------------------- nodes
    def _check_gap(self, i: int):
        tol = DEGENERATE_GAP * max(1.0, abs(self.nodes[i]))
        left = self.gaps[i - 1] if i > 0 else np.inf
        right = self.gaps[i] if i < self.gaps.size else np.inf
        if min(left, right) < tol:
            raise DegeneracyError(f"node {self.nodes[i]} has a neighbour closer than {tol:g}")

    def node_log_derivatives(self, indices=None) -> tuple[np.ndarray, np.ndarray]:
        """``(log|A'(t_i)|, sign A'(t_i))`` for the given node positions."""
        if indices is None:
            if self._node_cache is None:
                la, sg = self.node_log_derivatives(np.arange(self.nodes.size))
                la.setflags(write=False)
                sg.setflags(write=False)
                self._node_cache = (la, sg)
            return self._node_cache
        idx = np.atleast_1d(indices)
        idx = np.asarray(idx, dtype=np.int64)
        if self.gaps.size:
            scale = DEGENERATE_GAP * np.maximum(1.0, np.abs(self.nodes[1:]))
            if np.any(self.gaps < scale):
                j = int(np.argmax(self.gaps < scale))
                raise DegeneracyError(
                    f"nodes {self.nodes[j]} and {self.nodes[j + 1]} are numerically coincident")
        t = self.nodes[idx]
        if self.strategy == "closed_form":
            d = self._closed.node_derivative(t, self)
            return np.log(np.abs(d)), np.sign(d)
        la, neg = _kernels.log_abs_sign(t, self.factors, idx, self.backend)
        corr = self.tail_log_correction(t)[0].real
        sign = np.where(neg % 2 == 0, 1.0, -1.0) * -np.sign(t)
        return la + corr - np.log(np.abs(t)), sign

    def deriv_at_node(self, i: int) -> float:
        """``A'(t_i)`` where ``i`` is the position in ``spectrum.points``."""
        if not -self.nodes.size <= i < self.nodes.size:
            raise IndexError(f"node index {i} outside the materialized range")
        i = i % self.nodes.size
        self._check_gap(i)
        la, sg = self.node_log_derivatives([i])
        if la[0] > _LOG_OVERFLOW:
            raise ProductOverflowError("|A'(t)| overflows; use node_log_derivatives")
        return float(sg[0] * math.exp(la[0]))

    def deriv_at_point(self, t: float) -> float:
        """``A'`` at the node equal to ``t``."""
        i = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ParameterError("t", f"{t} is not a node")
        return self.deriv_at_node(i)


def _nearest_node_distance(nodes: np.ndarray, z: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(nodes, z.real)
    lo = nodes[np.clip(pos - 1, 0, nodes.size - 1)]
    hi = nodes[np.clip(pos, 0, nodes.size - 1)]
    return np.minimum(np.abs(z - lo), np.abs(z - hi))


# ------------------------------------------------------------- closed forms

class _ClosedForm:
    """Closed-form ``log A`` for a family; derivatives by a Cauchy integral."""

    def __init__(self, logfn, tag):
        self._log = logfn
        self.tag = tag

    def log(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape, dtype=complex)
        nz = z != 0
        out[nz] = self._log(z[nz])
        return out

    def node_derivative(self, t, g: GeneratingFunction, m: int = 32):
        """Trapezoid rule on a circle of radius a quarter of the local gap."""
        t = np.atleast_1d(t).astype(float)
        pos = np.searchsorted(g.nodes, t)
        gap = np.full(t.shape, np.inf)
        if g.gaps.size:
            left = np.where(pos > 0, g.gaps[np.clip(pos - 1, 0, g.gaps.size - 1)], np.inf)
            right = np.where(pos < g.gaps.size, g.gaps[np.clip(pos, 0, g.gaps.size - 1)], np.inf)
            gap = np.minimum(left, right)
        r = 0.25 * np.minimum(gap, np.maximum(1.0, np.abs(t)))
        theta = 2 * np.pi * (np.arange(m) + 0.5) / m
        w = np.exp(1j * theta)
        zc = t[:, None] + r[:, None] * w[None, :]
        la = self.log(zc.ravel()).reshape(zc.shape)
        shift = la.real.max(axis=1, keepdims=True)
        vals = np.exp(la - shift)
        d = (vals * np.conj(w)[None, :]).mean(axis=1) / r
        return (d * np.exp(shift[:, 0])).real


def _log_sin(v):
    # log sin v without overflow for large |Im v|
    v = np.asarray(v, dtype=complex)
    up = v.imag > 0
    out = np.empty(v.shape, dtype=complex)
    vu, vd = v[up], v[~up]
    out[up] = -1j * vu + np.log1p(-np.exp(2j * vu)) - np.log(-2j)
    out[~up] = 1j * vd + np.log1p(-np.exp(-2j * vd)) - np.log(2j)
    return out


def _log_cos(v):
    return _log_sin(np.asarray(v, dtype=complex) + np.pi / 2)


def _log_sinc(u):
    """``log(sin(pi u) / (pi u))``."""
    u = np.asarray(u, dtype=complex)
    return _log_sin(np.pi * u) - np.log(np.pi * u)


def _closed_form(s: Spectrum) -> _ClosedForm:
    fam, p = s.family, s.params
    if p.get("edits"):
        raise ParameterError("strategy", "closed form unavailable for an edited spectrum")

    def extra(t0):
        if t0 is None:
            return lambda z: 0.0
        return lambda z: np.log(1 - z / t0)

    if fam == "squares":
        n0 = int(p.get("n0", 1))
        lower = (np.arange(1, n0, dtype=float)) ** 2

        def f(z):
            out = _log_sinc(np.sqrt(z))
            for q in lower:
                out = out - np.log(1 - z / q)
            return out
        return _ClosedForm(f, "squares")
    if fam == "livsic":
        c = float(p.get("c", 1.0))
        return _ClosedForm(lambda z: _log_cos(np.pi * c * z), "livsic")
    if fam == "integers_punctured":
        ex = extra(p.get("t0"))
        return _ClosedForm(lambda z: _log_sinc(z) + ex(z), "integers_punctured")
    if fam == "shifted_progression":
        a = float(p["a"])
        return _ClosedForm(
            lambda z: 2 * loggamma(a) - loggamma(a - z) - loggamma(a + z),
            "shifted_progression")
    if fam == "two_sided_power" and float(p["gamma"]) in (1.0, 2.0):
        ex = extra(p.get("t0"))
        if float(p["gamma"]) == 1.0:
            return _ClosedForm(lambda z: _log_sinc(z) + ex(z), "two_sided_power")
        # prod (1 - z^2/n^4) = sinc(sqrt z) * sinc(i sqrt z)
        return _ClosedForm(
            lambda z: _log_sinc(np.sqrt(z)) + _log_sinc(1j * np.sqrt(z)) + ex(z),
            "two_sided_power")
    raise ParameterError("strategy", f"no closed form for family {fam!r}")
