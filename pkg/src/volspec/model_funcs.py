"""Functional-model functions of rank-one perturbation data.

With Herglotz weights ``w_n = |b_n|^2 mu_n`` and coefficients ``c_n``::

    rho(z)   = delta_rho + sum w_n (1/(t_n - z) - 1/t_n)
    beta(z)  = delta     + sum c_n (1/(t_n - z) - 1/t_n)
    Theta    = (i - rho) / (i + rho)
    phi      = beta (1 + Theta) / 2
    E        = 2 A / (1 + Theta) = A (1 - i rho),   B = A rho

For real data the zero set of ``beta`` in the plane is the spectrum of the
perturbed operator; :meth:`ModelEvaluator.count_zeros` counts it with the
argument principle.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .canonical_product import GeneratingFunction
from .errors import (ConditioningError, ContourError, ExtrapolationError, ParameterError,
                     PatternError, ProximityError, ResolutionError)
from .perturb_synth import PerturbationData

PROXIMITY = 1e-12
CONDITIONING = 1e-14
MIN_CONTOUR_ABS = 1e-10
MAX_PHASE_STEP = math.pi / 4
EPS_LADDER = (1e-2, 1e-3, 1e-4)
_TAIL_ORDER = 48
_EPS = np.finfo(float).eps


# ------------------------------------------------------------------ tails

class _SideTail:
    """Tail of ``sum w (1/(t - z) - 1/t)`` for one side of the spectrum."""

    def __init__(self, kind, weight=None, exponent=0.0, sums=None, ref=None, err=0.0):
        self.kind = kind          # analytic | euler | none
        self.weight = weight      # C in w = C |t|^s (analytic)
        self.exponent = exponent
        self.sums = sums          # scaled sums for analytic kind
        self.ref = ref
        self.err = err

    def series(self, z):
        # sum_tail C|t|^s z/(t(t-z)) = C sum_k z^k sum_tail |t|^s t^-(k+1)
        w = z / self.ref
        out = np.zeros(z.shape, dtype=complex)
        p = np.ones(z.shape, dtype=complex)
        for k in range(1, len(self.sums)):
            p = p * w
            out += p * self.sums[k]
        return self.weight * out


def _branch_sums_with_power(branch, s, order, ref):
    """``ref**k * sum_m |t_m|^s t_m^-(k+1)`` for ``k = 1..order``."""
    from .canonical_product import _log_hurwitz
    out = np.zeros(order + 1)
    for k in range(1, order + 1):
        expo = branch.exponent * (k + 1 - s)
        if expo <= 1:
            raise ParameterError("tail", "weighted tail sum diverges")
        lg = (k + 1) * math.log(ref / branch.scale) + s * math.log(branch.scale) \
            + _log_hurwitz(expo, branch.start + branch.shift) - math.log(ref)
        out[k] = branch.multiplicity * (branch.sign ** (k + 1)) * math.exp(min(lg, 700.0))
    return out


def _side_tail(t_side, w_side, branch, policy):
    """Pick the tail treatment for one side (``t_side`` ordered by |t|)."""
    if policy == "none" or t_side.size < 4:
        return _SideTail("none")
    last = slice(-16, None)
    tt, ww = np.abs(t_side[last]), w_side[last]
    nz = ww != 0
    if not np.all(nz):
        return _SideTail("none")
    ph = ww / np.abs(ww)
    if branch is not None and policy in ("auto", "analytic") and np.allclose(ph, ph[-1], rtol=0, atol=1e-12):
        s, logC = np.polyfit(np.log(tt), np.log(np.abs(ww)), 1)
        s_round = round(s)
        resid = np.log(np.abs(ww)) - (s_round * np.log(tt) + logC)
        if abs(s - s_round) < 1e-6 and np.max(np.abs(resid - resid.mean())) < 1e-9:
            C = ph[-1] * math.exp(logC + resid.mean())
            ref = branch.first()
            try:
                sums = _branch_sums_with_power(branch, s_round, _TAIL_ORDER, ref)
            except ParameterError:
                return _SideTail("none")
            return _SideTail("analytic", C, s_round, sums, ref)
    if policy in ("auto", "euler") and np.allclose(ph[1:], -ph[:-1], rtol=0, atol=1e-12):
        return _SideTail("euler")
    return _SideTail("none")


# ------------------------------------------------------------------ reports

@dataclass
class WindingReport:
    rect: tuple
    poles: int
    winding: int
    zeros: int
    min_abs: float
    depth: int
    samples: int
    clearance: float
    function: str = "beta"
    notes: list = field(default_factory=list)
    contour: np.ndarray | None = field(default=None, repr=False)
    values: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        return {"rect": list(self.rect), "poles": self.poles, "winding": self.winding,
                "zeros": self.zeros, "min_abs": self.min_abs, "depth": self.depth,
                "samples": self.samples, "clearance": self.clearance,
                "function": self.function, "notes": self.notes}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def contour_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("x", "y", "Re_beta", "Im_beta", "phase"))
        phase = np.concatenate([[0.0], np.cumsum(np.angle(self.values[1:] / self.values[:-1]))])
        phase += np.angle(self.values[0])
        for z, v, p in zip(self.contour, self.values, phase):
            w.writerow([repr(z.real), repr(z.imag), repr(v.real), repr(v.imag), repr(p)])
        return out.getvalue()


# ------------------------------------------------------------------ evaluator

class ModelEvaluator:
    """Coupled evaluators for the model functions of ``data``.

    Parameters
    ----------
    data : PerturbationData
    g : GeneratingFunction, optional
        Defaults to the numeric product of ``data.spectrum``.
    tail : {"auto", "analytic", "euler", "none"}
        Treatment of the truncated Cauchy sums.  ``auto`` adds the exact tail
        when weights follow ``C |t|^s`` with constant phase on a declared tail
        branch, applies second-order Euler averaging when they alternate, and
        otherwise truncates.
    N : int, optional
        Use only the ``N`` nodes of smallest modulus.
    """

    def __init__(self, data: PerturbationData, g: GeneratingFunction | None = None,
                 tail: str = "auto", N: int | None = None, backend: str | None = None,
                 _keep_tail: bool = False):
        if tail not in ("auto", "analytic", "euler", "none"):
            raise ParameterError("tail", f"unknown tail policy {tail!r}")
        self.data = data
        self.backend = backend
        self.g = g or GeneratingFunction(data.spectrum)
        order = data.spectrum.by_modulus()
        if N is not None:
            if not 1 <= N <= order.size:
                raise ParameterError("N", f"must lie in [1, {order.size}]")
            order = order[:N]
        self.truncated = N is not None and N < len(data.spectrum)
        self.t = data.t[order]
        self.w_rho = data.herglotz_weights[order].astype(complex)
        self.w_beta = data.c[order]
        self.delta = data.delta
        self.delta_rho = data.delta_rho
        # a truncated sum is meant literally unless the caller wants the tail estimate
        self.tail_policy = "none" if self.truncated and not _keep_tail else tail
        self._tails = {}
        self._weights = {}
        for name, w in (("rho", self.w_rho), ("beta", self.w_beta)):
            ww = w.copy()
            tails = {}
            for side, mask in (("+", self.t > 0), ("-", self.t < 0)):
                idx = np.flatnonzero(mask)
                branch = self._branch(side)
                st = _side_tail(self.t[idx], w[idx], branch, self.tail_policy)
                if st.kind == "euler" and idx.size >= 3:
                    ww[idx[-1]] *= 0.25
                    ww[idx[-2]] *= 0.75
                tails[side] = st
            self._tails[name] = tails
            self._weights[name] = ww
        self.nodes_sorted = np.sort(self.t)

    def _branch(self, side):
        if self.truncated:
            return None
        sgn = 1 if side == "+" else -1
        cands = [b for b in self.data.spectrum.tail.branches
                 if b.sign == sgn and b.multiplicity == 1]
        return cands[0] if len(cands) == 1 else None

    @property
    def tail_kinds(self) -> dict:
        return {name: {s: st.kind for s, st in tails.items()} for name, tails in self._tails.items()}

    # ------------------------------------------------------------- sums
    def _check(self, z):
        d = _nearest(self.nodes_sorted, z)
        if np.any(d < PROXIMITY * np.maximum(1.0, np.abs(z))):
            raise ProximityError("evaluation point coincides with a node")

    def _sum(self, name, z):
        z = np.asarray(z, dtype=complex).ravel()
        out = _kernels.cauchy_sum(z, self.t, self._weights[name], self.backend)
        for st in self._tails[name].values():
            if st.kind == "analytic":
                out = out + st.series(z)
        return out

    def _wrap(self, fn, z, check=True):
        scalar = np.ndim(z) == 0
        zz = np.asarray(z, dtype=complex).ravel()
        if check:
            self._check(zz)
        out = fn(zz)
        return out[0] if scalar else out

    def rho(self, z):
        return self._wrap(lambda z: self.delta_rho + self._sum("rho", z), z)

    def beta(self, z):
        return self._wrap(lambda z: self.delta + self._sum("beta", z), z)

    def theta(self, z):
        r = self.rho(z)
        return (1j - r) / (1j + r)

    def phi(self, z):
        return self.beta(z) * (1 + self.theta(z)) / 2

    def phi_tilde(self, z):
        zc = np.conj(np.asarray(z, dtype=complex))
        return self.theta(z) * np.conj(self.phi(zc))

    def A(self, z):
        return self.g.eval(z)

    def B(self, z):
        return self.A(z) * self.rho(z)

    def E(self, z):
        """``2A/(1 + Theta)``, evaluated as ``A (1 - i rho)``."""
        r = self.rho(z)
        one_plus = np.abs(2j / (1j + r))
        if np.any(one_plus < CONDITIONING):
            raise ConditioningError("|1 + Theta| below 1e-14; E is ill-conditioned here")
        return self.A(z) * (1 - 1j * r)

    def E_sharp(self, z):
        zc = np.conj(np.asarray(z, dtype=complex))
        return np.conj(self.E(zc))

    def truncation_error(self, z) -> dict:
        """Rough size of the omitted Cauchy tail per function (0 if handled)."""
        z = np.asarray(z, dtype=complex).ravel()
        out = {}
        for name, w in (("rho", self.w_rho), ("beta", self.w_beta)):
            est = 0.0
            for side, mask in (("+", self.t > 0), ("-", self.t < 0)):
                kind = self._tails[name][side].kind
                if kind == "analytic" or not mask.any():
                    continue
                tl = self.t[mask][-1]
                last = np.abs(w[mask][-1] * z / (tl * (tl - z)))
                est += float(np.max(last)) * (1.0 if kind == "euler" else mask.sum())
            out[name] = est
        return out

    def beta_decay_profile(self, ys=(1e1, 1e2, 1e3, 1e4)) -> dict:
        """``|beta(iy)|`` with an error floor per ``y``.

        The floor is the change against the same evaluation on half the nodes
        plus the rounding of the summed terms; values at or below it are
        numerically zero.  ``decreasing`` allows 5% noise above the floor.
        """
        ys = np.asarray(ys, dtype=float)
        z = 1j * ys
        vals = np.abs(self.beta(z))
        half = ModelEvaluator(self.data, self.g, self.tail_policy, max(self.t.size // 2, 1),
                              self.backend, _keep_tail=True)
        terms = np.abs(self._weights["beta"][None, :] * z[:, None]
                       / (self.t[None, :] * (self.t[None, :] - z[:, None]))).sum(axis=1)
        floor = np.abs(self.beta(z) - half.beta(z)) + 64 * _EPS * (abs(self.delta) + terms)
        eff = np.where(vals <= floor, 0.0, vals)
        decreasing = bool(np.all(eff[1:] <= 1.05 * eff[:-1]))
        return {"y": ys.tolist(), "abs_beta": vals.tolist(), "floor": floor.tolist(),
                "decreasing": decreasing}

    # ------------------------------------------------------------- Clark mass
    def clark_mass(self, i: int, ladder=EPS_LADDER) -> float:
        """Point mass of the Clark measure at node position ``i`` (|t| order)."""
        if not 0 <= i < self.t.size:
            raise ParameterError("n", "node index outside materialized range")
        ladder = sorted(ladder, reverse=True)
        t = self.t[i]
        vals = np.array([eps * self.rho(t + 1j * eps).imag for eps in ladder])
        # m(eps) = w + O(eps^2): Richardson on the two finest rungs
        r = (ladder[-2] / ladder[-1]) ** 2
        est = vals[-1] + (vals[-1] - vals[-2]) / (r - 1)
        d1, d2 = abs(vals[1] - vals[0]), abs(vals[-1] - vals[-2])
        scale = max(abs(est), 1e-300)
        if d2 > d1 * 1.01 and d2 > 1e-12 * scale:
            raise ExtrapolationError(f"ladder {ladder} does not converge: {vals.tolist()}")
        return float(est)

    def mass_at_infinity(self, ys=(1e2, 1e3, 1e4)) -> list[float]:
        """``Im rho(iy) / y``; tends to 0 when there is no mass at infinity."""
        return [float(self.rho(1j * y).imag / y) for y in ys]

    # ------------------------------------------------------------- winding
    def default_rect(self, radius: float | None = None) -> tuple:
        R = radius if radius is not None else min(0.5 * float(np.max(np.abs(self.t))), 30.0)
        x0, x1 = _clear(self.nodes_sorted, -R), _clear(self.nodes_sorted, R)
        return (x0, x1, -R, R)

    def count_zeros(self, rect="auto", fn: str = "beta", m0: int = 64,
                    max_depth: int = 40, max_samples: int = 2_000_000,
                    keep_contour: bool = False) -> WindingReport:
        """Zeros of ``beta`` (or ``g``) inside ``rect = (x0, x1, y0, y1)``."""
        rect = self.default_rect() if rect == "auto" else tuple(float(v) for v in rect)
        x0, x1, y0, y1 = rect
        if not (x0 < x1 and y0 < y1):
            raise ParameterError("rect", "need x0 < x1 and y0 < y1")
        func = {"beta": self.beta, "g": self.livsic_value}[fn]
        clearance = self._clearance(rect)
        corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
        zs, vals, depth = [], [], 0
        for a, b in zip(corners, corners[1:] + corners[:1]):
            z, v, d = _track_edge(func, a, b, m0, max_depth, max_samples, self._resolvable(fn))
            zs.append(z[:-1])
            vals.append(v[:-1])
            depth = max(depth, d)
        z = np.concatenate(zs)
        v = np.concatenate(vals)
        min_abs = float(np.min(np.abs(v)))
        if min_abs < MIN_CONTOUR_ABS:
            raise ContourError(f"|{fn}| = {min_abs:.3g} on the contour; a zero is too close",
                               rect)
        steps = np.angle(np.roll(v, -1) / v)
        winding = int(round(steps.sum() / (2 * np.pi)))
        # a node with zero coefficient is a removable point of beta, not a pole
        inside = (self.t > x0) & (self.t < x1) & (self.w_beta != 0)
        poles = int(inside.sum()) if (y0 < 0 < y1 and fn == "beta") else 0
        rep = WindingReport(rect, poles, winding, winding + poles, min_abs, depth, int(z.size),
                            clearance, fn)
        if rep.zeros < 0:
            rep.notes.append("negative zero count: contour under-resolved")
        if keep_contour:
            rep.contour, rep.values = z, v
        return rep

    def _clearance(self, rect) -> float:
        x0, x1, y0, y1 = rect
        if not (y0 <= 0 <= y1):
            return float(min(abs(y0), abs(y1)))
        d = [float(np.min(np.abs(self.nodes_sorted - x))) for x in (x0, x1)]
        gaps = []
        for x in (x0, x1):
            k = np.searchsorted(self.nodes_sorted, x)
            lo = self.nodes_sorted[max(k - 1, 0)]
            hi = self.nodes_sorted[min(k, self.nodes_sorted.size - 1)]
            gaps.append(max(hi - lo, 1e-300))
        rel = min(di / gi for di, gi in zip(d, gaps))
        if rel < 1e-3:
            raise ContourError("contour passes within 1e-3 local gaps of a node", rect)
        return min(d)

    def _resolvable(self, fn):
        if fn != "g":
            return None

        def bound(z, v):
            # rounding in -A + i A rho relative to the size of g
            r = self.rho(z)
            scale = np.abs(self.A(z)) * (1 + np.abs(r))
            return 64 * _EPS * scale < 0.25 * np.abs(v)
        return bound

    def perturbed_rect(self, rect, frac: float = 0.1) -> tuple:
        """Shift every side outward by ``frac`` of the local node gap."""
        x0, x1, y0, y1 = rect

        def gap_at(x):
            k = np.searchsorted(self.nodes_sorted, x)
            lo = self.nodes_sorted[max(k - 1, 0)]
            hi = self.nodes_sorted[min(k, self.nodes_sorted.size - 1)]
            return float(hi - lo) if hi > lo else 1.0
        gx0, gx1 = gap_at(x0), gap_at(x1)
        return (x0 - frac * gx0, x1 + frac * gx1, y0 - frac * gx0, y1 + frac * gx1)

    # ------------------------------------------------------------- dissipative case
    def livsic_value(self, z):
        """``g = -A + i(B - delta_rho A) = A beta`` for dissipative data."""
        return self.A(z) * (-1 + 1j * (self.rho(z) - self.delta_rho))

    def livsic_g(self, rect=(-10.0, 10.0, -10.0, 10.0), ys=None) -> dict:
        """Zero-freeness report for ``g``.

        Returns a dict with the winding report (or the contour failure) over
        ``rect`` and the least-squares slope of ``log|g(iy)|`` on ``y in [2, 20]``.
        """
        if not self.data.dissipative_pattern():
            raise PatternError("livsic_g needs a = i b and delta = -1")
        ys = np.linspace(2.0, 20.0, 37) if ys is None else np.asarray(ys, dtype=float)
        lg = self.g.log_abs_eval(1j * ys) + np.log(np.abs(-1 + 1j * (self.rho(1j * ys)
                                                                     - self.delta_rho)))
        slope, icpt = np.polyfit(ys, lg, 1)
        out = {"slope": float(slope), "slope_rel_err_vs_pi": float(abs(slope / math.pi - 1)),
               "rect": list(rect)}
        try:
            out["winding"] = self.count_zeros(rect, fn="g").to_dict()
        except (ContourError, ResolutionError) as exc:
            out["winding"] = None
            out["winding_error"] = str(exc)
        return out


# ------------------------------------------------------------------ helpers

def _nearest(nodes, z):
    z = np.asarray(z, dtype=complex)
    k = np.searchsorted(nodes, z.real)
    lo = nodes[np.clip(k - 1, 0, nodes.size - 1)]
    hi = nodes[np.clip(k, 0, nodes.size - 1)]
    return np.minimum(np.abs(z - lo), np.abs(z - hi))


def _clear(nodes, x):
    """Move ``x`` to the midpoint of the node gap containing it."""
    k = np.searchsorted(nodes, x)
    if k == 0 or k == nodes.size:
        return float(x)
    return float(0.5 * (nodes[k - 1] + nodes[k]))


def _track_edge(func, a, b, m0, max_depth, max_samples, resolvable=None):
    """Sample ``func`` on segment [a, b] until every phase step is < pi/4."""
    s = np.linspace(0.0, 1.0, m0 + 1)
    v = np.asarray(func(a + (b - a) * s), dtype=complex)
    depth = 0
    while True:
        if resolvable is not None:
            ok = resolvable(a + (b - a) * s, v)
            if not np.all(ok):
                bad = a + (b - a) * s[~ok][0]
                raise ContourError(
                    f"g is below double-precision resolution at z={bad:.4g}: rounding of "
                    "-A + iB exceeds a quarter of |g| there", (a, b))
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.abs(np.angle(v[1:] / v[:-1]))
        bad = ~(step < MAX_PHASE_STEP)
        if not bad.any():
            return a + (b - a) * s, v, depth
        depth += 1
        if depth > max_depth or s.size > max_samples:
            raise ResolutionError(f"phase tracking did not resolve edge {a}->{b}",
                                  [(a + (b - a) * s[i], a + (b - a) * s[i + 1])
                                   for i in np.flatnonzero(bad)[:10]])
        mid = 0.5 * (s[:-1][bad] + s[1:][bad])
        vm = np.asarray(func(a + (b - a) * mid), dtype=complex)
        s = np.concatenate([s, mid])
        v = np.concatenate([v, vm])
        order = np.argsort(s, kind="stable")
        s, v = s[order], v[order]
