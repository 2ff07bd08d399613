"""Inductive reweighting that keeps ``1/((x+i)E)`` square-integrable while
driving ``1/E`` out of ``L^2``.

With base Herglotz weights ``nu0`` and constant ``r0``,

    E_k(x) = A(x) eta_k(x),   eta_k = 1 - i r0 - i sum_n nu_{n,k} (1/(t_n - x) - 1/t_n),

where ``nu_{n,k}`` differs from ``nu0`` only at the indices chosen in steps
1..k.  On the real line ``|eta_k|^2 = 1 + (r0 + rho_k)^2`` with ``rho_k``
strictly increasing between consecutive nodes, so every peak of ``1/|E_k|``
sits at the unique root of ``r0 + rho_k`` in a node interval and has width
about ``1/rho_k'``.  Quadrature panels are graded geometrically around those
roots.  Beyond the materialized window the integrals are extended by a
geometric shell extrapolation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .canonical_product import GeneratingFunction
from .errors import (BracketError, InitializationError, MaterializationError, ParameterError,
                     QuadratureError)
from .model_funcs import ModelEvaluator
from .perturb_synth import PerturbationData, divergence_proxy
from .spectra import Spectrum

MAX_STEPS = 6
QUAD_TOL = 1e-6
GROWTH_MIN = 0.45
TAU_EDGE = 1e-6       # tau_k sits this far (relative) above t_{n_k} under the floor rule
_GL_M = 8
_GRADE = 6.0


def _gl(m):
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1), 0.5 * w


class _Tails:
    """Real-axis value and slope of the analytic tail series of rho."""

    def __init__(self, me: ModelEvaluator):
        self.parts = [st for st in me._tails["rho"].values() if st.kind == "analytic"]

    def __call__(self, x):
        val = np.zeros_like(x)
        der = np.zeros_like(x)
        for st in self.parts:
            u = x / st.ref
            p = np.ones_like(x)
            v = np.zeros_like(x)
            d = np.zeros_like(x)
            for k in range(1, len(st.sums)):
                d += k * p * st.sums[k].real / st.ref
                p = p * u
                v += p * st.sums[k].real
            C = complex(st.weight).real
            val += C * v
            der += C * d
        return val, der


class _Engine:
    """Shared, read-only evaluation machinery for one base configuration."""

    def __init__(self, spectrum: Spectrum, g: GeneratingFunction, nu0: np.ndarray, r0: float,
                 backend=None, window=None):
        self.spectrum = spectrum
        self.g = g
        self.nu0 = nu0
        self.r0 = float(r0)
        self.backend = backend
        ones = np.ones(len(spectrum))
        carrier = PerturbationData(spectrum, nu0, ones.astype(complex), ones.astype(complex), 1.0)
        self.me = ModelEvaluator(carrier, g=g, tail="auto", backend=backend)
        self.w = self.me._weights["rho"].real.copy()
        self.t = self.me.t
        self.tails = _Tails(self.me)
        pts = spectrum.points
        pos, neg = pts[pts > 0], pts[pts < 0]
        if pos.size and neg.size:
            X = 0.5 * min(pos[-1], -neg[0])
        else:
            X = 0.5 * float(np.max(np.abs(pts)))
        if window is not None:
            X = min(X, float(window))
        self.X = X
        self.nodes = pts[np.abs(pts) < X]
        self.xg, self.wg = _gl(_GL_M)

    # -- base functions ------------------------------------------------
    def rho0(self, x):
        s, d = _kernels.cauchy_sum_real(x, self.t, self.w, self.backend)
        tv, td = self.tails(x)
        return s + tv, d + td

    def log_abs_A(self, x):
        return np.asarray(self.g.log_abs_eval(x.astype(complex)), dtype=float)

    # -- root-graded breakpoints --------------------------------------
    def _roots(self, lo, hi, rho_fn):
        """Root of r0 + rho in each open interval (nan where absent)."""
        a = lo.copy()
        b = hi.copy()
        fa = np.where(np.isfinite(lo), -np.inf, 0.0)
        fb = np.where(np.isfinite(hi), np.inf, 0.0)
        # intervals bounded by the window rather than a node need a sign test
        open_lo = ~np.isfinite(lo)
        open_hi = ~np.isfinite(hi)
        a[open_lo] = -self.X
        b[open_hi] = self.X
        if open_lo.any():
            fa[open_lo] = self.r0 + rho_fn(a[open_lo])[0]
        if open_hi.any():
            fb[open_hi] = self.r0 + rho_fn(b[open_hi])[0]
        has = (fa < 0) & (fb > 0)
        root = np.full(lo.shape, np.nan)
        slope = np.full(lo.shape, np.nan)
        idx = np.flatnonzero(has)
        if idx.size == 0:
            return root, slope
        a, b = a[idx], b[idx]
        span = b - a
        a = a + 1e-9 * span
        b = b - 1e-9 * span
        x = 0.5 * (a + b)
        for _ in range(100):
            f, fp = rho_fn(x)
            f = f + self.r0
            a = np.where(f < 0, x, a)
            b = np.where(f > 0, x, b)
            with np.errstate(divide="ignore", invalid="ignore"):
                xn = x - f / fp
            bad = ~((xn > a) & (xn < b))
            xn[bad] = 0.5 * (a[bad] + b[bad])
            done = np.abs(f) < 1e-3
            x = np.where(done, x, xn)
            if done.all():
                break
        f, fp = rho_fn(x)
        root[idx] = x
        slope[idx] = fp
        return root, slope

    def breakpoints(self, rho_fn, lo_bound=None, hi_bound=None):
        """Graded breakpoints for the window (or a sub-window between two nodes)."""
        nodes = self.nodes
        if lo_bound is not None:
            nodes = nodes[(nodes > lo_bound) & (nodes < hi_bound)]
            edges_lo = np.concatenate([[lo_bound], nodes])
            edges_hi = np.concatenate([nodes, [hi_bound]])
        else:
            edges_lo = np.concatenate([[-np.inf], nodes])
            edges_hi = np.concatenate([nodes, [np.inf]])
        root, slope = self._roots(edges_lo, edges_hi, rho_fn)
        lo = np.where(np.isfinite(edges_lo), edges_lo, -self.X)
        hi = np.where(np.isfinite(edges_hi), edges_hi, self.X)
        pts = [lo, hi]
        L = hi - lo
        ok = np.isfinite(root)
        width = np.where(ok, 1.0 / np.where(ok & (slope > 0), slope, 1.0), np.nan)
        floor = 1e-9 * np.maximum(1.0, np.abs(root))
        # a peak narrower than this (or closer to a node) cannot be sampled in double
        gap = np.minimum(root - lo, hi - root)
        thin = ok & ((width < floor) | (gap < 1e3 * floor))
        if thin.any():
            j = int(np.flatnonzero(thin)[0])
            raise QuadratureError(f"peak of 1/|E| at x={root[j]:.6g} (width {width[j]:.3g}, "
                                  f"node distance {gap[j]:.3g}) is below double-precision "
                                  "resolution")
        steps = _GRADE ** np.arange(-1, 40)
        for sgn in (-1.0, 1.0):
            cand = root[ok, None] + sgn * width[ok, None] * steps[None, :]
            inside = (cand > lo[ok, None]) & (cand < hi[ok, None])
            pts.append(cand[inside])
        pts.append(root[ok])
        # geometric grading toward each node end
        frac = 2.0 ** -np.arange(1, 6)
        pts.append((lo[:, None] + L[:, None] * frac[None, :]).ravel())
        pts.append((hi[:, None] - L[:, None] * frac[None, :]).ravel())
        # dyadic shells at the window edges (used by the tail extrapolation)
        if lo_bound is None:
            shells = self.X * 2.0 ** -np.arange(0, 6)
            pts.append(shells)
            pts.append(-shells)
        bp = np.unique(np.concatenate(pts))
        if lo_bound is None:
            bp = bp[(bp >= -self.X) & (bp <= self.X)]
        return bp

    def panel_points(self, bp, m=None):
        xg, wg = (self.xg, self.wg) if m is None else _gl(m)
        lo, hi = bp[:-1], bp[1:]
        h = hi - lo
        keep = h > 1e-13 * np.maximum(1.0, np.abs(lo))
        lo, hi, h = lo[keep], hi[keep], h[keep]
        x = (lo[:, None] + h[:, None] * xg[None, :]).ravel()
        w = (h[:, None] * wg[None, :]).ravel()
        pid = np.repeat(np.arange(lo.size), xg.size)
        return x, w, lo, hi, pid


@dataclass
class _Grid:
    x: np.ndarray
    w: np.ndarray
    la: np.ndarray
    rho: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    pid: np.ndarray

    def restricted(self, keep_panels):
        pm = keep_panels[self.pid]
        remap = np.cumsum(keep_panels) - 1
        return _Grid(self.x[pm], self.w[pm], self.la[pm], self.rho[pm], self.lo[keep_panels],
                     self.hi[keep_panels], remap[self.pid[pm]])

    @staticmethod
    def merged(a, b):
        n = a.lo.size
        return _Grid(np.concatenate([a.x, b.x]), np.concatenate([a.w, b.w]),
                     np.concatenate([a.la, b.la]), np.concatenate([a.rho, b.rho]),
                     np.concatenate([a.lo, b.lo]), np.concatenate([a.hi, b.hi]),
                     np.concatenate([a.pid, b.pid + n]))


@dataclass
class NuStarState:
    """Inductive state after ``k`` steps.  ``indices`` point into ``spectrum.points``."""
    k: int
    side: int
    nu0: np.ndarray
    r0: float
    indices: list
    nu_prime: list
    tau: list
    norms: list
    checks: list
    notes: list = field(default_factory=list)
    _engine: _Engine | None = field(default=None, repr=False, compare=False)
    _grid: _Grid | None = field(default=None, repr=False, compare=False)

    @property
    def t_chosen(self) -> list:
        pts = self._engine.spectrum.points
        return [float(pts[i]) for i in self.indices]

    @property
    def tau_current(self) -> float:
        return self.tau[-1]

    def log_entry(self, k=None) -> dict:
        k = self.k if k is None else k
        out = {"k": k, "tau": self.tau[k], "norms": self.norms[k], "checks": self.checks[k]}
        if k >= 1:
            out["n_k"] = int(self.indices[k - 1])
            out["t_n_k"] = self.t_chosen[k - 1]
            out["nu_prime_k"] = self.nu_prime[k - 1]
            out["nu_n_k"] = float(self.nu0[self.indices[k - 1]])
        return out

    def to_json(self, **kw) -> str:
        kw.setdefault("indent", 2)
        log = [self.log_entry(j) for j in range(self.k + 1)]
        return json.dumps({"r0": self.r0, "side": self.side, "steps": log,
                           "notes": self.notes}, **kw)


# --------------------------------------------------------------- evaluation

def _modification(state: NuStarState):
    """``(t, nu0 - nu')`` for the modified indices."""
    pts = state._engine.spectrum.points
    t = np.array([pts[i] for i in state.indices], dtype=float)
    d = np.array([state.nu0[i] - nu for i, nu in zip(state.indices, state.nu_prime)], dtype=float)
    return t, d


def _rho_k_fn(engine: _Engine, t_mod, d_mod):
    def fn(x):
        r, dr = engine.rho0(x)
        if t_mod.size:
            inv = 1.0 / (t_mod[None, :] - x[:, None])
            r = r - (d_mod * (x[:, None] * inv / t_mod)).sum(axis=1)
            dr = dr - (d_mod * inv * inv).sum(axis=1)
        return r, dr
    return fn


def _evaluate(engine: _Engine, bp, rho_fn, m=None) -> _Grid:
    x, w, lo, hi, pid = engine.panel_points(bp, m)
    return _Grid(x, w, engine.log_abs_A(x), rho_fn(x)[0], lo, hi, pid)


def _local_grid(engine: _Engine, base: _Grid, t_mod, d_mod) -> _Grid:
    """Base grid with the node intervals next to modified nodes regraded."""
    if not t_mod.size:
        return base
    nodes = engine.nodes
    rho_fn = _rho_k_fn(engine, t_mod, d_mod)
    drop = np.zeros(base.lo.size, dtype=bool)
    extra = []
    for tm in t_mod:
        j = np.searchsorted(nodes, tm)
        left = nodes[j - 1] if j >= 1 else -engine.X
        right = nodes[j + 1] if j + 1 < nodes.size else engine.X
        drop |= (base.lo >= left) & (base.hi <= right)
        extra.append(engine.breakpoints(rho_fn, left, right))
    keep = base.restricted(~drop)
    # the base grid carries rho_0; correct it for the modification
    out = keep
    for bp in extra:
        out = _Grid.merged(out, _evaluate(engine, bp, rho_fn))
    inv = 1.0 / (t_mod[None, :] - out.x[:, None])
    corr = (d_mod * (out.x[:, None] * inv / t_mod)).sum(axis=1)
    fresh = np.zeros(out.x.size, dtype=bool)
    fresh[keep.x.size:] = True
    rho = np.where(fresh, out.rho, out.rho - corr)
    return replace(out, rho=rho)


def _integrand(engine, x, la, rho, weighted=True):
    logE = la + 0.5 * np.log1p((engine.r0 + rho) ** 2)
    v = np.exp(-2.0 * logE)
    if weighted:
        v = v / (1.0 + x * x)
    return v


def _partial(engine, grid, rho_fn, a, b, weighted):
    """Squared norm over ``[a, b]`` on the grid, splitting edge panels."""
    if b <= a:
        return 0.0
    full = (grid.lo >= a) & (grid.hi <= b)
    pm = full[grid.pid]
    total = float(np.sum(grid.w[pm] * _integrand(engine, grid.x[pm], grid.la[pm], grid.rho[pm],
                                                  weighted)))
    cut = np.flatnonzero(~full & (grid.hi > a) & (grid.lo < b))
    if cut.size:
        lo = np.maximum(grid.lo[cut], a)
        hi = np.minimum(grid.hi[cut], b)
        bp_x = (lo[:, None] + (hi - lo)[:, None] * engine.xg[None, :]).ravel()
        bp_w = ((hi - lo)[:, None] * engine.wg[None, :]).ravel()
        ok = (hi - lo) > 1e-13 * np.maximum(1.0, np.abs(lo))
        okp = np.repeat(ok, engine.xg.size)
        if okp.any():
            xx = bp_x[okp]
            total += float(np.sum(bp_w[okp] * _integrand(engine, xx, engine.log_abs_A(xx),
                                                           rho_fn(xx)[0], weighted)))
    return total


def _shell_tail(engine, grid, rho_fn, sign, weighted):
    """Extrapolated squared norm beyond ``sign * X`` from two dyadic shells."""
    X = engine.X
    s0 = _partial(engine, grid, rho_fn, *sorted((sign * X / 2, sign * X)), weighted)
    s1 = _partial(engine, grid, rho_fn, *sorted((sign * X / 4, sign * X / 2)), weighted)
    if s0 == 0.0:
        return 0.0, 0.0
    if s1 == 0.0:
        return 0.0, 0.0
    r = s0 / s1
    if r >= 1.0:
        return math.inf, r
    return s0 * r / (1.0 - r), r


class _Ctx:
    """Grid and rho function for one state."""

    def __init__(self, state: NuStarState):
        self.engine = state._engine
        t_mod, d_mod = _modification(state)
        self.rho_fn = _rho_k_fn(self.engine, t_mod, d_mod)
        self.grid = state._grid

    def sq(self, a, b, weighted=True):
        return _partial(self.engine, self.grid, self.rho_fn, a, b, weighted)

    def tail(self, sign, weighted=True):
        return _shell_tail(self.engine, self.grid, self.rho_fn, sign, weighted)

    def outside(self, tau, weighted=True) -> float:
        X = self.engine.X
        if tau >= X:
            raise MaterializationError(f"threshold {tau:g} exceeds the quadrature window {X:g}")
        inner = self.sq(-X, -tau, weighted) + self.sq(tau, X, weighted)
        tails = self.tail(+1, weighted)[0] + self.tail(-1, weighted)[0]
        return inner + tails

    def ring(self, tau_in, tau_out, weighted=True) -> float:
        return self.sq(-tau_out, -tau_in, weighted) + self.sq(tau_in, tau_out, weighted)

    def whole(self, weighted=True) -> float:
        X = self.engine.X
        return self.sq(-X, X, weighted) + self.tail(+1, weighted)[0] + self.tail(-1, weighted)[0]


def norms(state: NuStarState, region: str = "window") -> float:
    """L2 norm of ``1/((x+i)E_k)`` over ``region``.

    ``region`` is one of ``"outside"`` (R minus J_{k-1}), ``"ring"``
    (J_k minus J_{k-1}; J_0 itself at k = 0), ``"window"`` (the materialized
    window), ``"total"`` (window plus tails) or ``"ring_unweighted"`` (the
    ring norm of ``1/E_k``).
    """
    ctx = _Ctx(state)
    k = state.k
    prev = state.tau[k - 1] if k >= 1 else 0.0
    if region == "outside":
        return math.sqrt(ctx.outside(prev) if k >= 1 else ctx.whole())
    if region == "ring":
        return math.sqrt(ctx.ring(prev, state.tau[k]))
    if region == "ring_unweighted":
        return math.sqrt(ctx.ring(prev, state.tau[k], weighted=False))
    if region == "window":
        X = state._engine.X
        return math.sqrt(ctx.sq(-X, X))
    if region == "total":
        return math.sqrt(ctx.whole())
    raise ParameterError("region", f"unknown region {region!r}")


# --------------------------------------------------------------- construction

def _choose_side(s: Spectrum) -> int:
    signs = {b.sign for b in s.tail.branches}
    if 1 in signs or (not signs and s.positive.size >= s.negative.size):
        return 1
    return -1


def init(spectrum: Spectrum, g: GeneratingFunction | None, nu0, r0: float = 0.0,
         tau0_factor: float = 1.25, backend=None, window: float | None = None) -> NuStarState:
    """Base state with ``E_0 = A (1 - i r0 - i rho_0)``.

    ``tau_0`` is ``tau0_factor * max(4, 2 |t|)`` for the first node on the
    working side.
    """
    nu0 = np.asarray(nu0, dtype=float)
    if nu0.shape != (len(spectrum),):
        raise ParameterError("nu0", "one weight per spectrum point required")
    if not np.all(np.isfinite(nu0)) or np.any(nu0 < 0):
        raise ParameterError("nu0", "weights must be finite and nonnegative")
    if not np.any(nu0 > 0):
        raise InitializationError("nu0 vanishes identically: eta is constant, nothing to reweight")
    if np.any(nu0 == 0):
        raise InitializationError("nu0 must be strictly positive")
    if tau0_factor <= 1:
        raise ParameterError("tau0_factor", "must exceed 1")
    pts = spectrum.points
    for sgn in (1, -1):
        sel = np.flatnonzero(np.sign(pts) == sgn)
        if sel.size >= 16:
            order = sel[np.argsort(np.abs(pts[sel]))]
            mass = np.log(nu0[order]) - 2 * np.log(np.abs(pts[order]))
            if divergence_proxy(mass):
                raise InitializationError("sum nu0 / t^2 fails the boundedness proxy")
    g = g or GeneratingFunction(spectrum)
    engine = _Engine(spectrum, g, nu0, r0, backend, window)
    rho_fn = _rho_k_fn(engine, np.empty(0), np.empty(0))
    bp = engine.breakpoints(rho_fn)
    grid = _evaluate(engine, bp, rho_fn)
    fine = _evaluate(engine, bp, rho_fn, m=2 * _GL_M)
    X = engine.X
    coarse_v = _partial(engine, grid, rho_fn, -X, X, True)
    fine_v = _partial(engine, fine, rho_fn, -X, X, True)
    change = abs(fine_v - coarse_v) / max(abs(fine_v), 1e-300)
    if change > QUAD_TOL:
        grid, change = fine, None
        bp2 = np.unique(np.concatenate([bp, 0.5 * (bp[1:] + bp[:-1])]))
        finer = _evaluate(engine, bp2, rho_fn, m=2 * _GL_M)
        v2 = _partial(engine, finer, rho_fn, -X, X, True)
        change = abs(v2 - fine_v) / max(abs(v2), 1e-300)
        grid = finer
        if change > QUAD_TOL:
            raise QuadratureError(f"window quadrature changed by {change:.2e} under refinement")
    side = _choose_side(spectrum)
    first = np.abs(pts[np.sign(pts) == side])
    if first.size == 0:
        raise InitializationError("no spectrum points on either side")
    tau0 = tau0_factor * max(4.0, 2.0 * float(first.min()))
    state = NuStarState(0, side, nu0, float(r0), [], [], [tau0], [], [], [],
                        _engine=engine, _grid=grid)
    ctx = _Ctx(state)
    total_sq = ctx.whole()
    if not math.isfinite(total_sq):
        raise InitializationError("1/((x+i)E_0) is not square-integrable on the window and tails")
    state.norms.append({"total": math.sqrt(total_sq), "ring": math.sqrt(ctx.ring(0.0, tau0)),
                        "quadrature_change": change,
                        "tail_ratio_plus": ctx.tail(+1)[1], "tail_ratio_minus": ctx.tail(-1)[1]})
    state.checks.append({"initial_finite": True})
    return state


def _pick_node(state: NuStarState, k: int) -> int:
    eng = state._engine
    pts = eng.spectrum.points
    tau = state.tau[k - 1]
    mag = state.side * pts
    lim = 0.5 * eng.X
    bound = 2.0 ** (-k - 1) / tau
    cand = np.flatnonzero((mag > 2 * tau) & (mag <= lim))
    cand = cand[np.argsort(mag[cand])]
    for i in cand:
        if i in state.indices:
            continue
        if state.nu0[i] / pts[i] ** 2 <= bound:
            return int(i)
    raise MaterializationError(f"no materialized node beyond 2*tau={2 * tau:g} inside the "
                               f"window (limit {lim:g}) satisfies the mass inequality at k={k}")


def _with(state: NuStarState, idx: int, nu_p: float) -> NuStarState:
    eng = state._engine
    new = replace(state, k=state.k + 1, indices=state.indices + [idx],
                  nu_prime=state.nu_prime + [nu_p], tau=list(state.tau), norms=list(state.norms),
                  checks=list(state.checks), notes=list(state.notes))
    t_mod, d_mod = _modification(new)
    base = state._grid
    # regrade only around the node just modified; earlier ones are already graded
    if d_mod[-1] != 0:
        grid = _local_grid(eng, base, t_mod[-1:], d_mod[-1:])
    else:
        grid = base
    new._grid = grid
    return new


def step(state: NuStarState, tau_rule: str = "equality") -> NuStarState:
    """Choose ``n_k``, ``nu'_k`` and ``tau_k`` for ``k = state.k + 1``.

    ``tau_rule="equality"`` solves for the ring norm equal to ``1/tau_{k-1}``
    and falls back to ``tau_k = t_{n_k}(1 + 1e-6)`` when the ring up to
    ``t_{n_k}`` already carries more than that; ``"floor"`` always uses the
    fallback.
    """
    if tau_rule not in ("equality", "floor"):
        raise ParameterError("tau_rule", f"unknown rule {tau_rule!r}")
    k = state.k + 1
    if k > MAX_STEPS:
        raise ParameterError("k", f"at most {MAX_STEPS} steps")
    eng = state._engine
    pts = eng.spectrum.points
    tau_prev = state.tau[k - 1]
    idx = _pick_node(state, k)
    t_k = float(pts[idx])
    nu_k = float(state.nu0[idx])
    target_out = 2.0 / tau_prev

    unchanged = _with(state, idx, nu_k)
    out_now = math.sqrt(_Ctx(unchanged).outside(tau_prev))
    notes = []
    if out_now >= target_out:
        new = unchanged
        case = "keep"
    else:
        case = "shrink"

        def excess(log_nu):
            trial = _with(state, idx, math.exp(log_nu))
            return math.sqrt(_Ctx(trial).outside(tau_prev)) - target_out

        hi = math.log(nu_k)
        lo = hi
        samples = [(nu_k, out_now)]
        for _ in range(40):
            lo -= math.log(10.0)
            val = excess(lo)
            samples.append((math.exp(lo), val + target_out))
            if val > 0:
                break
        else:
            raise BracketError("norm never reached 2/tau_{k-1} as nu' decreased", samples)
        root = brentq(excess, lo, hi, xtol=1e-9, rtol=1e-9)
        new = _with(state, idx, math.exp(root))
        got = math.sqrt(_Ctx(new).outside(tau_prev))
        if abs(got - target_out) > 1e-6 * target_out:
            raise BracketError(f"nu' bisection residual {abs(got - target_out) / target_out:.2e}",
                               samples)
    ctx = _Ctx(new)
    target_ring = 1.0 / tau_prev
    side = state.side
    floor = abs(t_k) * (1 + TAU_EDGE)

    def ring_sq(tau):
        if side > 0:
            return ctx.sq(tau_prev, tau) + ctx.sq(-tau, -tau_prev)
        return ctx.sq(-tau, -tau_prev) + ctx.sq(tau_prev, tau)

    at_floor = math.sqrt(ring_sq(floor))
    if tau_rule == "floor" or at_floor >= target_ring:
        tau_k = floor
        if tau_rule == "equality":
            notes.append(f"k={k}: ring norm at t_n_k already {at_floor:.4g} >= 1/tau_(k-1)="
                         f"{target_ring:.4g}; tau_k set just above t_n_k")
    else:
        top = eng.X
        if math.sqrt(ring_sq(top)) < target_ring:
            raise MaterializationError("ring norm target not reached inside the window")
        tau_k = brentq(lambda s: math.sqrt(ring_sq(s)) - target_ring, floor, top,
                       xtol=1e-12 * top, rtol=1e-10)
    new.tau.append(float(tau_k))
    new.notes.extend(notes)
    _record(new, case)
    return new


def _record(state: NuStarState, case: str):
    k = state.k
    ctx = _Ctx(state)
    tau, prev = state.tau[k], state.tau[k - 1]
    pts = state._engine.spectrum.points
    t_k = abs(float(pts[state.indices[-1]]))
    nu_k = float(state.nu0[state.indices[-1]])
    ring_w = math.sqrt(ctx.ring(prev, tau))
    ring_u = math.sqrt(ctx.ring(prev, tau, weighted=False))
    total = math.sqrt(ctx.whole())
    state.norms.append({"outside_prev": math.sqrt(ctx.outside(prev)), "ring": ring_w,
                        "ring_unweighted": ring_u, "total": total, "case": case})
    state.checks.append({
        "tau_doubling": tau > 2 * prev,
        "node_beyond": t_k > 2 * prev,
        "mass_inequality": nu_k / t_k ** 2 <= 2.0 ** (-k - 1) / prev,
        "nu_prime_range": 0 < state.nu_prime[-1] <= nu_k,
    })


def run(spectrum: Spectrum, g: GeneratingFunction | None, nu0, steps: int, r0: float = 0.0,
        tau_rule: str = "equality", **kw) -> NuStarState:
    state = init(spectrum, g, nu0, r0, **kw)
    for _ in range(steps):
        state = step(state, tau_rule)
    return state


# --------------------------------------------------------------- verification

def eta_difference_sup(state: NuStarState, ell: int, k: int) -> float:
    """``sup_{J_k} |eta_ell - eta_{ell-1}|`` in closed form (``ell > k``)."""
    t = abs(state.t_chosen[ell - 1])
    d = state.nu0[state.indices[ell - 1]] - state.nu_prime[ell - 1]
    tau = state.tau[k]
    if tau >= t:
        return math.inf if d > 0 else 0.0
    # |x| / (|t - x| t) is maximal at x = tau * sign(t) on J_k
    return d * tau / ((t - tau) * t)


def property_i(state: NuStarState) -> bool:
    return all(eta_difference_sup(state, ell, k) <= 2.0 ** -ell
               for k in range(state.k + 1) for ell in range(k + 1, state.k + 1))


def bound_ii(state: NuStarState) -> tuple[bool, list]:
    """``1 + ||1/((x+i)E_k)||^2 <= prod_{j<=k}(1 + 2^-j)^2 (1 + ||1/((x+i)E_0)||^2)``."""
    base = 1 + state.norms[0]["total"] ** 2
    rows = []
    ok = True
    for j in range(1, state.k + 1):
        C = base * math.prod((1 + 2.0 ** -i) ** 2 for i in range(1, j + 1))
        lhs = 1 + state.norms[j]["total"] ** 2
        rows.append((j, lhs, C))
        ok &= lhs <= C
    return ok, rows


def growth(state: NuStarState) -> list[float]:
    """``||1/E_K||`` over each ring ``J_k \\ J_{k-1}`` for the final state ``K``."""
    ctx = _Ctx(state)
    return [math.sqrt(ctx.ring(state.tau[k - 1], state.tau[k], weighted=False))
            for k in range(1, state.k + 1)]


def _states_upto(state: NuStarState) -> list[NuStarState]:
    """Reconstruct the chain of intermediate states (grids are rebuilt)."""
    chain = []
    eng = state._engine
    for j in range(state.k + 1):
        s = replace(state, k=j, indices=state.indices[:j], nu_prime=state.nu_prime[:j],
                    tau=state.tau[:j + 1])
        chain.append(s)
    for s in chain:
        s._engine = eng
        s._grid = state._grid
    return chain


def inverse_E(state: NuStarState, x) -> np.ndarray:
    """``1/E_k(x)`` for real ``x``."""
    x = np.asarray(x, dtype=float)
    eng = state._engine
    t_mod, d_mod = _modification(state)
    rho = _rho_k_fn(eng, t_mod, d_mod)(x)[0]
    A = np.asarray(eng.g.eval(x.astype(complex)), dtype=complex).real
    return 1.0 / (A * (1.0 - 1j * eng.r0 - 1j * rho))


def pointwise_proxy(state: NuStarState, samples: int = 4001) -> tuple[bool, float]:
    """Check ``|1/E_l - 1/E_m| <= 2^{1-m} sup_{J_1}|1/E_m|`` on J_1 for ``l > m >= 1``."""
    if state.k < 2:
        return True, 0.0
    tau1 = state.tau[1]
    x = np.linspace(-tau1, tau1, samples)
    nodes = state._engine.nodes
    j = np.clip(np.searchsorted(nodes, x), 1, nodes.size - 1)
    near = np.minimum(np.abs(x - nodes[j - 1]), np.abs(x - nodes[j]))
    x = x[near > 1e-9 * np.maximum(1.0, np.abs(x))]
    chain = _states_upto(state)
    inv = {m: inverse_E(chain[m], x) for m in range(1, state.k + 1)}
    worst = 0.0
    ok = True
    for m in range(1, state.k + 1):
        sup = float(np.max(np.abs(inv[m])))
        for ell in range(m + 1, state.k + 1):
            lhs = float(np.max(np.abs(inv[ell] - inv[m])))
            rhs = 2.0 ** (1 - m) * sup
            worst = max(worst, lhs / rhs if rhs > 0 else math.inf)
            ok &= lhs <= rhs
    return ok, worst


def verify(state: NuStarState) -> dict:
    ok_ii, rows = bound_ii(state)
    gr = growth(state)
    prox, worst = pointwise_proxy(state)
    checks = {
        "tau_doubling": all(c.get("tau_doubling", True) for c in state.checks[1:]),
        "node_beyond": all(c.get("node_beyond", True) for c in state.checks[1:]),
        "mass_inequality": all(c.get("mass_inequality", True) for c in state.checks[1:]),
        "property_i": property_i(state),
        "bound_ii": ok_ii,
        "growth": all(v >= GROWTH_MIN for v in gr),
        "pointwise_proxy": prox,
    }
    return {"checks": checks, "growth": gr, "bound_ii": rows, "proxy_worst_ratio": worst,
            "passed": all(checks.values())}


__all__ = ["NuStarState", "init", "step", "run", "norms", "verify", "property_i", "bound_ii",
           "growth", "pointwise_proxy", "eta_difference_sup", "inverse_E", "MAX_STEPS"]
