"""Rank-one perturbation data ``(mu, a, b, delta)`` and its constructors.

The payload that matters downstream is ``c_n = a_n * conj(b_n) * mu_n``
together with ``delta``; masses and the split of ``c`` into ``a`` and ``b``
are a choice.  All magnitudes are handled in log space while building, since
``|c_n|`` can under- or overflow for exponentially regular spectra.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .canonical_product import GeneratingFunction
from .errors import ParameterError, RefusalError, ValidityError
from .krein_diag import NONREMOVABLE, REMOVABLE, fit_side, verdict
from .spectra import Spectrum

MASS_POLICIES = ("unit", "abs_c")
SPIKE_GROWTH = 20.0       # a rescaling spike multiplies the running sum by this
DIVERGENCE_RATIO = 10.0   # last partial sum vs sum over the first half
BOUNDED_INCREMENT = 0.01  # last-quarter increment relative to total


@dataclass(frozen=True, eq=False)
class PerturbationData:
    spectrum: Spectrum
    mu: np.ndarray
    a: np.ndarray
    b: np.ndarray
    delta: float
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.spectrum)
        mu = np.asarray(self.mu, dtype=float).ravel()
        a = np.asarray(self.a, dtype=complex).ravel()
        b = np.asarray(self.b, dtype=complex).ravel()
        for name, arr in (("mu", mu), ("a", a), ("b", b)):
            if arr.size != n:
                raise ParameterError(name, f"length {arr.size} does not match {n} nodes")
            if not np.all(np.isfinite(arr)):
                raise ParameterError(name, "entries must be finite")
        if np.any(mu <= 0):
            raise ParameterError("mu", "masses must be positive")
        if not np.isfinite(self.delta):
            raise ParameterError("delta", "must be finite")
        for arr in (mu, a, b):
            arr.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "delta", float(self.delta))
        flags = {"synthesized": False, "delta_rho": 0.0}
        flags.update(self.flags)
        object.__setattr__(self, "flags", flags)

    @property
    def t(self) -> np.ndarray:
        return self.spectrum.points

    @property
    def c(self) -> np.ndarray:
        return self.a * np.conj(self.b) * self.mu

    @property
    def herglotz_weights(self) -> np.ndarray:
        """``|b_n|^2 mu_n``, the point masses of the Herglotz function."""
        return np.abs(self.b) ** 2 * self.mu

    @property
    def delta_rho(self) -> float:
        return float(self.flags.get("delta_rho", 0.0))

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.c.imag == 0))

    def dissipative_pattern(self, tol: float = 1e-12) -> bool:
        """``a = i b`` and ``delta = -1``."""
        return (abs(self.delta + 1.0) <= tol
                and np.allclose(self.a, 1j * self.b, rtol=tol, atol=0.0))

    def to_dict(self) -> dict:
        return {"spectrum": self.spectrum.to_dict(), "mu": self.mu.tolist(),
                "a": [[z.real, z.imag] for z in self.a.tolist()],
                "b": [[z.real, z.imag] for z in self.b.tolist()],
                "delta": self.delta, "flags": _jsonable(self.flags)}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationData":
        for key in ("spectrum", "mu", "a", "b", "delta"):
            if key not in d:
                raise ParameterError(key, "missing from perturbation document")
        cplx = lambda rows: np.array([complex(r[0], r[1]) for r in rows])  # noqa: E731
        return cls(Spectrum.from_dict(d["spectrum"]), np.asarray(d["mu"], dtype=float),
                   cplx(d["a"]), cplx(d["b"]), float(d["delta"]), d.get("flags", {}))

    @classmethod
    def from_json(cls, text: str) -> "PerturbationData":
        return cls.from_dict(json.loads(text))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


# ------------------------------------------------------------------ helpers

def _split(log_c: np.ndarray, phase: np.ndarray, log_mu: np.ndarray,
           log_ta: np.ndarray | float = 0.0):
    """Vectors with ``a conj(b) mu = |c| phase``; ``log_ta`` shifts |a| vs |b|."""
    la = 0.5 * (log_c - log_mu) + log_ta
    lb = 0.5 * (log_c - log_mu) - log_ta
    return la, lb, phase


def _materialize(la, lb, phase):
    with np.errstate(under="ignore", over="ignore"):
        return np.exp(la).astype(complex), np.conj(phase) * np.exp(lb)


def _node_data(spectrum: Spectrum, g: GeneratingFunction | None):
    g = g or GeneratingFunction(spectrum)
    log_abs, sign = g.node_log_derivatives()
    # c = -1/A'(t): |c| = 1/|A'|, phase = -sign
    return g, -log_abs, -sign.astype(complex)


def _masses(policy: str, log_c: np.ndarray) -> np.ndarray:
    if policy == "unit":
        return np.zeros_like(log_c)
    if policy == "abs_c":
        # mu = |c| keeps |a| = |b| = 1; clip so the mass stays a positive double
        return np.maximum(log_c, math.log(np.finfo(float).tiny))
    raise ParameterError("masses", f"unknown policy {policy!r}; use one of {MASS_POLICIES}")


def _require(spectrum, report, force, what):
    if report.verdict == REMOVABLE or force:
        return
    raise RefusalError(
        f"{what}: spectrum {spectrum.label!r} is {report.verdict} "
        f"(method {report.method}, model {report.model.get('model')}, "
        f"confidence {report.confidence:.3f}); pass force=True to override", report)


# ------------------------------------------------------------------ constructors

def synthesize(spectrum: Spectrum, g: GeneratingFunction | None = None,
               masses: str = "unit", force: bool = False, report=None) -> PerturbationData:
    """Data whose model function ``beta`` equals ``1/A`` (empty spectrum).

    ``c_n = -1/A'(t_n)`` and ``delta = 1/A(0) = 1``.
    """
    if masses not in MASS_POLICIES:
        raise ParameterError("masses", f"unknown policy {masses!r}; use one of {MASS_POLICIES}")
    g = g or GeneratingFunction(spectrum)
    report = report or verdict(spectrum, g)
    _require(spectrum, report, force, "synthesize")
    g, log_c, phase = _node_data(spectrum, g)
    log_mu = _masses(masses, log_c)
    a, b = _materialize(*_split(log_c, phase, log_mu))
    flags = {"synthesized": True, "masses": masses, "forced": bool(force and report.verdict != REMOVABLE),
             "verdict": report.verdict, "q": 1.0}
    with np.errstate(under="ignore"):
        mu = np.exp(log_mu)
    return PerturbationData(spectrum, mu, a, b, 1.0, flags)


@dataclass(frozen=True)
class SmoothSynthSpec:
    alpha1: float
    alpha2: float
    gamma: float
    rescale: bool = True

    def __post_init__(self):
        for name in ("alpha1", "alpha2"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ParameterError(name, "must lie in [0, 1)")
        if not 0 < self.gamma < 2:
            raise ParameterError("gamma", "must lie in (0, 2)")
        if self.alpha1 + self.alpha2 > 2 - self.gamma + 1e-12:
            raise ParameterError(
                "alpha1+alpha2", f"{self.alpha1 + self.alpha2:g} exceeds 2 - gamma = "
                f"{2 - self.gamma:g}")


def partial_sums_log(log_terms: np.ndarray) -> np.ndarray:
    return np.logaddexp.accumulate(log_terms)


def divergence_proxy(log_terms: np.ndarray) -> bool:
    """Last partial sum exceeds ``DIVERGENCE_RATIO`` times the first-half sum."""
    ps = partial_sums_log(log_terms)
    half = ps[log_terms.size // 2 - 1] if log_terms.size >= 2 else ps[0]
    return bool(ps[-1] > half + math.log(DIVERGENCE_RATIO))


def last_quarter_increment(log_terms: np.ndarray) -> float:
    """Relative increase of the partial sums over the last quarter of terms."""
    ps = partial_sums_log(log_terms)
    q = ps[(3 * log_terms.size) // 4 - 1]
    return float(-math.expm1(q - ps[-1]))


def _spike_positions(M: int, parity: int) -> list[int]:
    """0-based indices near 0.6 M / 4**j with rank parity ``parity`` (1 odd, 0 even)."""
    out, x = [], 0.6 * M
    while x >= 1:
        i = max(int(round(x)), 1)
        if i % 2 != parity:
            i += 1
        if i <= M and (not out or i < out[-1]):
            out.append(i)
        x /= 4
    return [i - 1 for i in out]


def _apply_spikes(log_u: np.ndarray, positions: list[int]) -> tuple[np.ndarray, dict]:
    """Log rescaling factors making the running sum of exp(log_u) jump at ``positions``."""
    log_p = np.zeros_like(log_u)
    for i in sorted(positions):
        prev = np.logaddexp.reduce(log_u[:i] + 2 * log_p[:i]) if i > 0 else -np.inf
        if not np.isfinite(prev):
            continue
        need = prev + math.log(SPIKE_GROWTH - 1) - log_u[i]
        log_p[i] = max(0.0, 0.5 * need)
    return log_p, {int(i + 1): float(log_p[i]) for i in positions if log_p[i] > 0}


def smooth_series_report(spectrum, g, gamma):
    """Fit of ``sum 1/(|t|^gamma |A'(t)|)`` per side."""
    log_abs, _ = g.node_log_derivatives()
    log_terms = -gamma * np.log(np.abs(spectrum.points)) - log_abs
    fits = {}
    for name, side in (("+", spectrum.points > 0), ("-", spectrum.points < 0)):
        if side.sum() >= 64:
            idx = np.flatnonzero(side)
            idx = idx[np.argsort(np.abs(spectrum.points[idx]))]
            fits[name] = fit_side(log_terms[idx])
    return fits


def synthesize_smooth(spectrum: Spectrum, g: GeneratingFunction | None = None,
                      spec: SmoothSynthSpec | None = None, masses: str = "unit",
                      force: bool = False) -> PerturbationData:
    """Weighted synthesis.

    ``|a'_n| = |c_n|^(1/2) |t_n|^((2 - 2 alpha1 - gamma)/2) mu_n^(-1/2)`` and ``b'_n``
    carries the complementary power and the phase of ``conj(c_n)``, so that
    ``a'_n conj(b'_n) mu_n = c_n``.  With ``rescale`` the pair is multiplied by
    ``(p_n, 1/p_n)``: spikes on odd ranks push ``a'`` out of ``l^2(mu)`` and spikes
    on even ranks do the same for ``b'``.
    """
    if spec is None:
        raise ParameterError("spec", "SmoothSynthSpec required")
    g = g or GeneratingFunction(spectrum)
    fits = smooth_series_report(spectrum, g, spec.gamma)
    bad = [s for s, f in fits.items() if f.verdict != REMOVABLE]
    if (bad or not fits) and not force:
        raise RefusalError(
            f"sum 1/(|t|^{spec.gamma:g} |A'(t)|) is not convergent by the fitted test "
            f"(sides {bad or 'none fitted'})", fits)
    g, log_c, phase = _node_data(spectrum, g)
    log_mu = _masses(masses, log_c)
    t_abs = np.abs(spectrum.points)
    log_t = np.log(t_abs)
    shift = 0.5 * (2 - 2 * spec.alpha1 - spec.gamma) * log_t
    la, lb, ph = _split(log_c, phase, log_mu, shift)

    order = spectrum.by_modulus()
    # p_n is recorded as log p_n keyed by 1-based rank in |t| order
    rescale_info = {"applied": False, "log_p_odd": {}, "log_p_even": {}}
    if spec.rescale:
        M = order.size
        ua = (2 * la + log_mu)[order]
        ub = (2 * lb + log_mu)[order]
        log_p = np.zeros(M)
        if not divergence_proxy(ua):
            lp, rescale_info["log_p_odd"] = _apply_spikes(ua, _spike_positions(M, 1))
            log_p += lp
        if not divergence_proxy(ub):
            lq, info = _apply_spikes(ub, _spike_positions(M, 0))
            rescale_info["log_p_even"] = {k: -v for k, v in info.items()}
            log_p -= lq
        rescale_info["applied"] = bool(rescale_info["log_p_odd"] or rescale_info["log_p_even"])
        scale = np.empty(M)
        scale[order] = log_p
        la, lb = la + scale, lb - scale
    a, b = _materialize(la, lb, ph)
    with np.errstate(under="ignore"):
        mu = np.exp(log_mu)
    flags = {"synthesized": True, "smooth": {"alpha1": spec.alpha1, "alpha2": spec.alpha2,
                                             "gamma": spec.gamma, "rescale": spec.rescale},
             "rescaling": rescale_info, "masses": masses, "forced": bool(force and bad),
             "q": 1.0, "log_abs_a": la.tolist(), "log_abs_b": lb.tolist()}
    return PerturbationData(spectrum, mu, a, b, 1.0, flags)


def smooth_sums(data: PerturbationData) -> dict:
    """Log terms (ordered by |t|) of the weighted and plain l^2(mu) sums."""
    sm = data.flags.get("smooth")
    if sm is None:
        raise ParameterError("data", "not produced by synthesize_smooth")
    order = data.spectrum.by_modulus()
    la = np.asarray(data.flags["log_abs_a"])[order]
    lb = np.asarray(data.flags["log_abs_b"])[order]
    log_mu = np.log(data.mu)[order]
    log_t = np.log(np.abs(data.t))[order]
    return {"a_plain": 2 * la + log_mu, "b_plain": 2 * lb + log_mu,
            "a_weighted": 2 * la + log_mu + (2 * sm["alpha1"] - 2) * log_t,
            "b_weighted": 2 * lb + log_mu + (2 * sm["alpha2"] - 2) * log_t}


def arbitrary_data(spectrum: Spectrum, c=None, a=None, b=None, mu=None,
                   delta: float = 1.0, delta_rho: float = 0.0) -> PerturbationData:
    """Store caller-supplied data verbatim after the ``sum |c|/t^2`` proxy check.

    Give either ``c`` (split as ``a = sqrt|c|``, ``b = conj(c)/sqrt|c|``, unit
    masses) or the triple ``a, b, mu``.
    """
    n = len(spectrum)
    if c is not None:
        if a is not None or b is not None:
            raise ParameterError("c", "give either c or (a, b, mu), not both")
        c = np.broadcast_to(np.asarray(c, dtype=complex), (n,))
        r = np.sqrt(np.abs(c))
        with np.errstate(invalid="ignore", divide="ignore"):
            b = np.where(r > 0, np.conj(c) / np.where(r > 0, r, 1.0), 0.0)
        a = r.astype(complex)
        mu = np.ones(n) if mu is None else mu
    else:
        if a is None or b is None:
            raise ParameterError("a", "need c or both a and b")
        mu = np.ones(n) if mu is None else mu
    data = PerturbationData(spectrum, np.broadcast_to(np.asarray(mu, float), (n,)),
                            np.broadcast_to(np.asarray(a, complex), (n,)),
                            np.broadcast_to(np.asarray(b, complex), (n,)), delta,
                            {"synthesized": False, "delta_rho": float(delta_rho)})
    _validate_proxy(data)
    return data


def _validate_proxy(data: PerturbationData):
    t = data.t
    order = data.spectrum.by_modulus()
    with np.errstate(divide="ignore"):
        log_terms = (np.log(np.abs(data.c)) - 2 * np.log(np.abs(t)))[order]
    sides = {"+": t[order] > 0, "-": t[order] < 0}
    for name, side in sides.items():
        lt = log_terms[side]
        lt = lt[np.isfinite(lt)]
        if lt.size >= 64 and fit_side(lt).verdict == NONREMOVABLE:
            raise ValidityError(f"sum |c_n|/t_n^2 diverges on the {name} side")
    # delta must avoid sum c/t when a is in l^2(mu)
    with np.errstate(divide="ignore"):
        la2 = (2 * np.log(np.abs(data.a)) + np.log(data.mu))[order]
    la2 = la2[np.isfinite(la2)]
    if la2.size >= 8 and last_quarter_increment(la2) < BOUNDED_INCREMENT:
        s = complex(np.sum(data.c / t))
        if abs(data.delta - s) <= 1e-12 * max(1.0, abs(s)):
            raise ValidityError(
                f"delta = {data.delta} coincides with sum c_n/t_n; the perturbation degenerates")


def flipped(data: PerturbationData, index: int = None) -> PerturbationData:
    """Copy of ``data`` with the coefficient at the smallest |t| (or ``index``) negated."""
    i = int(data.spectrum.by_modulus()[0]) if index is None else index
    a = data.a.copy()
    a[i] = -a[i]
    out = arbitrary_data(data.spectrum, a=a, b=data.b, mu=data.mu, delta=data.delta,
                         delta_rho=data.delta_rho)
    out.flags["flipped_index"] = i
    return out


def livsic_data(count: int = 10000, c: float = 1.0) -> PerturbationData:
    """Dissipative data on ``t = (n + 1/2)/c`` with Herglotz weights ``1/(pi c)``."""
    from .spectra import FamilySpec, generate
    s = generate(FamilySpec("livsic", {"c": c}, count))
    b = np.full(len(s), 1.0 / math.sqrt(math.pi * abs(c)), dtype=complex)
    return arbitrary_data(s, a=1j * b, b=b, mu=np.ones(len(s)), delta=-1.0)
