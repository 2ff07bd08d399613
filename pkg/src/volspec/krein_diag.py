"""Removability diagnostics.

The series test looks at ``k_n = 1 / (t_n^2 |A'(t_n)|)`` and classifies the
tail behaviour of ``log k_n`` on each side of the origin.  The asymptotic
predictor uses the completely-regular-growth indicator of power-distributed
zeros instead.  Both are heuristics over finite data, so ``Inconclusive`` is
a legitimate answer.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .canonical_product import GeneratingFunction
from .errors import DegeneracyError, InsufficientDataError, ParameterError
from .spectra import Spectrum, power_density

REMOVABLE = "Removable"
NONREMOVABLE = "Nonremovable"
INCONCLUSIVE = "Inconclusive"

P_MARGIN = 0.15          # p > 1 + P_MARGIN  => convergent
P_DIVERGENT_TOL = 0.02   # p <= 1 + tol      => divergent (harmonic rate included)
MIN_CONFIDENCE = 0.9
MIN_TERMS = 64
NEAR_PAIR_GAP = 1e-6
ALPHA_GRID = (0.25, 0.5, 0.75, 1.0)
CSV_HEADER = ("n", "t_n", "A_prime", "k_n", "partial_sum")


@dataclass
class KreinTerms:
    n: np.ndarray          # signed rank by |t| (positive side +1, +2, ...)
    t: np.ndarray
    log_abs_deriv: np.ndarray
    deriv_sign: np.ndarray
    log_k: np.ndarray

    @property
    def A_prime(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.deriv_sign * np.exp(self.log_abs_deriv)

    @property
    def k(self) -> np.ndarray:
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(self.log_k)

    @property
    def log_partial(self) -> np.ndarray:
        return np.logaddexp.accumulate(self.log_k)

    @property
    def partial(self) -> np.ndarray:
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(self.log_partial)

    def rows(self):
        return zip(self.n.tolist(), self.t.tolist(), self.A_prime.tolist(),
                   self.k.tolist(), self.partial.tolist())

    def to_csv(self, fh=None) -> str | None:
        out = fh or io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return None if fh else out.getvalue()

    def __len__(self):
        return self.t.size


def krein_terms(spectrum: Spectrum, g: GeneratingFunction | None = None) -> KreinTerms:
    """Krein terms for every materialized node, ordered by ``|t|``."""
    g = g or GeneratingFunction(spectrum)
    try:
        la, sg = g.node_log_derivatives()
    except DegeneracyError as exc:
        exc.verdict = NONREMOVABLE
        raise
    order = spectrum.by_modulus()
    t = spectrum.points[order]
    n = np.empty(t.size, dtype=np.int64)
    pos, neg = t > 0, t < 0
    n[pos] = np.arange(1, pos.sum() + 1)
    n[neg] = -np.arange(1, neg.sum() + 1)
    la, sg = la[order], sg[order]
    log_k = -2.0 * np.log(np.abs(t)) - la
    return KreinTerms(n, t, la, sg, log_k)


# ------------------------------------------------------------------ fitting

@dataclass
class FitResult:
    model: str                 # power | exp | growth
    params: dict
    rms: float
    stderr: float
    window: tuple[int, int]
    verdict: str
    confidence: float
    candidates: dict = field(default_factory=dict)


def _lstsq(x, y):
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(len(y) - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    return coef, math.sqrt(float(np.mean(resid ** 2))), math.sqrt(max(cov[1, 1], 0.0))


def fit_side(log_k: np.ndarray, alphas=ALPHA_GRID) -> FitResult:
    """Classify one side's decay law from the last half of its terms."""
    M = log_k.size
    r = np.arange(1, M + 1, dtype=float)
    lo = M // 2
    x, y = r[lo:], log_k[lo:]
    (a, slope), rms_p, se_p = _lstsq(np.log(x), y)
    p = -slope
    cands = {"power": {"p": p, "rms": rms_p, "stderr": se_p}}
    best_exp = None
    for alpha in sorted(set(alphas)):
        (ae, b), rms_e, se_e = _lstsq(x ** alpha, y)
        cands[f"exp[{alpha:g}]"] = {"alpha": alpha, "b": b, "rms": rms_e, "stderr": se_e}
        if best_exp is None or rms_e < best_exp[2]:
            best_exp = (alpha, b, rms_e, se_e, ae)
    alpha, b, rms_e, se_e, ae = best_exp
    swing = abs(b) * (x[-1] ** alpha - x[0] ** alpha)
    exp_wins = rms_e < 0.5 * rms_p and swing >= 1.0
    window = (lo + 1, M)
    if exp_wins:
        model = "exp" if b < 0 else "growth"
        z = abs(b) / se_e if se_e > 0 else np.inf
        conf = float(norm.cdf(z) * math.exp(-rms_e))
        v = REMOVABLE if b < 0 else NONREMOVABLE
        if conf < MIN_CONFIDENCE:
            v = INCONCLUSIVE
        return FitResult(model, {"a": ae, "b": b, "alpha": alpha}, rms_e, se_e, window,
                         v, conf, cands)
    if p > 1 + P_MARGIN:
        v, z = REMOVABLE, (p - 1 - P_MARGIN) / se_p if se_p > 0 else np.inf
    elif p <= 1 + P_DIVERGENT_TOL:
        v, z = NONREMOVABLE, (1 + P_DIVERGENT_TOL - p) / se_p if se_p > 0 else np.inf
    else:
        v, z = INCONCLUSIVE, 0.0
    conf = float(norm.cdf(z) * math.exp(-rms_p)) if v != INCONCLUSIVE else 0.0
    if v != INCONCLUSIVE and conf < MIN_CONFIDENCE:
        v = INCONCLUSIVE
    return FitResult("power", {"a": a, "p": p}, rms_p, se_p, window, v, conf, cands)


# ------------------------------------------------------------------ reports

@dataclass
class RemovabilityReport:
    verdict: str
    confidence: float
    method: str
    model: dict
    residual: float
    sides: dict
    terms: KreinTerms | None = None
    label: str = ""
    notes: list = field(default_factory=list)
    margins: dict = field(default_factory=lambda: {
        "p_margin": P_MARGIN, "p_divergent_tol": P_DIVERGENT_TOL,
        "min_confidence": MIN_CONFIDENCE, "near_pair_gap": NEAR_PAIR_GAP})

    @property
    def decisive(self) -> bool:
        return self.verdict != INCONCLUSIVE

    def to_dict(self) -> dict:
        d = {"verdict": self.verdict, "confidence": self.confidence, "method": self.method,
             "model": self.model, "residual": self.residual, "sides": self.sides,
             "label": self.label, "notes": self.notes, "margins": self.margins}
        if self.terms is not None:
            d["n_terms"] = len(self.terms)
            d["partial_sum_last"] = float(self.terms.partial[-1])
        return _clean(d)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _min_relative_gap(points: np.ndarray) -> tuple[float, int]:
    if points.size < 2:
        return np.inf, -1
    gaps = np.diff(points) / np.maximum(1.0, np.abs(points[1:]))
    j = int(np.argmin(gaps))
    return float(gaps[j]), j


def _combine(fits: dict) -> tuple[str, float, str]:
    verdicts = {s: f.verdict for s, f in fits.items()}
    nonrem = [s for s, v in verdicts.items() if v == NONREMOVABLE]
    if nonrem:
        s = max(nonrem, key=lambda s: fits[s].confidence)
        return NONREMOVABLE, fits[s].confidence, s
    if all(v == REMOVABLE for v in verdicts.values()):
        s = min(fits, key=lambda s: fits[s].confidence)
        return REMOVABLE, fits[s].confidence, s
    s = next(s for s, v in verdicts.items() if v == INCONCLUSIVE)
    return INCONCLUSIVE, fits[s].confidence, s


def verdict(spectrum: Spectrum, g: GeneratingFunction | None = None,
            method: str = "series_fit", min_terms: int = MIN_TERMS) -> RemovabilityReport:
    """Classify ``spectrum`` as Removable, Nonremovable or Inconclusive."""
    if method not in ("series_fit", "asymptotic_predictor", "closed_form"):
        raise ParameterError("method", f"unknown method {method!r}")
    gap, j = _min_relative_gap(spectrum.points)
    if gap < NEAR_PAIR_GAP:
        a, b = spectrum.points[j], spectrum.points[j + 1]
        return RemovabilityReport(
            NONREMOVABLE, 1.0, "degenerate", {"model": "near-multiple", "gap": gap,
                                              "pair": [a, b]},
            0.0, {}, None, spectrum.label,
            [f"points {a!r} and {b!r} are closer than {NEAR_PAIR_GAP:g} x local scale"])
    if method == "asymptotic_predictor":
        return _predictor_report(spectrum)
    if method == "closed_form":
        g = g or GeneratingFunction(spectrum, strategy="closed_form")
    terms = krein_terms(spectrum, g)
    tail_alpha = [1.0 / b.exponent for b in spectrum.tail.branches if b.exponent > 0]
    alphas = tuple(ALPHA_GRID) + tuple(a for a in tail_alpha if 0 < a <= 1)
    fits = {}
    for name, side in (("+", terms.t > 0), ("-", terms.t < 0)):
        if side.sum() >= min_terms:
            fits[name] = fit_side(terms.log_k[side], alphas)
    if not fits:
        raise InsufficientDataError(
            f"series fit needs >= {min_terms} terms on at least one side; "
            f"have {int((terms.t > 0).sum())} positive, {int((terms.t < 0).sum())} negative")
    v, conf, decisive_side = _combine(fits)
    f = fits[decisive_side]
    sides = {s: {"model": fr.model, "params": fr.params, "rms": fr.rms, "stderr": fr.stderr,
                 "window": list(fr.window), "verdict": fr.verdict,
                 "confidence": fr.confidence} for s, fr in fits.items()}
    return RemovabilityReport(v, conf, method, {"model": f.model, **f.params, "side": decisive_side},
                              f.rms, sides, terms, spectrum.label)


# ------------------------------------------------------------------ Levin-Pfluger

@dataclass
class LPForecast:
    rho_minus: float | None
    rho_plus: float | None
    D_minus: float
    D_plus: float
    u_minus: float
    u_plus: float
    verdict: str

    def to_dict(self):
        return asdict(self)


def lp_forecast(rho_minus, rho_plus, D_minus, D_plus) -> LPForecast:
    """Growth indicators ``u_pm = D_pm cot(pi rho_pm) + D_mp / sin(pi rho_mp)``.

    An empty side is encoded by ``D = 0``; its exponent may then be ``None``.
    """
    for name, rho, D in (("rho_minus", rho_minus, D_minus), ("rho_plus", rho_plus, D_plus)):
        if D < 0:
            raise ParameterError(name.replace("rho", "D"), "density must be >= 0")
        if D > 0 and not (rho is not None and 0 < rho < 1):
            raise ParameterError(name, "exponent must lie in (0, 1)")
    if D_minus == 0 and D_plus == 0:
        raise ParameterError("D_plus", "at least one side must carry points")

    def cot(r):
        return math.cos(math.pi * r) / math.sin(math.pi * r)

    def half(D, rho):
        return 0.0 if D == 0 else D * cot(rho)

    def cross(D, rho):
        return 0.0 if D == 0 else D / math.sin(math.pi * rho)

    u_p = half(D_plus, rho_plus) + cross(D_minus, rho_minus)
    u_m = half(D_minus, rho_minus) + cross(D_plus, rho_plus)
    # cot(pi/2) is not exactly 0 in floating point
    scale = 1e-12 * (D_minus + D_plus)
    u_p = 0.0 if abs(u_p) <= scale else u_p
    u_m = 0.0 if abs(u_m) <= scale else u_m
    relevant = [u for u, D in ((u_m, D_minus), (u_p, D_plus)) if D > 0]
    if any(u < 0 for u in relevant):
        v = NONREMOVABLE
    elif all(u > 0 for u in relevant):
        v = REMOVABLE
    else:
        v = INCONCLUSIVE
    return LPForecast(rho_minus, rho_plus, float(D_minus), float(D_plus), u_m, u_p, v)


def forecast_for(spectrum: Spectrum) -> LPForecast:
    """Forecast from the declared power tail of ``spectrum``."""
    dens = power_density(spectrum)
    if not dens:
        raise ParameterError("tail", "spectrum has no power-type tail descriptor")
    rp, Dp = dens.get("+", (None, 0.0))
    rm, Dm = dens.get("-", (None, 0.0))
    return lp_forecast(rm, rp, Dm, Dp)


def _predictor_report(spectrum: Spectrum) -> RemovabilityReport:
    fc = forecast_for(spectrum)
    return RemovabilityReport(fc.verdict, 1.0 if fc.verdict != INCONCLUSIVE else 0.0,
                              "asymptotic_predictor", {"model": "levin-pfluger", **fc.to_dict()},
                              0.0, {}, None, spectrum.label)


def finite_edit(spectrum: Spectrum, add=(), remove=(), g_policy: dict | None = None,
                method: str = "series_fit") -> RemovabilityReport:
    """Verdict for ``spectrum`` with finitely many points added and removed."""
    edited = spectrum.edited(add, remove)
    g = GeneratingFunction(edited, **(g_policy or {}))
    return verdict(edited, g, method=method)
