"""Finite sections ``K = diag(1/t) + u v^*`` of the bounded inverse operator.

Eigenvalues are computed twice: by a dense nonsymmetric eigensolver and by
locating the roots of the secular function

    f(lam) = 1 + sum_n w_n / (s_n - lam),   w_n = u_n conj(v_n) = -c_n / (delta t_n^2)

with argument-principle subdivision and Newton polishing.  ``f(1/z)`` equals
``beta_N(z) / delta``, so the two routes are independent checks of each other.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .errors import ContourError, ParameterError, ResolutionError, SolverError, ValidityError
from .perturb_synth import PerturbationData

MAX_DENSE = 512
COLLAPSE_HEADER = ("N", "spectral_radius", "n_zeros_in_window")


def sort_eigenvalues(lam) -> np.ndarray:
    """Modulus descending, ties broken by real then imaginary part."""
    lam = np.asarray(lam, dtype=complex)
    mod = np.abs(lam)
    key = np.round(mod / (mod.max() if mod.size and mod.max() > 0 else 1.0), 12)
    return lam[np.lexsort((lam.imag, lam.real, -key))]


@dataclass
class FiniteSection:
    N: int
    t: np.ndarray
    s: np.ndarray
    u: np.ndarray
    v: np.ndarray
    delta: float
    eigenvalues: np.ndarray | None = None
    notes: list = field(default_factory=list)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.s).astype(complex) + np.outer(self.u, np.conj(self.v))

    @property
    def secular_weights(self) -> np.ndarray:
        return self.u * np.conj(self.v)

    @property
    def is_hermitian(self) -> bool:
        # u a real multiple of v
        nz = np.abs(self.v) > 0
        if not nz.any():
            return bool(np.all(self.u == 0))
        ratio = self.u[nz] / self.v[nz]
        return bool(np.allclose(ratio, ratio[0].real, rtol=1e-13, atol=0)
                    and abs(ratio[0].imag) <= 1e-13 * abs(ratio[0])
                    and np.all(self.u[~nz] == 0))

    def trace_identity(self) -> tuple[complex, complex]:
        """``(trace K, sum (1/t - c/(delta t^2)))`` for the same nodes."""
        return complex(np.trace(self.matrix)), complex(np.sum(self.s + self.secular_weights))

    def secular(self, lam):
        lam = np.asarray(lam, dtype=complex)
        return 1 + np.sum(self.secular_weights / (self.s - lam[..., None]), axis=-1)


def build(data: PerturbationData, N: int) -> FiniteSection:
    """First ``N`` nodes by modulus; ``sqrt(mu)`` conjugation makes adjoints literal."""
    if data.delta == 0:
        raise ValidityError("delta = 0: the bounded-inverse formula needs delta != 0")
    order = data.spectrum.by_modulus()
    if not 1 <= N <= order.size:
        raise ParameterError("N", f"must lie in [1, {order.size}]")
    idx = order[:N]
    t = data.t[idx]
    sq = np.sqrt(data.mu[idx])
    u = -data.a[idx] * sq / (data.delta * t)
    v = data.b[idx] * sq / t
    return FiniteSection(N, t, 1.0 / t, u, v, data.delta)


def eigenvalues_dense(fs: FiniteSection) -> np.ndarray:
    if fs.N > MAX_DENSE:
        raise ParameterError("N", f"dense path limited to N <= {MAX_DENSE}")
    M = fs.matrix
    try:
        lam = scipy.linalg.eigvals(M, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"dense eigensolver failed: {exc}", M) from exc
    lam = sort_eigenvalues(lam)
    fs.eigenvalues = lam
    return lam


# ------------------------------------------------------------------ secular route

class _SecularSolver:
    def __init__(self, s, w, max_boxes=20000):
        self.s = s
        self.w = w
        self.max_boxes = max_boxes
        self.scale = max(float(np.max(np.abs(s))), 1e-300) if s.size else 1.0
        self.evals = 0

    def f(self, lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        self.evals += lam.size
        out = np.ones(lam.shape, dtype=complex)
        for i in range(0, lam.size, 2048):
            blk = lam[i:i + 2048]
            out[i:i + 2048] += (self.w / (self.s - blk[:, None])).sum(axis=1)
        return out

    def df(self, lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        return (self.w / (self.s - lam[:, None]) ** 2).sum(axis=1)

    def poles_in(self, box):
        x0, x1, y0, y1 = box
        if not (y0 < 0 < y1):
            return 0
        return int(np.count_nonzero((self.s > x0) & (self.s < x1)))

    def _edge_winding(self, a, b, max_samples=200000):
        """Phase change of f along [a, b], refined by a derivative bound.

        An interval of length h starting at z is accepted once
        ``sum |w| h / (d (d - h)) < 0.9 |f(z)|`` with ``d = |z - s|``, which
        bounds ``|f - f(z)|`` on it; f then has no zero there and its phase
        moves by less than pi/2.
        """
        sw = np.abs(self.w)
        z = a + (b - a) * np.linspace(0.0, 1.0, 17)
        v = self.f(z)
        za, zb, va, vb = z[:-1], z[1:], v[:-1], v[1:]
        total, used = 0.0, z.size
        while za.size:
            h = np.abs(zb - za)
            d0 = np.abs(za[:, None] - self.s[None, :])
            d1 = d0 - h[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                bound = h * np.where(d1 > 0, sw / np.where(d1 > 0, d0 * d1, 1), np.inf).sum(axis=1)
            ok = bound < 0.9 * np.abs(va)
            total += float(np.angle(vb[ok] / va[ok]).sum())
            bad = ~ok
            if not bad.any():
                break
            if used > max_samples or np.min(np.abs(va[bad])) < 1e-14:
                raise ContourError("root too close to box edge", (a, b))
            za, zb, va, vb = za[bad], zb[bad], va[bad], vb[bad]
            zm = 0.5 * (za + zb)
            vm = self.f(zm)
            used += zm.size
            za, zb = np.concatenate([za, zm]), np.concatenate([zm, zb])
            va, vb = np.concatenate([va, vm]), np.concatenate([vm, vb])
        return total

    def count(self, box):
        x0, x1, y0, y1 = box
        corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
        total = sum(self._edge_winding(a, b) for a, b in zip(corners, corners[1:] + corners[:1]))
        return int(round(total / (2 * np.pi))) + self.poles_in(box)

    def _split_x(self, x0, x1):
        xm = 0.5 * (x0 + x1)
        width = x1 - x0
        if self.s.size:
            d = np.abs(self.s - xm)
            j = int(np.argmin(d))
            if d[j] < 1e-3 * width:
                xm = self.s[j] + (0.05 if self.s[j] <= xm else -0.05) * width
        return xm

    def _split_y(self, y0, y1):
        ym = 0.5 * (y0 + y1)
        if abs(ym) < 1e-3 * (y1 - y0):
            ym = y0 + 0.53 * (y1 - y0)
        return ym

    def newton(self, lam, box, tol=4e-16):
        x0, x1, y0, y1 = box
        pad = 1e-9 * max(x1 - x0, y1 - y0)
        prev = np.inf
        for _ in range(80):
            fv, dv = self.f(lam)[0], self.df(lam)[0]
            if dv == 0 or not np.isfinite(fv):
                return None
            step = fv / dv
            lam = lam - step
            if not (x0 - pad <= lam.real <= x1 + pad and y0 - pad <= lam.imag <= y1 + pad):
                return None
            size = abs(step) / max(abs(lam), 1e-3 * self.scale)
            if size <= tol:
                return lam
            # rounding floor: steps stopped shrinking at a tiny size
            if size < 1e-11 and abs(step) >= 0.5 * prev:
                return lam
            prev = abs(step)
        return None

    def solve(self, expected):
        R = 1.05 * self.bound + 1e-300
        box = (-R, R, -R * 0.997, R * 1.003)
        n = self.count(box)
        if n != expected:
            box = tuple(2 * v for v in box)
            n = self.count(box)
        if n != expected:
            raise ResolutionError(f"bounding box holds {n} roots, expected {expected}", [box])
        roots, clusters = [], []
        queue = [(box, n)]
        boxes = 0
        while queue:
            box, k = queue.pop()
            boxes += 1
            if boxes > self.max_boxes:
                raise ResolutionError("secular root budget exceeded", [b for b, _ in queue][:20])
            x0, x1, y0, y1 = box
            size = max(x1 - x0, y1 - y0)
            centre = complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))
            if k == 1:
                r = self.newton(centre, box)
                if r is not None:
                    roots.append(r)
                    continue
            if size < 1e-13 * self.scale:
                r = self.newton(centre, box) or centre
                roots.extend([r] * k)
                clusters.append((box, k))
                continue
            children = self._subdivide(box)
            got = sum(c for _, c in children)
            if got != k:
                raise ResolutionError(f"child counts {got} != parent {k}", [box])
            queue.extend((b, c) for b, c in children if c > 0)
        return np.array(roots, dtype=complex), clusters

    def _subdivide(self, box):
        x0, x1, y0, y1 = box
        last = None
        for attempt in range(6):
            xm = self._split_x(x0, x1) + attempt * 0.013 * (x1 - x0)
            ym = self._split_y(y0, y1) + attempt * 0.017 * (y1 - y0)
            kids = [(x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)]
            try:
                return [(b, self.count(b)) for b in kids]
            except (ContourError, ResolutionError) as exc:
                last = exc
        raise ResolutionError(f"could not subdivide box {box}: {last}", [box])


def eigenvalues_secular(fs: FiniteSection, m=None, max_boxes: int = 20000) -> np.ndarray:
    """Roots of the secular function, plus deflated diagonal entries.

    ``m`` (a ModelEvaluator) is accepted for interface symmetry; the secular
    function is built from the section itself so that both routes see the
    same truncation.
    """
    w = fs.secular_weights
    s = fs.s
    # a pole whose weight is negligible leaves an eigenvalue s_n + w_n / F_n
    F = np.empty(s.size, dtype=complex)
    for n in range(s.size):
        others = np.arange(s.size) != n
        F[n] = 1 + np.sum(w[others] / (s[others] - s[n]))
    shift = np.where(F != 0, w / np.where(F != 0, F, 1), np.inf)
    deflate = (w == 0) | (np.abs(shift) <= 1e-14 * np.abs(s))
    fs.notes = [f"deflated {int(deflate.sum())} node(s)"] if deflate.any() else []
    defl = s[deflate] + np.where(w[deflate] == 0, 0, shift[deflate])
    keep = ~deflate
    solver = _SecularSolver(s[keep], w[keep], max_boxes)
    solver.bound = float(np.max(np.abs(s)) + np.linalg.norm(fs.u) * np.linalg.norm(fs.v))
    if keep.any():
        roots, clusters = solver.solve(int(keep.sum()))
        if clusters:
            fs.notes.append(f"{len(clusters)} clustered root group(s)")
    else:
        roots = np.empty(0, dtype=complex)
    return sort_eigenvalues(np.concatenate([roots, defl.astype(complex)]))


def match_multisets(a, b) -> np.ndarray:
    """Relative errors of the optimal pairing of two eigenvalue lists."""
    a, b = np.asarray(a, complex), np.asarray(b, complex)
    if a.size != b.size:
        raise ParameterError("eigenvalues", f"sizes differ: {a.size} vs {b.size}")
    cost = np.abs(a[:, None] - b[None, :])
    i, j = linear_sum_assignment(cost)
    scale = np.maximum(np.abs(a[i]), 1e-300)
    return cost[i, j] / scale


def spectral_radius(fs: FiniteSection) -> float:
    lam = fs.eigenvalues if fs.eigenvalues is not None else eigenvalues_dense(fs)
    return float(np.max(np.abs(lam)))


@dataclass
class CollapseRow:
    N: int
    spectral_radius: float
    n_zeros_in_window: int


def collapse_profile(data: PerturbationData, Ns, window: float = 30.0) -> list[CollapseRow]:
    """Spectral radius per ``N`` and the number of eigenvalues with ``|lam| >= 1/window``.

    The latter counts the zeros of ``beta_N`` in the disc ``|z| <= window``.
    """
    Ns = [int(n) for n in Ns]
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ParameterError("Ns", "must be strictly increasing")
    rows = []
    for N in Ns:
        lam = eigenvalues_dense(build(data, N))
        mod = np.abs(lam)
        rows.append(CollapseRow(N, float(mod.max()), int(np.count_nonzero(mod >= 1.0 / window))))
    return rows


def collapse_csv(rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(COLLAPSE_HEADER)
    for r in rows:
        w.writerow([r.N, repr(r.spectral_radius), r.n_zeros_in_window])
    return out.getvalue()


def is_strictly_decreasing(rows) -> bool:
    r = [row.spectral_radius for row in rows]
    return all(b < a for a, b in zip(r, r[1:]))


def rank_one_gap(fs: FiniteSection) -> float:
    """Second singular value over the first for ``K - diag(s)``."""
    sv = np.linalg.svd(fs.matrix - np.diag(fs.s), compute_uv=False)
    return float(sv[1] / sv[0]) if sv.size > 1 and sv[0] > 0 else 0.0


__all__ = ["FiniteSection", "build", "eigenvalues_dense", "eigenvalues_secular",
           "collapse_profile", "collapse_csv", "match_multisets", "sort_eigenvalues",
           "spectral_radius", "rank_one_gap", "is_strictly_decreasing", "CollapseRow",
           "MAX_DENSE", "COLLAPSE_HEADER"]
