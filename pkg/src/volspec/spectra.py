"""Discrete real spectra and the parametric families used for experiments.

A :class:`Spectrum` is a finite, sorted, materialized piece of an infinite
sequence ``t_n`` together with a :class:`Tail` describing how the sequence
continues.  Tails are sums of *branches* ``sign * scale * (m + shift)**exponent``
for integer ``m >= start``; every family here has an exact branch form, which
lets the product code compute tail power sums ``S_k = sum t^-k`` with the
Hurwitz zeta function.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.special import zeta

from .errors import MembershipError, ParameterError, RangeError, SpectrumError, TailDivergenceError

DEFAULT_COUNT = 5000
FAMILIES = (
    "two_sided_power",
    "one_sided_power",
    "squares",
    "shifted_progression",
    "livsic",
    "integers_punctured",
    "near_pairs",
    "custom",
)


@dataclass(frozen=True)
class Branch:
    """Tail points ``sign * scale * (m + shift)**exponent`` for ``m >= start``."""

    sign: int
    scale: float
    exponent: float
    shift: float
    start: int
    multiplicity: int = 1

    def points(self, count: int) -> np.ndarray:
        m = self.start + np.arange(count, dtype=float)
        return self.sign * self.scale * (m + self.shift) ** self.exponent

    def first(self) -> float:
        return abs(self.scale * (self.start + self.shift) ** self.exponent)

    def mirror_key(self):
        return (self.scale, self.exponent, self.shift, self.start, self.multiplicity)

    def power_sum(self, k: int) -> float:
        """``sum_{m >= start} t_m**-k`` (signed) via Hurwitz zeta."""
        s = k * self.exponent
        if s <= 1.0:
            raise TailDivergenceError(
                f"tail sum of order {k} diverges for exponent {self.exponent}")
        val = self.multiplicity * self.scale ** (-k) * float(zeta(s, self.start + self.shift))
        return val * (self.sign ** k)

    def to_dict(self) -> dict:
        return {"sign": self.sign, "scale": self.scale, "exponent": self.exponent,
                "shift": self.shift, "start": self.start, "multiplicity": self.multiplicity}


@dataclass(frozen=True)
class Tail:
    kind: str = "none"  # none | power | paired-power | arithmetic | near-pairs
    branches: tuple[Branch, ...] = ()
    density: tuple[float, ...] = ()  # D per branch, for n(r) ~ D r^rho

    @property
    def known(self) -> bool:
        return self.kind != "none" and bool(self.branches)

    def power_sum(self, k: int) -> float:
        """Total tail sum ``S_k``; odd orders cancel between mirrored branches."""
        pending = list(self.branches)
        total = 0.0
        while pending:
            b = pending.pop(0)
            if k % 2 == 1:
                mate = next((o for o in pending
                             if o.sign == -b.sign and o.mirror_key() == b.mirror_key()), None)
                if mate is not None:
                    pending.remove(mate)
                    continue
            total += b.power_sum(k)
        return total

    def nearest(self) -> float:
        """Smallest |t| among tail points (``inf`` without a tail)."""
        if not self.known:
            return np.inf
        return min(b.first() for b in self.branches)

    def virtual_points(self, count: int) -> tuple[np.ndarray, "Tail"]:
        """First ``count`` points of every branch plus the tail that remains."""
        if not self.known or count <= 0:
            return np.empty(0), self
        pts = [np.repeat(b.points(count), b.multiplicity) for b in self.branches]
        rest = tuple(Branch(b.sign, b.scale, b.exponent, b.shift, b.start + count,
                            b.multiplicity) for b in self.branches)
        return np.concatenate(pts), Tail(self.kind, rest, self.density)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "branches": [b.to_dict() for b in self.branches],
                "density": list(self.density)}

    @classmethod
    def from_dict(cls, d: dict | None) -> "Tail":
        if not d:
            return cls()
        return cls(d.get("kind", "none"),
                   tuple(Branch(**b) for b in d.get("branches", [])),
                   tuple(d.get("density", [])))


@dataclass(frozen=True)
class FamilySpec:
    family: str
    params: dict = field(default_factory=dict)
    count: int = DEFAULT_COUNT

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError("family", f"unknown family {self.family!r}")
        if not isinstance(self.count, (int, np.integer)) or self.count < 1:
            raise ParameterError("count", "must be a positive integer")


@dataclass(frozen=True, eq=False)
class Spectrum:
    points: np.ndarray
    tail: Tail = Tail()
    label: str = ""
    family: str | None = None
    params: dict = field(default_factory=dict)
    count: int | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).ravel()
        if pts.size == 0:
            raise SpectrumError("spectrum is empty")
        if not np.all(np.isfinite(pts)):
            raise SpectrumError("points must be finite")
        if np.any(pts == 0.0):
            raise SpectrumError("0 must not be a point of the spectrum")
        pts = np.sort(pts)
        if np.any(np.diff(pts) <= 0):
            raise SpectrumError("points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.family is None:
            object.__setattr__(self, "family", "custom")
        if self.count is None:
            object.__setattr__(self, "count", int(pts.size))

    def __len__(self) -> int:
        return self.points.size

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        return (np.array_equal(self.points, other.points) and self.tail == other.tail
                and self.label == other.label and self.family == other.family
                and self.params == other.params)

    __hash__ = None

    @property
    def positive(self) -> np.ndarray:
        return self.points[self.points > 0]

    @property
    def negative(self) -> np.ndarray:
        return self.points[self.points < 0]

    @property
    def radius(self) -> float:
        return float(np.max(np.abs(self.points)))

    def by_modulus(self) -> np.ndarray:
        """Indices into ``points`` ordered by |t|, ties broken negative first."""
        return np.lexsort((self.points, np.abs(self.points)))

    def counting_function(self, r: float) -> int:
        """``#{n : t_n in [0, r]}`` over the materialized points."""
        if r <= 0:
            raise RangeError("r must be positive")
        if r > self.radius:
            raise RangeError(f"r={r} beyond materialized range {self.radius}")
        return int(np.count_nonzero((self.points >= 0) & (self.points <= r)))

    def reciprocal_view(self) -> np.ndarray:
        return 1.0 / self.points

    @classmethod
    def from_reciprocals(cls, s: Sequence[float], label: str = "") -> "Spectrum":
        return cls(1.0 / np.asarray(s, dtype=float), label=label, family="custom")

    def edited(self, add: Iterable[float] = (), remove: Iterable[float] = (),
               tol: float = 1e-12) -> "Spectrum":
        """Finite edit: drop members of ``remove``, insert ``add``; tail unchanged."""
        add, remove = [float(a) for a in add], [float(r) for r in remove]
        pts = self.points.copy()
        keep = np.ones(pts.size, dtype=bool)
        for r in remove:
            hit = np.flatnonzero(np.abs(pts - r) <= tol * max(1.0, abs(r)))
            if hit.size == 0:
                raise MembershipError(f"cannot remove {r}: not a point of the spectrum")
            keep[hit[0]] = False
        pts = np.concatenate([pts[keep], np.asarray(list(add), dtype=float)])
        edits = {"add": add, "remove": remove}
        params = dict(self.params)
        params["edits"] = params.get("edits", []) + [edits]
        return Spectrum(pts, self.tail, self.label + " (edited)", self.family, params)

    def mirrored(self) -> "Spectrum":
        """The spectrum ``{-t_n}``."""
        tail = Tail(self.tail.kind,
                    tuple(Branch(-b.sign, b.scale, b.exponent, b.shift, b.start, b.multiplicity)
                          for b in self.tail.branches),
                    self.tail.density)
        return Spectrum(-self.points, tail, self.label + " (mirrored)", self.family,
                        dict(self.params))

    # ------------------------------------------------------------- json
    def to_dict(self) -> dict:
        d: dict[str, Any] = {}
        if self.family is not None:
            d["family"] = self.family
        d.update({"params": _jsonable(self.params), "count": int(self.count),
                  "points": [float(p) for p in self.points], "tail": self.tail.to_dict(),
                  "label": self.label})
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "Spectrum":
        if "points" not in d:
            raise SpectrumError("spectrum document has no 'points'")
        return cls(np.asarray(d["points"], dtype=float), Tail.from_dict(d.get("tail")),
                   d.get("label", ""), d.get("family", "custom"), d.get("params", {}),
                   d.get("count"))

    @classmethod
    def from_json(cls, text: str) -> "Spectrum":
        return cls.from_dict(json.loads(text))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ------------------------------------------------------------------ families

def _positive(params, name, default=None):
    val = params.get(name, default)
    if val is None:
        raise ParameterError(name, "required")
    try:
        val = float(val)
    except (TypeError, ValueError):
        raise ParameterError(name, f"not a number: {val!r}") from None
    if not val > 0:
        raise ParameterError(name, "must be > 0")
    return val


def _mirror(branch: Branch) -> tuple[Branch, Branch]:
    return branch, Branch(-1, branch.scale, branch.exponent, branch.shift, branch.start,
                          branch.multiplicity)


def _insert_extra(points: np.ndarray, t0, name="t0") -> np.ndarray:
    if t0 is None:
        return points
    t0 = float(t0)
    if t0 == 0.0 or np.any(points == t0):
        raise ParameterError(name, f"{t0} collides with 0 or an existing point")
    return np.sort(np.append(points, t0))


def generate(spec: FamilySpec) -> Spectrum:
    """Materialize ``spec.count`` points per side of the requested family."""
    fam, p, N = spec.family, dict(spec.params), int(spec.count)
    n = np.arange(1, N + 1, dtype=float)

    if fam == "two_sided_power":
        g = _positive(p, "gamma")
        pts = np.concatenate([-n[::-1] ** g, n ** g])
        pts = _insert_extra(pts, p.get("t0"))
        tail = Tail("paired-power", _mirror(Branch(1, 1.0, g, 0.0, N + 1)), (1.0, 1.0))
        label = f"t_n = |n|^{g:g} sign n" + (f" with t0={p['t0']}" if p.get("t0") is not None else "")
    elif fam == "one_sided_power":
        g = _positive(p, "gamma")
        pts = n ** g
        tail = Tail("power", (Branch(1, 1.0, g, 0.0, N + 1),), (1.0,))
        label = f"t_n = n^{g:g}, n >= 1"
    elif fam == "squares":
        n0 = p.get("n0", 1)
        if int(n0) != n0 or n0 < 1:
            raise ParameterError("n0", "must be a positive integer")
        n0 = int(n0)
        p["n0"] = n0
        pts = (n0 - 1 + n) ** 2
        tail = Tail("power", (Branch(1, 1.0, 2.0, 0.0, n0 + N),), (1.0,))
        label = f"t_n = n^2, n >= {n0}"
    elif fam == "shifted_progression":
        a = _positive(p, "a")
        k = n - 1 + a
        pts = np.concatenate([-k[::-1], k])
        tail = Tail("arithmetic", _mirror(Branch(1, 1.0, 1.0, a, N)), (1.0, 1.0))
        label = f"t = +-(k + {a:g}), k >= 0"
    elif fam == "livsic":
        c = p.get("c", 1.0)
        try:
            c = float(c)
        except (TypeError, ValueError):
            raise ParameterError("c", f"not a number: {c!r}") from None
        if c == 0.0 or not np.isfinite(c):
            raise ParameterError("c", "must be finite and nonzero")
        half = (n - 0.5) / abs(c)
        pts = np.concatenate([-half[::-1], half])
        tail = Tail("arithmetic", _mirror(Branch(1, 1.0 / abs(c), 1.0, 0.5, N)),
                    (1.0, 1.0))
        label = f"t_n = (n + 1/2)/{c:g}, n in Z"
    elif fam == "integers_punctured":
        t0 = p.get("t0", 0.5)
        p["t0"] = t0
        pts = _insert_extra(np.concatenate([-n[::-1], n]), t0)
        tail = Tail("arithmetic", _mirror(Branch(1, 1.0, 1.0, 0.0, N + 1)), (1.0, 1.0))
        label = "Z \\ {0}" + (f" with t0={t0}" if t0 is not None else "")
    elif fam == "near_pairs":
        return _near_pairs(spec)
    else:  # custom
        pts = p.get("points")
        if pts is None:
            raise ParameterError("points", "custom family needs a point list")
        pts = np.asarray(pts, dtype=float)
        tail = Tail()
        label = "custom"
        N = pts.size
    label = p.pop("label", label)
    return Spectrum(pts, tail, label, fam, p, N)


def _near_pairs(spec: FamilySpec) -> Spectrum:
    p = dict(spec.params)
    base_family = p.get("base", "integers_punctured")
    base_params = dict(p.get("base_params", {"t0": None} if base_family == "integers_punctured" else {}))
    if base_family in ("near_pairs", "custom"):
        raise ParameterError("base", f"{base_family} cannot serve as a near-pair base")
    base = generate(FamilySpec(base_family, base_params, spec.count))
    q = p.get("q", 0.5)
    deltas = p.get("deltas")
    if deltas is None:
        q = float(q)
        if not 0 < q < 1:
            raise ParameterError("q", "must lie in (0, 1) so that gaps tend to 0")
    else:
        deltas = np.asarray(deltas, dtype=float)
        if np.any(deltas <= 0):
            raise ParameterError("deltas", "gaps must be positive")
    pts = base.points
    rank = np.empty(pts.size, dtype=int)
    for side in (pts > 0, pts < 0):
        idx = np.flatnonzero(side)
        order = idx[np.argsort(np.abs(pts[idx]))]
        rank[order] = np.arange(1, order.size + 1)
    if deltas is None:
        d = q ** rank.astype(float)
    else:
        d = np.where(rank <= deltas.size, deltas[np.minimum(rank, deltas.size) - 1], 0.0)
    partner = pts + np.sign(pts) * d
    # gaps below a few ulps cannot be represented; those pairs stay unresolved
    ok = (d > 0) & (np.abs(partner - pts) > 4 * np.spacing(np.abs(pts)))
    gaps = np.sort(np.abs(np.diff(np.sort(pts))))
    ok &= d < 0.5 * (gaps[0] if gaps.size else 1.0)
    unresolved = int(np.count_nonzero(~ok))
    new = np.concatenate([pts, partner[ok]])
    tail = Tail("near-pairs",
                tuple(Branch(b.sign, b.scale, b.exponent, b.shift, b.start, 2)
                      for b in base.tail.branches),
                tuple(2 * x for x in base.tail.density))
    params = {"base": base_family, "base_params": base_params,
              "unresolved_pairs": unresolved}
    if deltas is None:
        params["q"] = q
    else:
        params["deltas"] = deltas.tolist()
    label = p.get("label", f"near pairs over {base.label}")
    return Spectrum(new, tail, label, "near_pairs", params, spec.count)


def power_density(spectrum: Spectrum) -> dict:
    """Exponent/density ``(rho, D)`` per side for power-type tails, if declared."""
    out = {}
    for b, dens in zip(spectrum.tail.branches, spectrum.tail.density):
        rho = 1.0 / b.exponent
        D = dens * b.scale ** (-rho)
        out["+" if b.sign > 0 else "-"] = (rho, D)
    return out
