"""Command-line front end.

Exit codes: 0 success, 1 usage or I/O error, 2 numerical failure,
3 inconclusive verdict under ``--strict``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import InputError, NumericalError, ParameterError, VolspecError
from .finite_section import collapse_csv, collapse_profile
from .krein_diag import INCONCLUSIVE, forecast_for, verdict
from .model_funcs import ModelEvaluator
from .nustar import MAX_STEPS, run as nustar_run, verify as nustar_verify
from .perturb_synth import PerturbationData, SmoothSynthSpec, synthesize, synthesize_smooth
from .spectra import FamilySpec, Spectrum, generate

log = logging.getLogger("volspec")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 1, 2, 3
SWEEP_HEADER = ("param", "verdict", "confidence", "u_minus", "u_plus")
FAMILIES = ("two_sided_power", "one_sided_power", "squares", "shifted_progression", "livsic",
            "integers_punctured", "near_pairs", "custom")
SWEEPABLE = {"gamma": "gamma", "a": "a", "c": "c"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # prefix matching would read --c as --config
    def __init__(self, *a, **kw):
        kw.setdefault("allow_abbrev", False)
        super().__init__(*a, **kw)

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    """Validated view of the parsed flags."""
    command: str
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    strict: bool = False
    meta: bool = True

    def __post_init__(self):
        ins = [os.path.abspath(p) for p in self.inputs if p]
        outs = [os.path.abspath(p) for p in self.outputs if p]
        if len(set(outs)) != len(outs) or set(ins) & set(outs):
            raise UsageError("input and output paths must be distinct")


def parse_grid(text: str) -> list[float]:
    """``lo:hi:step`` (inclusive of ``hi`` up to rounding) or a comma list."""
    try:
        if ":" in text:
            lo, hi, step = (float(v) for v in text.split(":"))
            if not lo < hi or step <= 0:
                raise UsageError(f"grid {text!r} needs lo < hi and step > 0")
            n = int(np.floor((hi - lo) / step + 1e-9)) + 1
            return [round(lo + i * step, 12) for i in range(n)]
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}") from None
    if not vals:
        raise UsageError("empty grid")
    return vals


def _family_params(args) -> tuple[str, dict]:
    if args.custom is not None:
        try:
            pts = [float(v) for v in args.custom.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"cannot parse --custom {args.custom!r}") from None
        return "custom", {"points": pts}
    if args.family is None:
        raise UsageError("--family or --custom is required")
    p = {}
    for name in ("gamma", "a", "c", "n0", "q"):
        v = getattr(args, name, None)
        if v is not None:
            p[name] = v
    if args.t0 is not None:
        p["t0"] = None if args.t0.lower() == "none" else float(args.t0)
    if args.family == "near_pairs" and args.base:
        p["base"] = args.base
    return args.family, p


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _write(path: str | None, text: str, stdout) -> None:
    if path in (None, "-"):
        stdout.write(text)
        if not text.endswith("\n"):
            stdout.write("\n")
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def _with_meta(payload: dict, args) -> dict:
    if not args.no_meta:
        payload = dict(payload)
        payload["meta"] = {"version": __version__,
                           "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    return payload


def _dump(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _load_spectrum(path: str) -> Spectrum:
    try:
        return Spectrum.from_json(_read(path))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"{path}: not a spectrum file ({exc})") from None


def _load_pert(path: str) -> PerturbationData:
    try:
        return PerturbationData.from_json(_read(path))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"{path}: not a perturbation file ({exc})") from None


# ------------------------------------------------------------------ commands

def cmd_spectrum(args, out) -> int:
    RunConfig("spectrum", [], [args.out])
    fam, params = _family_params(args)
    s = generate(FamilySpec(fam, params, args.count))
    payload = _with_meta(s.to_dict(), args)
    _write(args.out, _dump(payload), out)
    return EXIT_OK


def cmd_diagnose(args, out) -> int:
    cfg = RunConfig("diagnose", [args.spectrum], [args.terms_csv, args.report], args.strict)
    s = _load_spectrum(args.spectrum)
    rep = verdict(s, method=args.method, min_terms=args.min_terms)
    if args.terms_csv and rep.terms is not None:
        _write(args.terms_csv, rep.terms.to_csv(), out)
    _write(args.report, _dump(_with_meta(rep.to_dict(), args)), out)
    log.info("verdict %s (confidence %.3f)", rep.verdict, rep.confidence)
    if cfg.strict and rep.verdict == INCONCLUSIVE:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def cmd_synthesize(args, out) -> int:
    RunConfig("synthesize", [args.spectrum], [args.out])
    s = _load_spectrum(args.spectrum)
    if args.smooth:
        a1, a2, gm = args.smooth
        spec = SmoothSynthSpec(a1, a2, gm, rescale=args.rescale)
        data = synthesize_smooth(s, spec=spec, masses=args.masses, force=args.force)
    else:
        data = synthesize(s, masses=args.masses, force=args.force)
    payload = json.loads(data.to_json())
    _write(args.out, _dump(_with_meta(payload, args)), out)
    return EXIT_OK


def _parse_rect(text: str):
    if text == "auto":
        return "auto"
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"cannot parse --rect {text!r}") from None
    if len(vals) != 4:
        raise UsageError("--rect needs x0,x1,y0,y1")
    return vals


def _profile_ns(N: int) -> list[int]:
    Ns = sorted({max(1, N // 8), max(1, N // 4), max(1, N // 2), N})
    return Ns


def cmd_verify(args, out) -> int:
    RunConfig("verify", [args.pert], [args.report, args.collapse_csv])
    data = _load_pert(args.pert)
    result = {}
    if args.mode in ("winding", "both"):
        m = ModelEvaluator(data)
        rep = m.count_zeros(_parse_rect(args.rect), fn=args.fn)
        result["winding"] = rep.to_dict()
        log.info("zeros in rectangle: %d", rep.zeros)
    if args.mode in ("finsec", "both"):
        if args.N > len(data.spectrum):
            raise ParameterError("N", f"exceeds the {len(data.spectrum)} materialized points")
        rows = collapse_profile(data, _profile_ns(args.N))
        result["collapse"] = [{"N": r.N, "spectral_radius": r.spectral_radius,
                               "n_zeros_in_window": r.n_zeros_in_window} for r in rows]
        radii = [r.spectral_radius for r in rows]
        result["collapse_decreasing"] = all(b < a for a, b in zip(radii, radii[1:]))
        if args.collapse_csv:
            _write(args.collapse_csv, collapse_csv(rows), out)
    _write(args.report, _dump(_with_meta(result, args)), out)
    return EXIT_OK


def _sweep_point(family, base, name, value, count, method):
    params = dict(base)
    params[name] = value
    s = generate(FamilySpec(family, params, count))
    rep = verdict(s, method=method)
    try:
        fc = forecast_for(s)
        um, up = fc.u_minus, fc.u_plus
    except (ParameterError, ValueError):
        um = up = None
    return value, rep.verdict, rep.confidence, um, up


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def cmd_sweep(args, out) -> int:
    RunConfig("sweep", [], [args.out], args.strict)
    swept = [(n, getattr(args, f"{n}_grid")) for n in SWEEPABLE if getattr(args, f"{n}_grid")]
    if len(swept) != 1:
        raise UsageError("sweep needs exactly one grid among --gamma, --a, --c")
    name, text = swept[0]
    grid = parse_grid(text)
    base = {}
    if args.n0 is not None:
        base["n0"] = args.n0
    workers = max(1, int(os.environ.get("VS_NUM_THREADS", "1") or 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves grid order regardless of completion order
        rows = list(pool.map(lambda v: _sweep_point(args.family, base, name, v, args.count,
                                                    args.method), grid))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    _write(args.out, buf.getvalue(), out)
    if args.strict and any(r[1] == INCONCLUSIVE for r in rows):
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def cmd_nustar(args, out) -> int:
    RunConfig("nustar", [args.pert], [args.out])
    data = _load_pert(args.pert)
    if not 1 <= args.steps <= MAX_STEPS:
        raise ParameterError("steps", f"must lie in [1, {MAX_STEPS}]")
    nu0 = data.herglotz_weights
    state = nustar_run(data.spectrum, None, nu0, args.steps, r0=args.r0, tau_rule=args.tau_rule,
                       window=args.window)
    payload = json.loads(state.to_json())
    payload["verification"] = nustar_verify(state)
    _write(args.out, _dump(_with_meta(payload, args)), out)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_family_flags(p, grid=False):
    p.add_argument("--family", choices=FAMILIES)
    if grid:
        p.add_argument("--gamma", dest="gamma_grid", help="lo:hi:step or comma list")
        p.add_argument("--a", dest="a_grid", help="lo:hi:step or comma list")
        p.add_argument("--c", dest="c_grid", help="lo:hi:step or comma list")
    else:
        p.add_argument("--gamma", type=float)
        p.add_argument("--a", type=float)
        p.add_argument("--c", type=float)
        p.add_argument("--t0", help="extra point; 'none' for the bare integer lattice")
        p.add_argument("--q", type=float, help="near-pair gap ratio")
        p.add_argument("--base", help="base family for near_pairs")
        p.add_argument("--custom", help="comma-separated point list")
    p.add_argument("--n0", type=int)
    p.add_argument("--count", type=int, default=2000)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file whose keys mirror the long flags")
    common.add_argument("--strict", action="store_true", help="exit 3 on Inconclusive")
    common.add_argument("--no-meta", action="store_true", help="omit the metadata block")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="volspec", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    sp = sub.add_parser("spectrum", parents=[common], help="write a spectrum JSON")
    _add_family_flags(sp)
    sp.add_argument("--out")

    dg = sub.add_parser("diagnose", parents=[common], help="removability verdict")
    dg.add_argument("--spectrum", required=True)
    dg.add_argument("--method", default="series_fit",
                    choices=("series_fit", "asymptotic_predictor", "closed_form"))
    dg.add_argument("--min-terms", type=int, default=64)
    dg.add_argument("--terms-csv")
    dg.add_argument("--report")

    sy = sub.add_parser("synthesize", parents=[common], help="perturbation data JSON")
    sy.add_argument("--spectrum", required=True)
    sy.add_argument("--masses", default="unit", choices=("unit", "abs_c"))
    sy.add_argument("--smooth", nargs=3, type=float, metavar=("ALPHA1", "ALPHA2", "GAMMA"))
    sy.add_argument("--rescale", action=argparse.BooleanOptionalAction, default=True)
    sy.add_argument("--force", action="store_true")
    sy.add_argument("--out")

    vf = sub.add_parser("verify", parents=[common], help="winding and finite sections")
    vf.add_argument("--pert", required=True)
    vf.add_argument("--mode", default="both", choices=("winding", "finsec", "both"))
    vf.add_argument("--N", type=int, default=200)
    vf.add_argument("--rect", default="auto")
    vf.add_argument("--fn", default="beta", choices=("beta", "g"))
    vf.add_argument("--report")
    vf.add_argument("--collapse-csv")

    sw = sub.add_parser("sweep", parents=[common], help="verdict phase table")
    _add_family_flags(sw, grid=True)
    sw.add_argument("--method", default="series_fit",
                    choices=("series_fit", "asymptotic_predictor", "closed_form"))
    sw.add_argument("--out")

    ns = sub.add_parser("nustar", parents=[common], help="inductive reweighting log")
    ns.add_argument("--pert", required=True)
    ns.add_argument("--steps", type=int, default=4)
    ns.add_argument("--r0", type=float, default=0.0)
    ns.add_argument("--tau-rule", default="equality", choices=("equality", "floor"))
    ns.add_argument("--window", type=float)
    ns.add_argument("--out")
    return p


COMMANDS = {"spectrum": cmd_spectrum, "diagnose": cmd_diagnose, "synthesize": cmd_synthesize,
            "verify": cmd_verify, "sweep": cmd_sweep, "nustar": cmd_nustar}


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    args = parser.parse_args(argv)
    if not known.config:
        return args
    try:
        cfg = json.loads(_read(known.config))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{known.config}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    # flags given explicitly on the command line win over the config file
    explicit = {a.split("=", 1)[0].lstrip("-").replace("-", "_") for a in argv
                if a.startswith("--")}
    for key, val in cfg.items():
        k = key.replace("-", "_")
        if not hasattr(args, k):
            raise UsageError(f"config key {key!r} is not a flag of {args.command!r}")
        if k not in explicit:
            setattr(args, k, val)
    return args


def main(argv=None, stdout=None, stderr=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if not args.command:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=stderr)
        return COMMANDS[args.command](args, stdout)
    except UsageError as exc:
        print(f"usage error: {exc}", file=stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"input error: {exc}", file=stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=stderr)
        for attr in ("box", "boxes"):
            if getattr(exc, attr, None) is not None:
                print(f"failing {attr}: {getattr(exc, attr)}", file=stderr)
        return EXIT_NUMERIC
    except VolspecError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
