"""Command-line driver: curvature, kt-solve, fi-solve, verify and report.

Reports are JSON documents with sorted keys. Exit status: 0 success,
2 validation error, 3 ill-conditioned solve, 4 certification failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys as _sys
from fractions import Fraction
from pathlib import Path

from .. import __version__
from ..ansatz import AnsatzSpec, IllConditionedError, NonlinearityError, certify_candidate, solve
from ..conditions import (
    ConditionError, assemble_integral1, assemble_integral2, assemble_kt, assemble_parity_split,
    assemble_reducible_kt,
)
from ..dynamics import IntegrationError, StepPolicy, batch_verify
from ..expr import DomainError, EvaluationError, is_zero, parse, to_text
from ..geometry import GeometryError, curvature
from .sysdef import DefinitionError, load_fi, load_system

EXIT_OK, EXIT_VALIDATION, EXIT_ILL_CONDITIONED, EXIT_CERTIFICATION = 0, 2, 3, 4


class CertificationFailure(Exception):
    def __init__(self, report):
        super().__init__("certification failed")
        self.report = report


def digest(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        data = Path(p).read_bytes()
        h.update(len(data).to_bytes(8, "big"))
        h.update(data)
    return h.hexdigest()


def render(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _header(command, args, paths):
    return {
        "command": command,
        "version": __version__,
        "input": {"files": [Path(p).name for p in paths], "sha256": digest(*paths)},
        "seed": args.seed,
    }


# ------------------------------------------------------------- commands

def curvature_report(defn, seed=0):
    sys = defn.system
    R = curvature(sys)
    comps = {}
    n = sys.dim
    for (a, b, c, d), v in sorted(R.items()):
        if c >= d or v.is_zero_literal:
            continue
        if is_zero(v, sys.domain, samples=20, seed=seed):
            continue
        key = f"R^{a + 1}_{b + 1}{c + 1}{d + 1}" if n < 10 else f"R^{a + 1}_{b + 1},{c + 1},{d + 1}"
        comps[key] = to_text(v)
    out = {"convention": "R^a_bcd = d_c Gamma^a_bd - d_d Gamma^a_bc + Gamma^a_ec Gamma^e_bd"
                         " - Gamma^a_ed Gamma^e_bc; listed for c < d",
           "components": comps}
    if not comps:
        out["summary"] = "all components zero"
    return out


def cmd_curvature(args):
    defn = load_system(args.file)
    rep = _header("curvature", args, [args.file])
    rep["curvature"] = curvature_report(defn, args.seed)
    return rep


def _spec_from_args(defn, args):
    spec = defn.solve.spec
    kw = {"degree": spec.degree, "multipliers": list(spec.multipliers),
          "slot_degree": dict(spec.slot_degree), "rank_multipliers": dict(spec.rank_multipliers)}
    if getattr(args, "degree", None) is not None:
        kw["degree"] = args.degree
    if getattr(args, "multiplier", None):
        kw["multipliers"] = [parse(m) for m in args.multiplier]
    return AnsatzSpec(**kw)


def _solve_report(cs, spec, args, paths, command, expected=()):
    fam = solve(cs, spec, seed=args.seed, points=args.points, precision=args.precision)
    rep = _header(command, args, paths)
    rep["conditions"] = cs.summary()
    rep["ansatz"] = fam.space.describe()
    rep["family"] = fam.report()
    if expected:
        rep["expected"] = {Path(p).stem: fam.contains(fi) for p, fi in expected}
    failed = bool(fam.spurious) or (expected and not all(rep["expected"].values()))
    return rep, failed


def fi_condition_set(sys, family, order, n=0, lam=1, ell=1, part=1):
    """Condition set for a solve request; odd orders use the reduction from order + 1."""
    odd = order % 2 == 1 and order > 1
    if family == "integral1":
        if odd:
            return assemble_integral1(order + 1, n, sys, top_zero=True)
        return assemble_integral1(order, n, sys)
    if family == "integral2":
        return assemble_integral2(order, Fraction(lam), sys)
    if family == "split":
        cs1, cs2 = assemble_parity_split(order, ell, sys, reduce_odd=odd)
        return cs1 if part == 1 else cs2
    raise ValueError(f"unknown family {family!r}")


def cmd_kt_solve(args):
    defn = load_system(args.file)
    rank = args.rank if args.rank is not None else defn.solve.order
    cs = assemble_reducible_kt(defn.system) if args.reducible else assemble_kt(rank, defn.system)
    expected = [(p, load_fi(p, defn.system.coords, defn.fixed_params)) for p in args.expect]
    rep, failed = _solve_report(cs, _spec_from_args(defn, args), args, [args.file], "kt-solve", expected)
    if failed:
        raise CertificationFailure(rep)
    return rep


def cmd_fi_solve(args):
    defn = load_system(args.file)
    s = defn.solve
    family = args.family or s.family
    order = args.order if args.order is not None else s.order
    n = args.n if args.n is not None else s.n
    lam = Fraction(args.lam) if args.lam is not None else s.lam
    ell = args.ell if args.ell is not None else s.ell
    part = args.part if args.part is not None else s.part
    cs = fi_condition_set(defn.system, family, order, n, lam, ell, part)
    expected = [(p, load_fi(p, defn.system.coords, defn.fixed_params)) for p in args.expect]
    rep, failed = _solve_report(cs, _spec_from_args(defn, args), args, [args.file], "fi-solve", expected)
    rep["request"] = {"family": family, "order": order, "n": n, "lambda": str(lam), "ell": ell, "part": part}
    if failed:
        raise CertificationFailure(rep)
    return rep


def _initial_conditions(args, defn):
    if args.ic:
        n = defn.system.dim
        out = []
        for text in args.ic:
            vals = [float(Fraction(v)) for v in text.split(",")]
            if len(vals) != 2 * n:
                raise DefinitionError(f"--ic needs {2 * n} numbers", "<command line>")
            out.append((vals[:n], vals[n:]))
        return out
    return defn.verify.ics or None


def verify_report(defn, fis: dict, seed=0, tol=None, span=None, ics=None, count=None):
    """Symbolic certificate plus trajectory drift for each candidate."""
    sys = defn.system
    v = defn.verify
    tol = v.tol if tol is None else tol
    span = tuple(float(x) for x in (span or v.span))
    batch = batch_verify(sys, fis, ics=ics, tol=tol, span=span, seed=seed, policy=StepPolicy(),
                         count=count or v.count, velocity_boxes=v.velocity_boxes)
    certs = {}
    for name, fi in fis.items():
        ok, witness = certify_candidate(fi, sys, batch.params, seed + 7)
        certs[name] = {"symbolic": "certified" if ok else "rejected"}
        if witness is not None:
            certs[name]["witness"] = {k: str(x) for k, x in sorted(witness.values.items())}
    verdict = {name: ("conserved" if certs[name]["symbolic"] == "certified"
                      and batch.verdicts[name] == "conserved" else "rejected") for name in fis}
    return {"certificates": certs, "trajectories": batch.as_dict(), "verdict": verdict}


def cmd_verify(args):
    defn = load_system(args.file)
    fis = {Path(p).stem: load_fi(p, defn.system.coords, defn.fixed_params) for p in args.fi}
    rep = _header("verify", args, [args.file, *args.fi])
    span = (Fraction(args.span[0]), Fraction(args.span[1])) if args.span else None
    rep.update(verify_report(defn, fis, args.seed, args.tol, span, _initial_conditions(args, defn), args.count))
    if any(v != "conserved" for v in rep["verdict"].values()):
        raise CertificationFailure(rep)
    return rep


def cmd_report(args):
    """Curvature, the declared solve and verification of the declared integrals."""
    defn = load_system(args.file)
    base = Path(args.file).parent
    fi_paths = [base / f for f in defn.verify.integrals]
    rep = _header("report", args, [args.file, *fi_paths])
    rep["system"] = {"name": defn.name, "coordinates": list(defn.system.coords),
                     "free_parameters": sorted(p for p, v in defn.system.params.items() if v is None)}
    rep["curvature"] = curvature_report(defn, args.seed)
    fis = {p.stem: load_fi(p, defn.system.coords, defn.fixed_params) for p in fi_paths}
    failed = False
    if defn.solve.declared:
        s = defn.solve
        if s.kind == "kt":
            cs = assemble_kt(s.order, defn.system)
        elif s.kind == "reducible":
            cs = assemble_reducible_kt(defn.system)
        else:
            cs = fi_condition_set(defn.system, s.family, s.order, s.n, s.lam, s.ell, s.part)
        fam = solve(cs, s.spec, seed=args.seed, points=args.points, precision=args.precision)
        sol = {"conditions": cs.summary(), "ansatz": fam.space.describe(), "family": fam.report()}
        if s.kind == "fi":
            sol["contains"] = {k: fam.contains(fi) for k, fi in fis.items() if fi.order <= s.order}
        rep["solve"] = sol
        failed |= bool(fam.spurious)
    if fis:
        ver = verify_report(defn, fis, args.seed, args.tol)
        rep["verification"] = ver
        failed |= any(v != "conserved" for v in ver["verdict"].values())
    if failed:
        raise CertificationFailure(rep)
    return rep


# ------------------------------------------------------------------ main

def build_parser():
    p = argparse.ArgumentParser(prog="firstint", description="Search for and verify first integrals "
                                "of second-order dynamical systems with a symmetric connection.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--points", type=int, default=None, help="sample points per solve")
    common.add_argument("--tol", type=float, default=None, help="relative drift tolerance (default 1e-7)")
    common.add_argument("--precision", choices=("double", "extended"), default=None,
                        help="arithmetic for non-rational sampled matrices (default: exact when possible)")
    common.add_argument("--out", default=None, help="write the report here instead of stdout")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("curvature", parents=[common], help="curvature of the connection")
    c.add_argument("file")
    c.set_defaults(func=cmd_curvature)

    def basis(sp):
        sp.add_argument("--degree", type=int, default=None, help="monomial degree bound")
        sp.add_argument("--multiplier", action="append", default=[], metavar="EXPR",
                        help="basis multiplier (repeatable; replaces the file's list)")
        sp.add_argument("--expect", action="append", default=[], metavar="FI_FILE",
                        help="FI file that must lie in the returned family")

    k = sub.add_parser("kt-solve", parents=[common], help="Killing tensors within an ansatz basis")
    k.add_argument("file")
    k.add_argument("--rank", type=int, default=None)
    k.add_argument("--reducible", action="store_true", help="solve for vectors B whose symmetrized derivative is a Killing tensor")
    basis(k)
    k.set_defaults(func=cmd_kt_solve)

    f = sub.add_parser("fi-solve", parents=[common], help="first integrals within an ansatz basis")
    f.add_argument("file")
    f.add_argument("--order", "-m", type=int, default=None)
    f.add_argument("--family", choices=("integral1", "integral2", "split"), default=None)
    f.add_argument("--n", type=int, default=None, help="time degree for integral1")
    f.add_argument("--lam", default=None, help="exponent rate for integral2 (rational)")
    f.add_argument("--ell", type=int, default=None, help="parity-split index")
    f.add_argument("--part", type=int, choices=(1, 2), default=None)
    basis(f)
    f.set_defaults(func=cmd_fi_solve)

    v = sub.add_parser("verify", parents=[common], help="certify and integrate candidate integrals")
    v.add_argument("file")
    v.add_argument("fi", nargs="+", help="FI files")
    v.add_argument("--ic", action="append", default=[], metavar="Q..,V..",
                   help="initial condition as comma-separated positions then velocities (repeatable)")
    v.add_argument("--count", type=int, default=None, help="number of sampled initial conditions")
    v.add_argument("--span", nargs=2, default=None, metavar=("T0", "T1"))
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", parents=[common], help="full pipeline for one system file")
    r.add_argument("file")
    r.set_defaults(func=cmd_report)
    return p


def _emit(report, out):
    text = render(report)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        _sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.precision is None:
        args.precision = "auto"
    try:
        report = args.func(args)
    except CertificationFailure as exc:
        _emit(exc.report, args.out)
        return EXIT_CERTIFICATION
    except IllConditionedError as exc:
        print(f"error: ill-conditioned: {exc}", file=_sys.stderr)
        return EXIT_ILL_CONDITIONED
    except (DefinitionError, ConditionError, GeometryError, NonlinearityError, DomainError,
            EvaluationError, IntegrationError, ValueError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_VALIDATION
    _emit(report, args.out)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
