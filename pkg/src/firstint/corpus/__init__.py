"""Bundled system definitions, their first integrals and derived special cases."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

__all__ = ["corpus_dir", "system_names", "system_path", "load", "integrals", "SpecialCase",
           "SPECIAL_CASES", "derive_special_case"]


def corpus_dir() -> Path:
    return Path(str(resources.files(__name__)))


def system_names() -> list:
    return sorted(p.stem for p in corpus_dir().glob("*.sys"))


def system_path(name: str) -> Path:
    p = corpus_dir() / f"{name}.sys"
    if not p.exists():
        raise KeyError(f"no corpus system named {name!r}")
    return p


def load(name: str):
    from ..cli.sysdef import load_system
    return load_system(system_path(name))


def integrals(name: str, definition=None) -> dict:
    """The first integrals listed in a corpus system's [verify] block, by file stem."""
    from ..cli.sysdef import load_fi
    d = definition or load(name)
    out = {}
    for fname in d.verify.integrals:
        fi = load_fi(corpus_dir() / fname, d.system.coords, d.fixed_params)
        out[Path(fname).stem] = fi
    return out


@dataclass(frozen=True)
class SpecialCase:
    """A named potential obtained from a corpus system by fixing parameters
    and optionally swapping the coordinates."""

    name: str
    base: str
    values: tuple           # (parameter, Fraction) pairs
    swap: bool = False
    potential: str = ""     # expected potential after derivation, for cross-checks


SPECIAL_CASES = (
    SpecialCase("isotropic_ratio3", "anisotropic", (("c0", Fraction(1, 2)), ("c1", Fraction(0))),
                potential="x^2/2 + 9*y^2/2"),
    SpecialCase("isotropic_ratio3_swapped", "anisotropic", (("c0", Fraction(1, 18)), ("c1", Fraction(0))),
                swap=True, potential="x^2/2 + y^2/18"),
    SpecialCase("hyperbolic_unit", "hyperbolic", (("k", Fraction(1)),),
                potential="(x^2 - y^2)^(-2/3)"),
)


def derive_special_case(case):
    """Return (system, integrals) for a special case, derived from its base.

    Parameters are substituted in both the system and every listed
    integral; with ``swap`` the two coordinates exchange roles.
    """
    from ..cli.sysdef import permute_system
    from ..conditions import permute_fi
    from ..expr import subs
    if isinstance(case, str):
        case = next(c for c in SPECIAL_CASES if c.name == case)
    base = load(case.base)
    values = dict(case.values)
    sys = base.system.with_values(**values)
    fis = {}
    for k, fi in integrals(case.base, base).items():
        fis[k] = fi.map(lambda e: subs(e, values))
    if case.swap:
        perm = (1, 0)
        sys = permute_system(sys, perm)
        fis = {k: permute_fi(fi, perm) for k, fi in fis.items()}
    sys.name = case.name
    return sys, fis
