"""Sampling domains and the probabilistic zero test."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .evaluate import EvaluationError, evaluate
from .nodes import Expr, free_symbols

__all__ = [
    "Domain", "SamplePoint", "ZeroVerdict", "DomainError",
    "sample_points", "zero_test", "is_zero",
    "EPS_ABS", "EPS_REL", "EPS_ABS_EXT", "EPS_REL_EXT",
]

EPS_ABS = 1e-12
EPS_REL = 1e-9
EPS_ABS_EXT = 1e-24
EPS_REL_EXT = 1e-20

# grid denominator for sampled coordinates; dyadic so doubles are exact
_GRID = 1024
# coarser grid for free parameters keeps solved coefficients small rationals
_PARAM_GRID = 32


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class SamplePoint:
    values: dict

    def __getitem__(self, name):
        return self.values[name]

    def as_floats(self):
        return {k: float(v) for k, v in self.values.items()}


@dataclass
class Domain:
    """Boxes ``name -> (lo, hi)`` plus strict constraints ``expr > 0``."""

    boxes: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    param_names: frozenset = frozenset()

    def shrunk(self, fraction=Fraction(1, 10)) -> "Domain":
        boxes = {}
        for k, (lo, hi) in self.boxes.items():
            pad = (hi - lo) * fraction / 2
            boxes[k] = (lo + pad, hi - pad)
        return Domain(boxes, list(self.constraints), self.param_names)

    def satisfied(self, env: dict) -> np.ndarray:
        """Boolean mask of points strictly inside every constraint."""
        n = max((np.size(v) for v in env.values()), default=1)
        ok = np.ones(n, dtype=bool)
        if not self.constraints:
            return ok
        with np.errstate(all="ignore"):
            for c in self.constraints:
                try:
                    (val,) = evaluate([c], env)
                except EvaluationError:
                    # evaluate point by point to isolate failures
                    val = np.full(n, -1.0)
                    for i in range(n):
                        sub = {k: (np.asarray(v)[i] if np.ndim(v) else v) for k, v in env.items()}
                        try:
                            val[i] = float(evaluate([c], sub)[0])
                        except EvaluationError:
                            val[i] = -1.0
                ok &= np.asarray(val) > 0
        return ok


def sample_points(domain: Domain, count: int, rng, names=None, fixed=None, grid=_GRID):
    """Draw ``count`` exact rational points strictly inside ``domain``.

    ``names`` restricts which boxes are sampled; ``fixed`` supplies values
    for the remaining symbols. Returns ``dict name -> list[Fraction]``.
    """
    fixed = dict(fixed or {})
    names = [n for n in (names if names is not None else domain.boxes) if n not in fixed]
    out = {n: [] for n in names}
    drawn = 0
    needed = count
    while needed > 0:
        batch = max(needed * 2, 16)
        cand = {}
        for n in names:
            lo, hi = domain.boxes[n]
            g = _PARAM_GRID if n in domain.param_names else grid
            k = rng.integers(1, g, size=batch)
            cand[n] = [lo + (hi - lo) * Fraction(int(i), g) for i in k]
        env = {n: np.array([float(x) for x in v]) for n, v in cand.items()}
        env.update({k: float(v) for k, v in fixed.items()})
        ok = domain.satisfied(env)
        drawn += batch
        for i in np.flatnonzero(ok)[:needed]:
            for n in names:
                out[n].append(cand[n][i])
            needed -= 1
        if drawn >= 100 * count + 1600 and needed > 0:
            accepted = count - needed
            if accepted < drawn / 100:
                raise DomainError("sampling domain too thin: rejection rate above 99%")
    for k, v in fixed.items():
        out[k] = [Fraction(v)] * count
    return out


@dataclass
class ZeroVerdict:
    zero: bool
    witness: SamplePoint | None = None
    value: float = 0.0
    scale: float = 0.0

    def __bool__(self):
        return self.zero


def zero_test(exprs, domain: Domain, samples: int = 16, seed: int = 0, fixed=None,
              precision: str = "both", rng=None):
    """Zero-test several expressions on one shared batch of random points.

    ``precision`` is ``"both"`` (double, confirmed in extended precision) or
    ``"double"``. An expression is declared zero when at every point
    ``|value| < EPS_ABS + EPS_REL * scale`` with ``scale`` the largest
    intermediate magnitude met while evaluating it.
    """
    if samples < 8:
        raise ValueError("zero test needs at least 8 sample points")
    exprs = list(exprs)
    rng = rng if rng is not None else np.random.default_rng(seed)
    needed = set().union(*(free_symbols(e) for e in exprs)) if exprs else set()
    fixed = dict(fixed or {})
    # constraints may involve symbols the expressions do not, so sample every box
    names = [n for n in domain.boxes if n not in fixed]
    missing = needed - set(domain.boxes) - set(fixed)
    if missing:
        raise EvaluationError(f"no sampling range for {sorted(missing)}")
    pts = sample_points(domain, samples, rng, names=names, fixed=fixed)
    verdicts = []
    for e in exprs:
        env = {k: v for k, v in pts.items() if k in free_symbols(e)}
        verdicts.append(_test_one(e, env, samples, precision))
    return verdicts


def _test_one(e: Expr, env: dict, samples: int, precision: str) -> ZeroVerdict:
    if not free_symbols(e):
        env = {"__n": [Fraction(0)] * samples}
    (val,), mag = evaluate([e], env, "double", magnitude=True)
    mag = np.broadcast_to(mag, val.shape)
    bad = np.abs(val) >= EPS_ABS + EPS_REL * mag
    if np.any(bad):
        i = int(np.argmax(np.abs(val) - EPS_REL * mag))
        return ZeroVerdict(False, _point(env, i), float(val[i]), float(mag[i]))
    if precision == "both":
        (ext,) = evaluate([e], env, "extended")
        absext = np.array([float(abs(x)) for x in ext.ravel()])
        bad = absext >= EPS_ABS_EXT + EPS_REL_EXT * mag
        if np.any(bad):
            i = int(np.argmax(absext))
            return ZeroVerdict(False, _point(env, i), float(absext[i]), float(mag[i]))
    return ZeroVerdict(True, None, float(np.max(np.abs(val))) if val.size else 0.0,
                       float(np.max(mag)) if mag.size else 0.0)


def _point(env, i):
    return SamplePoint({k: v[i] for k, v in env.items() if k != "__n"})


def is_zero(e: Expr, domain: Domain, samples: int = 16, seed: int = 0, fixed=None,
            precision: str = "both") -> ZeroVerdict:
    return zero_test([e], domain, samples, seed, fixed, precision)[0]
