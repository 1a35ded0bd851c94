"""Trajectory integration and conservation checks for candidate integrals.

Integration uses classic RK4 on the first-order form (q, v) with global step
doubling: the whole span is integrated with 64 steps, then 128, and so on
until two successive runs agree at their common nodes. The step sequence is
fixed, so a run is reproducible bit for bit on IEEE hardware.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .conditions import FICandidate, velocity_name
from .ansatz import draw_parameters
from .expr import Domain, add, compile_exprs, const, mul, sample_points, subs, sym
from .geometry import TIME, DynamicalSystem, SymTensorField

__all__ = [
    "StepPolicy", "Trajectory", "DriftStats", "TrajectoryReport", "BatchReport",
    "IntegrationError", "integrate", "integrate_fixed", "fi_drift", "batch_verify",
    "sample_initial_conditions", "dump", "energy_candidate",
]

_EVAL_ERRORS = (ValueError, ZeroDivisionError, OverflowError)


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepPolicy:
    """Step-doubling control: start with ``initial_steps`` over the span and
    double until successive runs agree to ``rtol`` (per component, relative to
    ``max(|y|, 1)``); at most ``max_doublings`` doublings."""

    rtol: float = 1e-10
    initial_steps: int = 64
    max_doublings: int = 12

    def describe(self):
        return {"method": "rk4-step-doubling", "rtol": self.rtol,
                "initial_steps": self.initial_steps, "max_doublings": self.max_doublings}


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray          # shape (nodes, 2*dim): q then v
    dim: int
    steps: int
    error_estimate: float
    exited: bool = False
    exit_reason: str = ""
    params: dict = field(default_factory=dict)

    @property
    def q(self):
        return self.states[:, :self.dim]

    @property
    def v(self):
        return self.states[:, self.dim:]

    @property
    def final(self):
        return self.states[-1]


def _numeric_params(sys: DynamicalSystem, params):
    vals = {}
    for name, v in sys.params.items():
        if v is not None:
            vals[name] = Fraction(v)
    for name, v in (params or {}).items():
        vals[name] = Fraction(v)
    missing = [p for p in sys.params if p not in vals]
    if missing:
        raise IntegrationError(f"parameters need values: {missing}")
    return vals


class _Rhs:
    """Compiled accelerations and constraint checks for one parameter choice."""

    def __init__(self, sys: DynamicalSystem, params: dict):
        n = sys.dim
        self.dim = n
        env = {k: const(v) for k, v in params.items()}
        vel = [velocity_name(c) for c in sys.coords]
        acc = []
        for a in range(n):
            terms = [mul(const(-1), sys.forces[a])]
            for b in range(n):
                for c in range(n):
                    g = sys.connection(a, min(b, c), max(b, c))
                    if not g.is_zero_literal:
                        terms.append(mul(const(-1), g, sym(vel[b]), sym(vel[c])))
            acc.append(subs(add(*terms), env))
        args = list(sys.coords) + vel
        self.acc = compile_exprs(acc, args)
        cons = [subs(c, env) for c in sys.domain.constraints]
        self.cons = compile_exprs(cons, list(sys.coords)) if cons else None

    def __call__(self, y):
        return self.acc(*y)

    def admissible(self, y):
        if self.cons is None:
            return True
        try:
            return all(c > 0 for c in self.cons(*y[:self.dim]))
        except _EVAL_ERRORS:
            return False


def _rk4_run(rhs: _Rhs, y0, t0, t1, steps):
    n = rhs.dim
    h = (t1 - t0) / steps
    y = list(map(float, y0))
    out = [y]
    for k in range(steps):
        try:
            k1 = y[n:] + rhs(y)
            y2 = [a + 0.5 * h * b for a, b in zip(y, k1)]
            k2 = y2[n:] + rhs(y2)
            y3 = [a + 0.5 * h * b for a, b in zip(y, k2)]
            k3 = y3[n:] + rhs(y3)
            y4 = [a + h * b for a, b in zip(y, k3)]
            k4 = y4[n:] + rhs(y4)
        except _EVAL_ERRORS:
            return np.array(out), "evaluation error"
        y = [a + h / 6.0 * (b + 2.0 * c + 2.0 * d + e) for a, b, c, d, e in zip(y, k1, k2, k3, k4)]
        if not all(math.isfinite(v) for v in y):
            return np.array(out), "non-finite state"
        if not rhs.admissible(y):
            return np.array(out), "constraint violated"
        out.append(y)
    return np.array(out), ""


def _check_start(sys, rhs, y0):
    if not rhs.admissible(y0):
        raise IntegrationError("initial point violates a domain constraint")


def integrate_fixed(sys: DynamicalSystem, q0, v0, t0, t1, steps: int, params=None) -> Trajectory:
    """Plain RK4 with a fixed number of equal steps (no error control)."""
    params = _numeric_params(sys, params)
    rhs = _Rhs(sys, params)
    y0 = [float(x) for x in list(q0) + list(v0)]
    _check_start(sys, rhs, y0)
    states, reason = _rk4_run(rhs, y0, float(t0), float(t1), steps)
    times = float(t0) + (float(t1) - float(t0)) * np.arange(len(states)) / steps
    return Trajectory(times, states, sys.dim, steps, math.nan, bool(reason), reason, params)


def integrate(sys: DynamicalSystem, q0, v0, t0=0.0, t1=5.0, policy: StepPolicy = StepPolicy(),
              params=None) -> Trajectory:
    """RK4 with global step doubling until successive runs agree to ``policy.rtol``.

    A run that leaves the domain (constraint violated, evaluation error)
    is truncated at its last admissible node and flagged; agreement is then
    judged on the common prefix. Raises IntegrationError at the step floor.
    """
    if not t1 > t0:
        raise IntegrationError("t1 must exceed t0")
    params = _numeric_params(sys, params)
    rhs = _Rhs(sys, params)
    y0 = [float(x) for x in list(q0) + list(v0)]
    if len(y0) != 2 * sys.dim:
        raise IntegrationError("initial state has the wrong length")
    _check_start(sys, rhs, y0)
    t0, t1 = float(t0), float(t1)
    steps = policy.initial_steps
    prev, _ = _rk4_run(rhs, y0, t0, t1, steps)
    err = math.inf
    history = []
    for _ in range(policy.max_doublings):
        steps *= 2
        cur, reason = _rk4_run(rhs, y0, t0, t1, steps)
        fine = cur[::2]
        common = min(len(prev), len(fine))
        if reason and common <= 1:
            prev = cur
            continue
        a, b = prev[:common], fine[:common]
        scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
        err = float(np.max(np.abs(a - b) / scale))
        prev = cur
        history.append(err)
        if len(history) >= 4 and err > 1e-3 and err >= 0.5 * history[-3]:
            # no sign of asymptotic convergence: the solution is leaving every compact set
            raise IntegrationError(f"step doubling not converging: disagreement {err:.3g}")
        if err <= policy.rtol:
            if reason:
                # keep the trusted prefix only
                prev = cur[:2 * (common - 1) + 1]
            times = t0 + (t1 - t0) * np.arange(len(prev)) / steps
            return Trajectory(times, prev, sys.dim, steps, err, bool(reason), reason, params)
    raise IntegrationError(f"step floor reached: {steps} steps, disagreement {err:.3g}")


# ------------------------------------------------------------------ drift

@dataclass
class DriftStats:
    initial: float
    max_abs: float
    max_rel: float
    values: np.ndarray

    def as_dict(self):
        return {"initial": f"{self.initial:.16e}", "max_abs": f"{self.max_abs:.6e}",
                "max_rel": f"{self.max_rel:.6e}"}


def _fi_function(fi: FICandidate, sys: DynamicalSystem, params):
    env = {k: const(v) for k, v in params.items()}
    e = subs(fi.expression(), env)
    args = [TIME] + list(sys.coords) + [velocity_name(c) for c in sys.coords]
    return compile_exprs([e], args, target="numpy")


def fi_drift(traj: Trajectory, fi: FICandidate, sys: DynamicalSystem) -> DriftStats:
    """Evaluate ``I(t, q(t), v(t))`` at every node; drift relative to ``max(|I0|, 1e-30)``."""
    fn = _fi_function(fi, sys, traj.params)
    cols = [traj.times] + [traj.states[:, i] for i in range(traj.states.shape[1])]
    with np.errstate(all="ignore"):
        vals = np.asarray(fn(*cols)[0], dtype=float) * np.ones_like(traj.times)
    if not np.all(np.isfinite(vals)):
        raise IntegrationError("first integral not finite along the trajectory")
    i0 = float(vals[0])
    dev = float(np.max(np.abs(vals - i0)))
    return DriftStats(i0, dev, dev / max(abs(i0), 1e-30), vals)


# ----------------------------------------------------------- batch runs

@dataclass
class TrajectoryReport:
    q0: list
    v0: list
    t0: float
    t1: float
    policy: StepPolicy
    steps: int
    error_estimate: float
    exited: bool
    drifts: dict
    verdicts: dict

    def as_dict(self):
        return {
            "initial": {"q": [f"{x:.16e}" for x in self.q0], "v": [f"{x:.16e}" for x in self.v0],
                        "t0": self.t0},
            "span": [self.t0, self.t1],
            "policy": self.policy.describe(),
            "steps": self.steps,
            "integrator_error": f"{self.error_estimate:.3e}",
            "domain_exit": self.exited,
            "drift": {k: v.as_dict() for k, v in sorted(self.drifts.items())},
            "verdict": dict(sorted(self.verdicts.items())),
        }


@dataclass
class BatchReport:
    reports: list
    verdicts: dict
    tol: float
    params: dict
    retries: int = 0

    def as_dict(self):
        return {
            "tolerance": self.tol,
            "parameters": {k: str(v) for k, v in sorted(self.params.items())},
            "trajectories": [r.as_dict() for r in self.reports],
            "verdict": dict(sorted(self.verdicts.items())),
            "resampled": self.retries,
        }


DEFAULT_VELOCITY_BOX = (Fraction(-1, 2), Fraction(1, 2))


def sample_initial_conditions(sys: DynamicalSystem, count: int, rng, params: dict,
                              velocity_boxes: dict | None = None):
    """Initial states from the domain box shrunk by 10 percent.

    ``velocity_boxes`` maps a coordinate name to the range of its velocity
    (default [-1/2, 1/2]); these ranges are shrunk the same way.
    """
    boxes = dict(sys.domain.boxes)
    for c in sys.coords:
        boxes[velocity_name(c)] = tuple(map(Fraction, (velocity_boxes or {}).get(c, DEFAULT_VELOCITY_BOX)))
    dom = Domain(boxes, sys.domain.constraints, sys.domain.param_names).shrunk()
    vel = [velocity_name(c) for c in sys.coords]
    pts = sample_points(dom, count, rng, names=list(sys.coords) + vel, fixed=params)
    return [([float(pts[c][k]) for c in sys.coords], [float(pts[v][k]) for v in vel]) for k in range(count)]


def batch_verify(sys: DynamicalSystem, candidates: dict, ics=None, tol: float = 1e-7,
                 span=(0.0, 5.0), seed: int = 0, policy: StepPolicy = StepPolicy(),
                 params=None, count: int = 3, max_retries: int = 10,
                 velocity_boxes: dict | None = None) -> BatchReport:
    """Integrate from each initial condition and judge every candidate.

    A candidate is "conserved" only if its relative drift stays below ``tol``
    on every trajectory (at least 3 are required). Trajectories leaving the
    domain are replaced by fresh initial conditions, up to ``max_retries``.
    """
    rng = np.random.default_rng([seed, 31])
    if params is None:
        free = {p for p, v in sys.params.items() if v is None}
        params = draw_parameters(sys, rng) if free else {}
    params = _numeric_params(sys, params)
    given = list(ics) if ics is not None else sample_initial_conditions(sys, count, rng, params, velocity_boxes)
    if len(given) < 3:
        raise ValueError("at least 3 initial conditions are required")
    reports, retries = [], 0
    queue = list(given)
    while queue:
        q0, v0 = queue.pop(0)
        try:
            traj = integrate(sys, q0, v0, span[0], span[1], policy, params)
            exited = traj.exited
        except IntegrationError:
            traj, exited = None, True
        if exited:
            if retries >= max_retries:
                raise IntegrationError("too many domain exits while sampling initial conditions")
            retries += 1
            queue.append(sample_initial_conditions(sys, 1, rng, params, velocity_boxes)[0])
            continue
        drifts, verdicts = {}, {}
        for name, fi in candidates.items():
            d = fi_drift(traj, fi, sys)
            drifts[name] = d
            verdicts[name] = "conserved" if d.max_rel < tol else "rejected"
        reports.append(TrajectoryReport(list(q0), list(v0), span[0], span[1], policy, traj.steps,
                                        traj.error_estimate, traj.exited, drifts, verdicts))
    overall = {}
    for name in candidates:
        ok = all(r.verdicts[name] == "conserved" for r in reports)
        overall[name] = "conserved" if ok else "rejected"
    return BatchReport(reports, overall, tol, params, retries)


def dump(traj: Trajectory, fis: dict | None = None, sys: DynamicalSystem | None = None) -> str:
    """Plain-text table: t, q, v, then one column per monitored integral (17 significant digits)."""
    cols = [traj.times] + [traj.states[:, i] for i in range(traj.states.shape[1])]
    names = ["t"] + [f"q{i + 1}" for i in range(traj.dim)] + [f"v{i + 1}" for i in range(traj.dim)]
    for name, fi in (fis or {}).items():
        cols.append(fi_drift(traj, fi, sys).values)
        names.append(name)
    lines = ["# " + " ".join(names)]
    for row in zip(*cols):
        lines.append(" ".join(f"{x:.16e}" for x in row))
    return "\n".join(lines) + "\n"


def energy_candidate(sys: DynamicalSystem) -> FICandidate:
    """``E = 1/2 g_ab v^a v^b + V`` for systems with a metric and a potential."""
    if sys.metric is None or sys.potential is None:
        raise ValueError("energy needs a kinetic metric and a potential")
    n = sys.dim
    g = SymTensorField(n, 2, {idx: mul(const(Fraction(1, 2)), sys.metric[idx]) for idx, _ in sys.metric.items()})
    return FICandidate([SymTensorField.scalar(n, sys.potential), SymTensorField(n, 1), g], sys.coords,
                       {"name": "energy"})
