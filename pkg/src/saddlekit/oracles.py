"""Inner minimization oracles.

An oracle approximately minimizes a one-sided objective h(z) = f(z, y) or
h(z) = -f(x, z).  Quality is measured by the contraction of the squared
distance to the subproblem optimum: an eps-oracle returns z' with
|z' - z*|^2_A <= eps |z - z*|^2_A in the relevant norm.

Three oracles are provided:

* ``exact_oracle``  -- the problem's closed-form best response (eps = 0).
* ``es_minimize``   -- derivative-free (1+1) evolution strategy with the
  1/5-success step-size rule, elitist, with the mutation scale carried
  across successive calls through OracleState.
* ``gd_minimize``   -- a bounded number of gradient steps with Armijo
  backtracking line search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .problems import ProblemDef, mirror_to_box

Array = np.ndarray

ORACLE_KINDS = ("exact", "es", "gd")

# Proposal budget per ES call before giving up: 10 * tau_es * l successes
# at the nominal 1/5 success rate.
_ES_CAP_FACTOR = 50

_ARMIJO_C1 = 1e-4
_MAX_HALVINGS = 40
_NORMAL_BLOCK = 256


@dataclass(frozen=True)
class OracleSpec:
    """Which oracle to run and with what effort.

    tau scales the effort: the ES stops after tau * dim successes, gd takes
    at most tau gradient steps.  sigma0/sigma_max seed the ES mutation scale
    (ignored by the other kinds); gd_step is the initial Armijo step.
    """

    kind: str
    tau: int = 5
    gd_step: float = 1.0
    sigma0: float = 2.0
    sigma_max: float = 2.0

    def __post_init__(self):
        if self.kind not in ORACLE_KINDS:
            raise ValueError(f"oracle kind must be one of {ORACLE_KINDS}, got {self.kind!r}")
        if self.tau < 1:
            raise ValueError("tau must be at least 1")
        if self.gd_step <= 0:
            raise ValueError("gd_step must be positive")
        if not 0 < self.sigma0 <= self.sigma_max:
            raise ValueError("need 0 < sigma0 <= sigma_max")

    def label(self) -> str:
        """Short identifier used in CSV rows, e.g. 'es5', 'gd1', 'exact'."""
        return self.kind if self.kind == "exact" else f"{self.kind}{self.tau}"


@dataclass(frozen=True)
class OracleState:
    """Per-side persistent oracle state.

    The ES mutation scale (step_size) is shared across successive calls on
    the same side; the RNG stream is owned by one trial exclusively.
    f_calls counts objective evaluations charged to this side so far.
    """

    step_size: float
    step_size_max: float
    rng: np.random.Generator = field(compare=False, repr=False)
    f_calls: int = 0

    def __post_init__(self):
        if not 0 < self.step_size <= self.step_size_max:
            raise ValueError("need 0 < step_size <= step_size_max")


def make_oracle_state(spec: OracleSpec, rng: np.random.Generator) -> OracleState:
    return OracleState(step_size=spec.sigma0, step_size_max=spec.sigma_max, rng=rng)


@dataclass(frozen=True)
class OracleResult:
    """Outcome of one oracle call.

    f_value is h at z_out.  f_calls_used counts evaluations of h made by
    this call (for the ES: one per proposal, plus one if the call itself
    had to evaluate the incumbent); gradient evaluations are tallied
    separately in grad_calls_used.  aborted marks an ES call that hit its
    proposal cap and returned the best point seen.
    """

    z_out: Array
    f_value: float
    f_calls_used: int
    state_out: Optional[OracleState]
    grad_calls_used: int = 0
    aborted: bool = False


def exact_oracle(problem: ProblemDef, which: str, fixed_point: Array,
                 state: Optional[OracleState] = None) -> OracleResult:
    """Closed-form best response; one f-call of bookkeeping.

    which = "x" minimizes f(., y) at y = fixed_point using the problem's
    exact x best response; which = "y" maximizes f(x, .) likewise.
    """
    if which == "x":
        fn = problem.exact_argmin_x
        if fn is None:
            raise ValueError(f"problem {problem.name!r} has no closed-form x best response")
        z = np.asarray(fn(fixed_point), dtype=float)
        value = problem.eval(z, fixed_point)
    elif which == "y":
        fn = problem.exact_argmax_y
        if fn is None:
            raise ValueError(f"problem {problem.name!r} has no closed-form y best response")
        z = np.asarray(fn(fixed_point), dtype=float)
        value = -problem.eval(fixed_point, z)
    else:
        raise ValueError("which must be 'x' or 'y'")
    out_state = None if state is None else replace(state, f_calls=state.f_calls + 1)
    return OracleResult(z_out=z, f_value=float(value), f_calls_used=1, state_out=out_state)


def es_minimize(h: Callable[[Array], float], z: Array, state: OracleState,
                tau_es: int, h_z: Optional[float] = None,
                project: Optional[Callable[[Array], Array]] = None) -> OracleResult:
    """(1+1) evolution strategy with the 1/5-success rule.

    Proposes z' = z + sigma * N(0, I) (mirrored into the box by ``project``
    when given), accepts on h(z') <= h(z), multiplies sigma by
    c = exp(1/sqrt(2 l)) on success (capped at step_size_max) and by
    c^(-1/4) on failure, and stops after tau_es * l successes.  Elitist:
    the returned value never exceeds h at the incumbent.  If h_z is None
    the incumbent is evaluated once and charged.  A call that exceeds
    50 * tau_es * l proposals aborts and returns the best-so-far with
    ``aborted`` set.
    """
    if tau_es < 1:
        raise ValueError("tau_es must be at least 1")
    z = np.asarray(z, dtype=float)
    l = z.size
    c = math.exp(1.0 / math.sqrt(2.0 * l))
    c_down = c ** (-0.25)
    sigma = state.step_size
    sigma_max = state.step_size_max
    rng = state.rng

    calls = 0
    if h_z is None:
        h_z = h(z)
        calls += 1
    target = tau_es * l
    cap = _ES_CAP_FACTOR * tau_es * l
    n_succ = 0
    proposals = 0
    aborted = False
    buf = None
    bi = _NORMAL_BLOCK
    while n_succ < target:
        if proposals >= cap:
            aborted = True
            break
        if bi >= _NORMAL_BLOCK:
            buf = rng.standard_normal((_NORMAL_BLOCK, l))
            bi = 0
        z_new = z + sigma * buf[bi]
        bi += 1
        if project is not None:
            z_new = project(z_new)
        h_new = h(z_new)
        calls += 1
        proposals += 1
        if h_new <= h_z:
            sigma = min(sigma * c, sigma_max)
            z = z_new
            h_z = h_new
            n_succ += 1
        else:
            sigma = sigma * c_down
    new_state = replace(state, step_size=sigma, f_calls=state.f_calls + calls)
    return OracleResult(z_out=z, f_value=float(h_z), f_calls_used=calls,
                        state_out=new_state, aborted=aborted)


def gd_minimize(h: Callable[[Array], float], grad_h: Optional[Callable[[Array], Array]],
                z: Array, tau_gd: int, gd_step: float = 1.0,
                h_z: Optional[float] = None) -> OracleResult:
    """At most tau_gd gradient steps with Armijo backtracking.

    Each step starts the line search at gd_step and halves until
    h(z - t g) <= h(z) - 1e-4 t |g|^2.  Returns the best iterate seen.
    Objective evaluations (incumbent plus every line-search trial) are
    charged to f_calls_used; gradient evaluations count separately.
    """
    if grad_h is None:
        raise ValueError("gradient oracle requires an analytic gradient")
    if tau_gd < 1:
        raise ValueError("tau_gd must be at least 1")
    if gd_step <= 0:
        raise ValueError("gd_step must be positive")
    z = np.asarray(z, dtype=float)
    calls = 0
    grad_calls = 0
    if h_z is None:
        h_z = h(z)
        calls += 1
    best_z, best_h = z, h_z
    for _ in range(tau_gd):
        g = grad_h(z)
        grad_calls += 1
        with np.errstate(over="ignore", invalid="ignore"):
            gg = float(g @ g)
        if gg == 0.0 or not math.isfinite(gg):
            break    # stationary, or the iterate has already blown up
        t = gd_step
        accepted = False
        for _ in range(_MAX_HALVINGS):
            z_new = z - t * g
            h_new = h(z_new)
            calls += 1
            if h_new <= h_z - _ARMIJO_C1 * t * gg:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        z, h_z = z_new, h_new
        if h_z < best_h:
            best_z, best_h = z, h_z
    return OracleResult(z_out=best_z, f_value=float(best_h), f_calls_used=calls,
                        state_out=None, grad_calls_used=grad_calls)


def realized_epsilon(z_in: Array, z_out: Array, z_star: Array, a_matrix: Array) -> float:
    """Measured contraction |z_out - z*|^2_A / |z_in - z*|^2_A."""
    a = np.asarray(a_matrix, dtype=float)
    d_in = np.asarray(z_in, dtype=float) - np.asarray(z_star, dtype=float)
    d_out = np.asarray(z_out, dtype=float) - np.asarray(z_star, dtype=float)
    denom = float(d_in @ a @ d_in)
    if denom <= 0.0:
        raise ValueError("realized_epsilon is undefined when z_in equals z_star")
    return float(d_out @ a @ d_out) / denom


def side_objective(problem: ProblemDef, which: str, x: Array, y: Array):
    """Build (h, grad_h, z0, project) for one side's subproblem.

    The x side minimizes h(v) = f(v, y); the y side minimizes
    h(v) = -f(x, v).  ``project`` mirrors ES proposals into the problem's
    box when one is declared, else None.
    """
    if which == "x":
        z0 = x
        h = lambda v: problem.eval(v, y)
        grad_h = None
        if problem.grad is not None:
            grad_h = lambda v: problem.grad(v, y)[0]
        sl = slice(0, problem.m)
    elif which == "y":
        z0 = y
        h = lambda v: -problem.eval(x, v)
        grad_h = None
        if problem.grad is not None:
            grad_h = lambda v: -problem.grad(x, v)[1]
        sl = slice(problem.m, problem.m + problem.n)
    else:
        raise ValueError("which must be 'x' or 'y'")
    project = None
    if problem.bounds is not None:
        lo, hi = problem.bounds
        lo, hi = lo[sl], hi[sl]
        project = lambda v: mirror_to_box(v, lo, hi)
    return h, grad_h, z0, project


def minimize_side(problem: ProblemDef, which: str, x: Array, y: Array,
                  spec: OracleSpec, state: OracleState) -> OracleResult:
    """Run the configured oracle on one side's subproblem at (x, y)."""
    if spec.kind == "exact":
        fixed = y if which == "x" else x
        return exact_oracle(problem, which, fixed, state=state)
    h, grad_h, z0, project = side_objective(problem, which, x, y)
    if spec.kind == "es":
        return es_minimize(h, z0, state, spec.tau, h_z=None, project=project)
    res = gd_minimize(h, grad_h, z0, spec.tau, spec.gd_step)
    new_state = replace(state, f_calls=state.f_calls + res.f_calls_used)
    return replace(res, state_out=new_state)
