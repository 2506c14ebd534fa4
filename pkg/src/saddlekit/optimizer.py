"""Outer min-max loop: averaged oracle steps and step-size adaptation.

One outer step queries both side oracles at the current pre-update point
(x, y), records the gap surrogate F = f(x, y_hat) - f(x_hat, y) (two
charged f-calls), and moves by convex combination:

    x <- x + eta (x_hat - x),      y <- y + eta (y_hat - y).

``run_fixed`` repeats this at a fixed eta.  ``adapt_run`` wraps it in a
derivative-free eta controller: each round snapshots (x, y, ES scales),
tries a candidate eta for a bounded number of steps, fits a log-slope to
the recorded F values, and accepts, rejects, or sharply shrinks eta based
on the slope estimates, reverting the round's movement when the accepted
slope is significantly positive.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .oracles import OracleSpec, OracleState, make_oracle_state, minimize_side
from .problems import ProblemDef
from . import theory

Array = np.ndarray

METRIC_KINDS = ("G", "G_tilde", "F")

EVENT_STEP = "step"
EVENT_ACCEPT = "accept-η"
EVENT_REJECT = "reject-η"
EVENT_SHRINK = "shrink-η"
EVENT_REVERT = "revert"
EVENT_CONVERGED = "converged"
EVENT_BUDGET = "budget"

# F values are clamped here before taking logs for the slope fit.
_F_FLOOR = 1e-300


@dataclass(frozen=True)
class AdaptConfig:
    """Run configuration (the a/b/c fields only matter to adapt_run).

    N_step per adaptation round is floor(b_eta + a_eta / eta_candidate);
    c_eta is the multiplicative eta ladder; the run stops when the chosen
    progress metric falls to target or the f-call budget runs out.
    """

    a_eta: float = 1.0
    b_eta: int = 5
    c_eta: float = 1.1
    max_f_calls: int = 500_000
    target: float = 1e-5
    metric: str = "G"

    def __post_init__(self):
        if self.a_eta <= 0:
            raise ValueError("a_eta must be positive")
        if self.b_eta < 0 or int(self.b_eta) != self.b_eta:
            raise ValueError("b_eta must be a nonnegative integer")
        if self.c_eta <= 1:
            raise ValueError("c_eta must exceed 1")
        if self.max_f_calls < 1:
            raise ValueError("max_f_calls must be at least 1")
        if self.target <= 0:
            raise ValueError("target must be positive")
        if self.metric not in METRIC_KINDS:
            raise ValueError(f"metric must be one of {METRIC_KINDS}, got {self.metric!r}")


@dataclass
class SaddleState:
    """Mutable loop state: current point, step size, counters, oracle state."""

    x: Array
    y: Array
    oracle_state_x: OracleState
    oracle_state_y: OracleState
    eta: float = 1.0
    gamma_tilde: float = 0.0
    t: int = 0
    f_calls_total: int = 0
    grad_calls_total: int = 0
    last_f: Optional[float] = None


@dataclass(frozen=True)
class TraceRecord:
    t: int
    s: int
    eta: float
    F: float
    metric: float
    fcalls: int
    event: str


class RunTrace:
    """Ordered run records plus the final point.

    Records appear in execution order; fcalls never decreases and strictly
    increases across consecutive step records.  Round-level decision events
    repeat the fcalls of the step they follow.
    """

    def __init__(self):
        self.records: list[TraceRecord] = []
        self.final_x: Optional[Array] = None
        self.final_y: Optional[Array] = None

    def append(self, t, s, eta, f_value, metric, fcalls, event):
        self.records.append(TraceRecord(int(t), int(s), float(eta), float(f_value),
                                        float(metric), int(fcalls), str(event)))

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def dumps(self) -> str:
        lines = []
        for r in self.records:
            row = {
                "t": r.t,
                "s": r.s,
                "eta": r.eta if math.isfinite(r.eta) else None,
                "F": r.F if math.isfinite(r.F) else None,
                "metric": r.metric if math.isfinite(r.metric) else None,
                "fcalls": r.fcalls,
                "event": r.event,
            }
            lines.append(json.dumps(row))
        return "\n".join(lines) + ("\n" if lines else "")

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


def suboptimality_gap(problem: ProblemDef, x: Array, y: Array) -> float:
    """True duality gap max_y' f(x, y') - min_x' f(x', y).

    Needs both closed-form best responses; uncharged (diagnostic only).
    """
    if problem.exact_argmin_x is None or problem.exact_argmax_y is None:
        raise ValueError(
            f"metric 'G' needs closed-form best responses on both sides; "
            f"problem {problem.name!r} lacks them")
    y_best = problem.exact_argmax_y(x)
    x_best = problem.exact_argmin_x(y)
    return problem.eval(x, y_best) - problem.eval(x_best, y)


def make_metric(problem: ProblemDef, kind: str) -> Optional[Callable[[Array, Array], float]]:
    """Return metric(x, y) for 'G' or 'G_tilde'; None for 'F' (uses last gap)."""
    if kind == "G":
        suboptimality_gap(problem, *(_metric_probe(problem)))  # validate availability
        return lambda x, y: suboptimality_gap(problem, x, y)
    if kind == "G_tilde":
        if problem.known_saddle is None:
            raise ValueError(
                f"metric 'G_tilde' needs a known saddle point; problem "
                f"{problem.name!r} has none")
        consts = theory.constants_for(problem)
        xs, ys = problem.known_saddle
        gxx, gyy = consts.gxx_star, consts.gyy_star
        return lambda x, y: theory.g_tilde(x, y, xs, ys, gxx, gyy)
    if kind == "F":
        return None
    raise ValueError(f"metric must be one of {METRIC_KINDS}, got {kind!r}")


def _metric_probe(problem):
    return np.zeros(problem.m), np.zeros(problem.n)


def progress_metric(problem: ProblemDef, state: SaddleState, kind: str) -> float:
    """Current value of the chosen stopping metric for a loop state."""
    if kind == "F":
        if state.last_f is None:
            raise ValueError("metric 'F' is undefined before the first step")
        return state.last_f
    fn = make_metric(problem, kind)
    return fn(state.x, state.y)


def init_state(problem: ProblemDef, oracle: OracleSpec, init: tuple[Array, Array],
               rng: np.random.Generator) -> SaddleState:
    """Fresh loop state at the given initial point; both sides share the rng."""
    x0, y0 = init
    x0 = np.array(x0, dtype=float)
    y0 = np.array(y0, dtype=float)
    if x0.shape != (problem.m,) or y0.shape != (problem.n,):
        raise ValueError("initial point has the wrong shape")
    return SaddleState(
        x=x0, y=y0,
        oracle_state_x=make_oracle_state(oracle, rng),
        oracle_state_y=make_oracle_state(oracle, rng),
    )


def fixed_eta_step(state: SaddleState, problem: ProblemDef, oracle: OracleSpec,
                   eta: float, max_f_calls: Optional[int] = None
                   ) -> tuple[SaddleState, Optional[float]]:
    """One averaged outer step at step size eta.

    Both oracles are queried at the same pre-update (x, y); the gap
    surrogate F = f(x, y_hat) - f(x_hat, y) costs two further f-calls.
    Returns (new_state, F).  When max_f_calls is given and the budget is
    exceeded mid-step, the move is abandoned: the returned state has
    advanced call counters but unchanged (x, y), and F is None, so a run
    never overshoots the budget by more than one oracle call.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must be in (0,1]")
    res_x = minimize_side(problem, "x", state.x, state.y, oracle, state.oracle_state_x)
    f_total = state.f_calls_total + res_x.f_calls_used
    g_total = state.grad_calls_total + res_x.grad_calls_used
    sx = res_x.state_out if res_x.state_out is not None else state.oracle_state_x
    if max_f_calls is not None and f_total > max_f_calls:
        return replace_state(state, oracle_state_x=sx, f_calls_total=f_total,
                             grad_calls_total=g_total), None
    res_y = minimize_side(problem, "y", state.x, state.y, oracle, state.oracle_state_y)
    f_total += res_y.f_calls_used
    g_total += res_y.grad_calls_used
    sy = res_y.state_out if res_y.state_out is not None else state.oracle_state_y
    if max_f_calls is not None and f_total > max_f_calls:
        return replace_state(state, oracle_state_x=sx, oracle_state_y=sy,
                             f_calls_total=f_total, grad_calls_total=g_total), None
    x_hat = res_x.z_out
    y_hat = res_y.z_out
    gap = problem.eval(state.x, y_hat) - problem.eval(x_hat, state.y)
    f_total += 2
    x_new = state.x + eta * (x_hat - state.x)
    y_new = state.y + eta * (y_hat - state.y)
    new_state = replace_state(state, x=x_new, y=y_new, oracle_state_x=sx,
                              oracle_state_y=sy, eta=eta, t=state.t + 1,
                              f_calls_total=f_total, grad_calls_total=g_total,
                              last_f=float(gap))
    return new_state, float(gap)


def replace_state(state: SaddleState, **kw) -> SaddleState:
    return replace(state, **kw)


def run_fixed(problem: ProblemDef, oracle: OracleSpec, eta: float,
              init: tuple[Array, Array], config: AdaptConfig,
              seed) -> tuple[RunTrace, bool, int]:
    """Iterate fixed-eta steps until the metric reaches target or the budget ends.

    Returns (trace, success, f_calls).  A target already met at the initial
    point succeeds with zero steps.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must be in (0,1]")
    rng = np.random.default_rng(seed)
    state = init_state(problem, oracle, init, rng)
    metric_fn = make_metric(problem, config.metric)
    trace = RunTrace()

    mval = metric_fn(state.x, state.y) if metric_fn is not None else math.inf
    if mval <= config.target:
        trace.append(0, 0, eta, mval, mval, 0, EVENT_CONVERGED)
        trace.final_x, trace.final_y = state.x, state.y
        return trace, True, 0

    last_gap = mval
    while True:
        state, gap = fixed_eta_step(state, problem, oracle, eta, config.max_f_calls)
        if gap is None:
            trace.append(state.t, 0, eta, last_gap, mval, state.f_calls_total, EVENT_BUDGET)
            trace.final_x, trace.final_y = state.x, state.y
            return trace, False, state.f_calls_total
        last_gap = gap
        mval = metric_fn(state.x, state.y) if metric_fn is not None else gap
        trace.append(state.t, 0, eta, gap, mval, state.f_calls_total, EVENT_STEP)
        if mval <= config.target:
            trace.append(state.t, 0, eta, gap, mval, state.f_calls_total, EVENT_CONVERGED)
            trace.final_x, trace.final_y = state.x, state.y
            return trace, True, state.f_calls_total
        if state.f_calls_total > config.max_f_calls:
            trace.append(state.t, 0, eta, gap, mval, state.f_calls_total, EVENT_BUDGET)
            trace.final_x, trace.final_y = state.x, state.y
            return trace, False, state.f_calls_total


def slope_fit(log_values) -> tuple[float, float]:
    """Least-squares slope of values against 1..s and its standard error.

    The error uses the usual s - 2 denominator and is defined as 0.0 when
    s == 2 (a perfect two-point fit).
    """
    v = np.asarray(log_values, dtype=float)
    s = v.size
    if s < 2:
        raise ValueError("slope_fit needs at least two values")
    if not np.all(np.isfinite(v)):
        raise ValueError("slope_fit requires finite values")
    idx = np.arange(1.0, s + 1.0)
    xm = idx.mean()
    ym = v.mean()
    dx = idx - xm
    sxx = float(dx @ dx)
    slope = float(dx @ (v - ym)) / sxx
    if s == 2:
        return slope, 0.0
    resid = v - (ym + slope * dx)
    mse = float(resid @ resid) / (s - 2)
    return slope, math.sqrt(mse / sxx)


def _tail_strictly_increasing(values: list[float], width: int) -> bool:
    # Width <= 1 leaves nothing to compare, which reads as vacuously true.
    tail = values[-width:] if width > 0 else []
    return all(tail[i] < tail[i + 1] for i in range(len(tail) - 1))


def adapt_decision(gamma_tilde: float, gamma_c: float, sigma_c: float,
                   eta: float, eta_c: float, c_eta: float
                   ) -> tuple[float, float, str, bool]:
    """Round-end update of (eta, gamma_tilde) from the fitted slope.

    Nonnegative old and new slopes shrink eta sharply; a slope no worse
    than the running estimate (or an unchanged candidate) is accepted;
    anything else is rejected.  The returned flag asks the caller to revert
    the round's movement, which fires when the updated running slope is
    significantly positive (gamma_tilde - 2 sigma_c > 0).
    """
    if gamma_tilde >= 0.0 and gamma_c >= 0.0:
        eta_new, gamma_new, event = eta / c_eta**3, gamma_tilde, EVENT_SHRINK
    elif gamma_c <= gamma_tilde or eta_c == eta:
        eta_new, gamma_new, event = eta_c, gamma_c, EVENT_ACCEPT
    else:
        eta_new, gamma_new, event = eta, gamma_tilde, EVENT_REJECT
    revert = (gamma_new - 2.0 * sigma_c) > 0.0
    return eta_new, gamma_new, event, revert


def adapt_run(problem: ProblemDef, oracle: OracleSpec, init: tuple[Array, Array],
              config: AdaptConfig, seed) -> tuple[RunTrace, bool, int]:
    """Run with the derivative-free eta controller, starting at eta = 1.

    Per round: draw a candidate eta from {min(eta c, 1), eta, eta / c} with
    equal probability, take floor(b_eta + a_eta / eta_c) inner steps
    (breaking early when the last b_eta F values are strictly increasing,
    or immediately on a nonpositive F), fit the log-F slope, and update
    (eta, gamma_tilde) per ``adapt_decision``.  A revert restores x, y and
    both ES mutation scales to the round's snapshot, bit for bit; call
    counters are kept.  Rounds with fewer than two recorded F values skip
    the fit: the candidate is dropped outright, gamma_tilde keeps its
    value, and no revert check runs.
    """
    rng = np.random.default_rng(seed)
    state = init_state(problem, oracle, init, rng)
    metric_fn = make_metric(problem, config.metric)
    trace = RunTrace()

    def current_metric(gap_fallback):
        if metric_fn is not None:
            return metric_fn(state.x, state.y)
        return gap_fallback

    mval = metric_fn(state.x, state.y) if metric_fn is not None else math.inf
    if mval <= config.target:
        trace.append(0, 0, state.eta, mval, mval, 0, EVENT_CONVERGED)
        trace.final_x, trace.final_y = state.x, state.y
        return trace, True, 0

    eta = 1.0
    gamma_tilde = 0.0
    c_eta = config.c_eta
    round_idx = 1
    last_gap = mval

    def finish(event, success):
        trace.append(round_idx, 0, eta, last_gap, mval, state.f_calls_total, event)
        trace.final_x, trace.final_y = state.x, state.y
        return trace, success, state.f_calls_total

    while True:
        if state.f_calls_total > config.max_f_calls:
            return finish(EVENT_BUDGET, False)
        snap_x = state.x.copy()
        snap_y = state.y.copy()
        snap_sx = state.oracle_state_x.step_size
        snap_sy = state.oracle_state_y.step_size

        choice = int(rng.integers(0, 3))
        eta_c = (min(eta * c_eta, 1.0), eta, eta / c_eta)[choice]
        n_step = max(1, int(math.floor(config.b_eta + config.a_eta / eta_c)))

        f_values: list[float] = []
        converged = False
        budget = False
        for s in range(1, n_step + 1):
            state, gap = fixed_eta_step(state, problem, oracle, eta_c, config.max_f_calls)
            if gap is None:
                budget = True
                break
            last_gap = gap
            mval = current_metric(gap)
            trace.append(round_idx, s, eta_c, gap, mval, state.f_calls_total, EVENT_STEP)
            f_values.append(gap)
            if mval <= config.target:
                converged = True
                break
            if gap <= 0.0:
                break  # gap surrogate lost meaning; end the round here
            if state.f_calls_total > config.max_f_calls:
                budget = True
                break
            if s >= config.b_eta and _tail_strictly_increasing(f_values, config.b_eta):
                break
        if converged:
            return finish(EVENT_CONVERGED, True)
        if budget:
            return finish(EVENT_BUDGET, False)

        s_count = len(f_values)
        if s_count >= 2:
            logs = [math.log(max(f, _F_FLOOR)) for f in f_values]
            gamma_c, sigma_c = slope_fit(logs)
            eta, gamma_tilde, event, revert = adapt_decision(
                gamma_tilde, gamma_c, sigma_c, eta, eta_c, c_eta)
        else:
            # Degenerate round: no slope to fit, candidate dropped.
            if gamma_tilde >= 0.0:
                eta, event = eta / c_eta**3, EVENT_SHRINK
            else:
                event = EVENT_REJECT
            revert = False
        mval = current_metric(last_gap)
        trace.append(round_idx, s_count, eta, last_gap, mval, state.f_calls_total, event)
        if revert:
            state.x = snap_x
            state.y = snap_y
            state.oracle_state_x = replace(state.oracle_state_x, step_size=snap_sx)
            state.oracle_state_y = replace(state.oracle_state_y, step_size=snap_sy)
            mval = current_metric(last_gap)
            trace.append(round_idx, s_count, eta, last_gap, mval,
                         state.f_calls_total, EVENT_REVERT)
        state.eta = eta
        state.gamma_tilde = gamma_tilde
        round_idx += 1
