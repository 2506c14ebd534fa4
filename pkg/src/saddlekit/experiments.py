"""Seeded sweep harness: multi-trial runs, aggregation, and CSV output.

Three canned studies ship with the package:

* ``run_ex1`` -- step-size grids on the bilinear quadratic family f1,
  varying the coupling strength and the dimension;
* ``run_ex2`` -- f2 at strong coupling (b = 10), where the global-rate
  precondition fails (the best-response deviation bound exceeds 1) yet
  small step sizes still converge;
* ``run_ex3`` -- a grid of starting points on the 1-D cubic-regularized
  problem f3, checking that runs settle on the saddle rather than on the
  other critical points.

Each study reduces to a flat list of ``TrialSpec`` records executed by
``run_trials`` (optionally in parallel), aggregated per configuration,
and serialized with a fixed CSV schema.  Per-trial seeds are
``seed_base + trial_index``, so reruns are byte-identical.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import theory
from .optimizer import AdaptConfig, adapt_run, run_fixed
from .oracles import OracleSpec
from .problems import get_problem

SUMMARY_HEADER = "problem,b,m,n,oracle,eta_policy,k,seed,success,fcalls"
AGGREGATE_HEADER = "problem,b,m,n,oracle,eta_policy,k,success_rate,q1,median,q3"

# Fixed step-size grids are eta_bar * 10^(-k/10) for k in this range,
# clamped into (0, 1]; "adapt" rides along as a separate policy.
DEFAULT_KS = tuple(range(16))

INIT_POLICIES = ("standard-normal", "uniform-box", "point")


@dataclass(frozen=True)
class TrialSpec:
    """One trial, described with plain picklable values only."""

    problem: str
    m: int
    n: int
    b: Optional[float]
    oracle_kind: str
    tau: int
    gd_step: float
    sigma0: float
    sigma_max: float
    eta: Optional[float]        # None means the adaptive policy
    k: Optional[int]            # grid index when the eta came off a grid
    seed: int
    target: float
    max_f_calls: int
    metric: str
    a_eta: float = 1.0
    b_eta: int = 5
    c_eta: float = 1.1
    init_policy: str = "standard-normal"
    init_point: Optional[tuple] = None   # ((x...), (y...)) when policy is "point"
    trace_path: Optional[str] = None

    def __post_init__(self):
        if self.init_policy not in INIT_POLICIES:
            raise ValueError(f"init_policy must be one of {INIT_POLICIES}")
        if self.init_policy == "point" and self.init_point is None:
            raise ValueError("init_policy 'point' needs init_point")


@dataclass(frozen=True)
class TrialRow:
    """One summary row; final_x/final_y are kept for diagnostics only."""

    problem: str
    b: Optional[float]
    m: int
    n: int
    oracle: str
    eta_policy: str
    k: Optional[int]
    seed: int
    success: bool
    fcalls: int
    final_x: Optional[tuple] = None
    final_y: Optional[tuple] = None


@dataclass(frozen=True)
class AggregateRow:
    problem: str
    b: Optional[float]
    m: int
    n: int
    oracle: str
    eta_policy: str
    k: Optional[int]
    trials: int
    success_rate: float
    q1: Optional[float]
    median: Optional[float]
    q3: Optional[float]


@dataclass
class SweepSummary:
    rows: list
    aggregates: list
    notes: dict


def _oracle_spec(spec: TrialSpec) -> OracleSpec:
    return OracleSpec(kind=spec.oracle_kind, tau=spec.tau, gd_step=spec.gd_step,
                      sigma0=spec.sigma0, sigma_max=spec.sigma_max)


def _initial_point(spec: TrialSpec, problem, rng: np.random.Generator):
    if spec.init_policy == "point":
        x0, y0 = spec.init_point
        return np.array(x0, dtype=float), np.array(y0, dtype=float)
    if spec.init_policy == "uniform-box":
        if problem.bounds is not None:
            lo, hi = problem.bounds
        else:
            lo = -3.0 * np.ones(problem.m + problem.n)
            hi = 3.0 * np.ones(problem.m + problem.n)
        z = rng.uniform(lo, hi)
        return z[:problem.m], z[problem.m:]
    return rng.standard_normal(problem.m), rng.standard_normal(problem.n)


def run_trial(spec: TrialSpec) -> TrialRow:
    """Execute one trial; the seed is split into init and run streams."""
    problem = get_problem(spec.problem, m=spec.m, n=spec.n, b=spec.b)
    oracle = _oracle_spec(spec)
    config = AdaptConfig(a_eta=spec.a_eta, b_eta=spec.b_eta, c_eta=spec.c_eta,
                         max_f_calls=spec.max_f_calls, target=spec.target,
                         metric=spec.metric)
    init_ss, run_ss = np.random.SeedSequence(spec.seed).spawn(2)
    init = _initial_point(spec, problem, np.random.default_rng(init_ss))
    if spec.eta is None:
        trace, success, f_calls = adapt_run(problem, oracle, init, config, run_ss)
        policy = "adapt"
    else:
        trace, success, f_calls = run_fixed(problem, oracle, spec.eta, init,
                                            config, run_ss)
        policy = repr(float(spec.eta))
    if spec.trace_path is not None:
        trace.to_jsonl(spec.trace_path)
    return TrialRow(
        problem=spec.problem, b=spec.b, m=spec.m, n=spec.n,
        oracle=oracle.label(), eta_policy=policy, k=spec.k, seed=spec.seed,
        success=success, fcalls=f_calls,
        final_x=tuple(float(v) for v in trace.final_x),
        final_y=tuple(float(v) for v in trace.final_y),
    )


def run_trials(specs: Sequence[TrialSpec], workers: int = 1) -> list:
    """Run all trials, preserving spec order in the returned rows."""
    specs = list(specs)
    if workers < 1:
        raise ValueError("workers must be at least 1")
    if workers == 1 or len(specs) <= 1:
        return [run_trial(s) for s in specs]
    chunk = max(1, len(specs) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_trial, specs, chunksize=chunk))


def _config_key(row: TrialRow):
    return (row.problem, row.b, row.m, row.n, row.oracle, row.eta_policy, row.k)


def aggregate(rows: Sequence[TrialRow]) -> list:
    """Per-configuration success rate and f-call quartiles over successes.

    Quartiles use linear interpolation between order statistics and are
    None when no trial in the group succeeded.  Groups keep first-seen
    order, so aggregation is deterministic given the rows.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("aggregate needs at least one row")
    groups: dict = {}
    for row in rows:
        groups.setdefault(_config_key(row), []).append(row)
    out = []
    for key, members in groups.items():
        wins = [r.fcalls for r in members if r.success]
        if wins:
            q1, med, q3 = (float(v) for v in np.percentile(wins, [25.0, 50.0, 75.0]))
        else:
            q1 = med = q3 = None
        problem, b, m, n, oracle, eta_policy, k = key
        out.append(AggregateRow(
            problem=problem, b=b, m=m, n=n, oracle=oracle,
            eta_policy=eta_policy, k=k, trials=len(members),
            success_rate=len(wins) / len(members), q1=q1, median=med, q3=q3))
    return out


# ---------------------------------------------------------------------------
# CSV round trip


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def summary_lines(rows: Sequence[TrialRow]) -> list:
    lines = [SUMMARY_HEADER]
    for r in rows:
        lines.append(",".join([
            r.problem, _fmt(r.b), str(r.m), str(r.n), r.oracle, r.eta_policy,
            _fmt(r.k), str(r.seed), _fmt(r.success), str(r.fcalls)]))
    return lines


def aggregate_lines(aggs: Sequence[AggregateRow]) -> list:
    lines = [AGGREGATE_HEADER]
    for a in aggs:
        lines.append(",".join([
            a.problem, _fmt(a.b), str(a.m), str(a.n), a.oracle, a.eta_policy,
            _fmt(a.k), _fmt(float(a.success_rate)), _fmt(a.q1), _fmt(a.median),
            _fmt(a.q3)]))
    return lines


def write_summary_csv(rows: Sequence[TrialRow], path) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(summary_lines(rows)) + "\n")


def write_aggregate_csv(aggs: Sequence[AggregateRow], path) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(aggregate_lines(aggs)) + "\n")


def read_summary_csv(path) -> list:
    """Parse a summary CSV back into TrialRow records (final points lost)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != SUMMARY_HEADER:
        raise ValueError(f"{path}: not a sweep summary (bad header)")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 10:
            raise ValueError(f"{path}: malformed row {ln!r}")
        problem, b, m, n, oracle, eta_policy, k, seed, success, fcalls = parts
        rows.append(TrialRow(
            problem=problem, b=float(b) if b else None, m=int(m), n=int(n),
            oracle=oracle, eta_policy=eta_policy, k=int(k) if k else None,
            seed=int(seed), success=success == "1", fcalls=int(fcalls)))
    return rows


# ---------------------------------------------------------------------------
# Sweep builders


def eta_grid(eta_bar: float, ks: Iterable[int] = DEFAULT_KS) -> list:
    """(k, eta) pairs with eta = eta_bar * 10^(-k/10), clamped into (0, 1]."""
    if eta_bar <= 0:
        raise ValueError("eta_bar must be positive")
    return [(int(k), min(eta_bar * 10.0 ** (-k / 10.0), 1.0)) for k in ks]


def _policy_list(eta_bar, ks, include_adapt, eta):
    if eta is not None:
        return [(None, float(eta))]
    policies = [(k, e) for k, e in eta_grid(eta_bar, ks)]
    if include_adapt:
        policies.append((None, None))    # the adaptive policy
    return policies


def build_specs(problem: str, m: int, n: int, b: Optional[float],
                oracle: OracleSpec, policies: Sequence[tuple], trials: int,
                seed_base: int, target: float, max_f_calls: int, metric: str,
                start_index: int = 0, init_policy: str = "standard-normal",
                init_points: Optional[Sequence[tuple]] = None) -> list:
    """Cartesian product of policies x trials as TrialSpecs.

    Seeds are seed_base + running index; pass start_index to continue the
    numbering across several build_specs calls within one sweep.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    specs = []
    idx = start_index
    for k, eta in policies:
        for trial in range(trials):
            point = None
            policy = init_policy
            if init_points is not None:
                point = init_points[trial]
                policy = "point"
            specs.append(TrialSpec(
                problem=problem, m=m, n=n, b=b, oracle_kind=oracle.kind,
                tau=oracle.tau, gd_step=oracle.gd_step, sigma0=oracle.sigma0,
                sigma_max=oracle.sigma_max, eta=eta, k=k,
                seed=seed_base + idx, target=target, max_f_calls=max_f_calls,
                metric=metric, init_policy=policy, init_point=point))
            idx += 1
    return specs


def _summarize(specs, workers, notes) -> SweepSummary:
    rows = run_trials(specs, workers=workers)
    return SweepSummary(rows=rows, aggregates=aggregate(rows), notes=notes)


def run_ex1(scale: str = "desk", oracle: str = "es", *, trials: Optional[int] = None,
            ks: Iterable[int] = DEFAULT_KS, include_adapt: bool = True,
            seed_base: int = 0, target: float = 1e-5, max_f_calls: int = 500_000,
            workers: int = 1) -> SweepSummary:
    """Step-size grid study on f1: coupling sweep at n=m=10, dimension sweep at b=1.

    Metric is the true duality gap G.  Desk scale runs 10 trials over
    b in {1, 2, 8} and n = m in {5, 10, 20}; paper scale runs 50 trials
    over b in {0.5, 1, 2, 4, 8, 16} and n = m in {5, 10, 20, 40, 80}.
    """
    scale = _check_scale(scale)
    if scale == "desk":
        trials = 10 if trials is None else trials
        bs, dims = (1.0, 2.0, 8.0), (5, 10, 20)
    else:
        trials = 50 if trials is None else trials
        bs, dims = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0), (5, 10, 20, 40, 80)
    configs = [(b, 10) for b in bs]
    configs += [(1.0, d) for d in dims if (1.0, d) not in configs]
    spec = _named_oracle(oracle)
    specs = []
    eta_bars = {}
    for b, dim in configs:
        eta_bar = 2.0 / (1.0 + b * b)
        eta_bars[f"b={_fmt(b)},n={dim}"] = eta_bar
        policies = _policy_list(eta_bar, ks, include_adapt, None)
        specs += build_specs("f1", dim, dim, b, spec, policies, trials,
                             seed_base, target, max_f_calls, "G",
                             start_index=len(specs))
    notes = {"scale": scale, "oracle": spec.label(), "eta_bar": eta_bars}
    return _summarize(specs, workers, notes)


def run_ex2(scale: str = "desk", *, b: float = 10.0, trials: Optional[int] = None,
            ks: Iterable[int] = DEFAULT_KS, include_adapt: bool = True,
            seed_base: int = 0, target: float = 1e-5, max_f_calls: int = 500_000,
            workers: int = 1) -> SweepSummary:
    """Strong-coupling study on f2 with both approximate oracles.

    The step-size grid is anchored at the saddle-Hessian threshold
    8/(4+b^2); the notes also carry the halved anchor 4/(4+b^2) and the
    far-field threshold 2/(1+b^2) for side-by-side reading, plus a
    grid-sampled estimate of the best-response deviation bound, flagged
    when it exceeds 1 (the global-rate precondition fails there).
    """
    scale = _check_scale(scale)
    trials = (10 if scale == "desk" else 50) if trials is None else trials
    dim = 10
    eta_bar = 8.0 / (4.0 + b * b)
    policies = _policy_list(eta_bar, ks, include_adapt, None)
    specs = []
    for oracle in (OracleSpec(kind="es", tau=5), OracleSpec(kind="gd", tau=5)):
        specs += build_specs("f2", dim, dim, b, oracle, policies, trials,
                             seed_base, target, max_f_calls, "G_tilde",
                             start_index=len(specs))

    problem = get_problem("f2", m=dim, n=dim, b=b)
    samples = []
    for t in np.linspace(-2.0, 2.0, 9):
        for s in np.linspace(-2.0, 2.0, 9):
            x = np.zeros(dim); x[0] = t
            y = np.zeros(dim); y[0] = s
            samples.append((x, y))
    delta = theory.delta_bound(problem, samples)
    notes = {
        "scale": scale,
        "eta_bar_formula": eta_bar,
        "eta_bar_halved": 4.0 / (4.0 + b * b),
        "eta_bar_far_field": 2.0 / (1.0 + b * b),
        "delta_estimate": float(delta),
        "delta_exceeds_one": bool(delta > 1.0),
    }
    return _summarize(specs, workers, notes)


def run_ex3(scale: str = "desk", *, eta: float = 0.1, target: float = 1e-5,
            max_f_calls: int = 500_000, seed_base: int = 0,
            workers: int = 1) -> SweepSummary:
    """Grid-of-starting-points study on f3 with the gradient oracle.

    Starting points cover [-5,3] x [-3,5] at 11x11 (desk) or 51x51 (paper)
    resolution, run at fixed eta for tau in {1, 5}; the metric is the
    quadratic error measure around the saddle z1.  Notes record the
    fraction of runs reaching z1 per oracle and probe runs started exactly
    at each critical point (the gradient vanishes at all three, so the
    oracle stalls unless the start is already the saddle).
    """
    scale = _check_scale(scale)
    res = 11 if scale == "desk" else 51
    xs = np.linspace(-5.0, 3.0, res)
    ys = np.linspace(-3.0, 5.0, res)
    points = [((float(x),), (float(y),)) for x in xs for y in ys]
    specs = []
    for tau in (1, 5):
        oracle = OracleSpec(kind="gd", tau=tau)
        specs += build_specs("f3", 1, 1, None, oracle, [(None, eta)],
                             trials=len(points), seed_base=seed_base,
                             target=target, max_f_calls=max_f_calls,
                             metric="G_tilde", start_index=len(specs),
                             init_points=points)
    rows = run_trials(specs, workers=workers)

    fractions = {}
    for tau in (1, 5):
        label = OracleSpec(kind="gd", tau=tau).label()
        sub = [r for r in rows if r.oracle == label]
        fractions[label] = sum(r.success for r in sub) / len(sub)

    probes = {}
    probe_oracle = OracleSpec(kind="gd", tau=5)
    for offset, (name, point) in enumerate(_f3_probe_points().items()):
        probe = build_specs("f3", 1, 1, None, probe_oracle, [(None, eta)],
                            trials=1, seed_base=seed_base + len(specs) + offset,
                            target=target, max_f_calls=max_f_calls,
                            metric="G_tilde", start_index=0,
                            init_points=[point])
        row = run_trial(probe[0])
        probes[name] = {"success": row.success, "fcalls": row.fcalls}

    notes = {"scale": scale, "eta": eta, "fraction_to_saddle": fractions,
             "critical_point_probes": probes}
    return SweepSummary(rows=rows, aggregates=aggregate(rows), notes=notes)


def _f3_probe_points() -> dict:
    from .problems import f3_critical_points
    z0, z1, z2 = f3_critical_points()
    return {
        "z0": (tuple(z0[0]), tuple(z0[1])),
        "z1": (tuple(z1[0]), tuple(z1[1])),
        "z2": (tuple(z2[0]), tuple(z2[1])),
    }


def run_custom(problem: str, m: int, n: int, b: Optional[float] = None, *,
               oracle: OracleSpec = OracleSpec(kind="es"), eta: Optional[float] = None,
               adapt: bool = False, ks: Iterable[int] = DEFAULT_KS,
               include_adapt: bool = True, trials: int = 10, seed_base: int = 0,
               target: float = 1e-5, max_f_calls: int = 500_000,
               metric: Optional[str] = None, workers: int = 1) -> SweepSummary:
    """One-configuration sweep: a fixed eta, the adaptive policy, or the k-grid.

    When no eta is given and adapt is False, the grid is anchored at the
    threshold 2/(1+sigma_bar^2) computed from the problem's saddle Hessian.
    The default metric is G for f1 and the quadratic error measure
    otherwise.
    """
    prob = get_problem(problem, m=m, n=n, b=b)
    if metric is None:
        metric = "G" if problem == "f1" else "G_tilde"
    notes = {"problem": problem, "oracle": oracle.label(), "metric": metric}
    if adapt:
        policies = [(None, None)]
    elif eta is not None:
        policies = [(None, float(eta))]
    else:
        consts = theory.constants_for(prob)
        notes["eta_bar"] = consts.eta_bar
        policies = _policy_list(consts.eta_bar, ks, include_adapt, None)
    specs = build_specs(problem, m, n, b, oracle, policies, trials, seed_base,
                        target, max_f_calls, metric)
    return _summarize(specs, workers, notes)


def _check_scale(scale: str) -> str:
    if scale not in ("desk", "paper"):
        raise ValueError(f"scale must be 'desk' or 'paper', got {scale!r}")
    return scale


def _named_oracle(name: str) -> OracleSpec:
    if name == "es":
        return OracleSpec(kind="es", tau=5, sigma0=2.0, sigma_max=2.0)
    if name == "gd":
        return OracleSpec(kind="gd", tau=5)
    if name == "exact":
        return OracleSpec(kind="exact")
    raise ValueError(f"oracle must be 'es', 'gd', or 'exact', got {name!r}")
