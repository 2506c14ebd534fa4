import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from saddlekit.optimizer import (EVENT_ACCEPT, EVENT_BUDGET, EVENT_CONVERGED,
                                 EVENT_REJECT, EVENT_REVERT, EVENT_SHRINK,
                                 EVENT_STEP, AdaptConfig, RunTrace,
                                 adapt_decision, adapt_run, fixed_eta_step,
                                 init_state, make_metric, progress_metric,
                                 run_fixed, slope_fit, suboptimality_gap)
from saddlekit.oracles import OracleSpec
from saddlekit.problems import make_f1, make_f2


def _ones_init(m, n):
    return np.ones(m), np.ones(n)


def _exact_state(problem, spec=None):
    spec = spec or OracleSpec(kind="exact")
    return init_state(problem, spec, _ones_init(problem.m, problem.n),
                      np.random.default_rng(0))


def test_fixed_eta_step_by_hand():
    p = make_f1(1, 1, 1.0)
    state = _exact_state(p)
    new, gap = fixed_eta_step(state, p, OracleSpec(kind="exact"), eta=0.5)
    # best responses from (1, 1) are x_hat = -1, y_hat = 1
    assert gap == pytest.approx(2.0)           # f(1,1) - f(-1,1) = 1 - (-1)
    assert_allclose(new.x, [0.0])
    assert_allclose(new.y, [1.0])
    assert new.t == 1
    assert new.f_calls_total == 4              # 1 + 1 oracle calls + 2 gap evals
    assert new.last_f == pytest.approx(2.0)
    # the input state is untouched
    assert state.t == 0 and state.f_calls_total == 0
    assert_allclose(state.x, [1.0])


def test_fixed_eta_step_validates_eta():
    p = make_f1(1, 1, 1.0)
    state = _exact_state(p)
    for bad in (0.0, -0.5, 1.5):
        with pytest.raises(ValueError, match=r"eta must be in \(0,1\]"):
            fixed_eta_step(state, p, OracleSpec(kind="exact"), eta=bad)


def test_fixed_eta_step_budget_abandons_after_x_oracle():
    p = make_f1(1, 1, 1.0)
    state = _exact_state(p)
    new, gap = fixed_eta_step(state, p, OracleSpec(kind="exact"), eta=0.5,
                              max_f_calls=0)
    assert gap is None
    assert new.f_calls_total == 1              # the x oracle was charged
    assert new.t == 0
    assert new.x is state.x and new.y is state.y
    assert new.last_f is None


def test_fixed_eta_step_budget_abandons_after_y_oracle():
    p = make_f1(1, 1, 1.0)
    state = _exact_state(p)
    new, gap = fixed_eta_step(state, p, OracleSpec(kind="exact"), eta=0.5,
                              max_f_calls=1)
    assert gap is None
    assert new.f_calls_total == 2              # both oracles charged, no gap evals
    assert new.t == 0
    assert new.x is state.x and new.y is state.y


def test_run_fixed_contracts_at_the_expected_rate():
    # b = 1, eta = 0.5 halves the gap metric each step: 2 * 0.5^t <= 1e-5
    # first at t = 18
    p = make_f1(1, 1, 1.0)
    cfg = AdaptConfig(target=1e-5, max_f_calls=10_000, metric="G")
    trace, success, fc = run_fixed(p, OracleSpec(kind="exact"), 0.5,
                                   _ones_init(1, 1), cfg, seed=0)
    assert success
    assert fc == 72                            # 4 f-calls per step, 18 steps
    steps = [r for r in trace if r.event == EVENT_STEP]
    assert len(steps) == 18
    assert steps[-1].metric == pytest.approx(2.0 * 0.5 ** 18, rel=1e-12)
    assert trace.records[-1].event == EVENT_CONVERGED
    assert_allclose(trace.final_x, 0.0, atol=5e-3)
    fcalls = [r.fcalls for r in steps]
    assert fcalls == sorted(set(fcalls))       # strictly increasing


def test_run_fixed_stalls_into_budget():
    # eta = 1 with b = 1 is a pure rotation: no progress, budget must end it
    p = make_f1(1, 1, 1.0)
    cfg = AdaptConfig(target=1e-5, max_f_calls=400, metric="G")
    trace, success, fc = run_fixed(p, OracleSpec(kind="exact"), 1.0,
                                   _ones_init(1, 1), cfg, seed=0)
    assert not success
    assert fc == 401                           # abandoned one oracle call in
    assert trace.records[-1].event == EVENT_BUDGET
    metrics = [r.metric for r in trace if r.event == EVENT_STEP]
    assert metrics[0] == pytest.approx(metrics[-1])


def test_run_fixed_immediate_convergence():
    p = make_f1(2, 2, 1.0)
    cfg = AdaptConfig(target=1e-5, metric="G")
    trace, success, fc = run_fixed(p, OracleSpec(kind="exact"), 0.5,
                                   (np.zeros(2), np.zeros(2)), cfg, seed=0)
    assert success and fc == 0
    assert len(trace) == 1
    assert trace.records[0].event == EVENT_CONVERGED


def test_trace_jsonl_round_trip(tmp_path):
    trace = RunTrace()
    trace.append(1, 0, 0.5, 2.0, 4.0, 4, EVENT_STEP)
    trace.append(1, 2, 0.5, math.inf, math.nan, 8, EVENT_ACCEPT)
    path = tmp_path / "trace.jsonl"
    trace.to_jsonl(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    first = json.loads(lines[0])
    assert list(first.keys()) == ["t", "s", "eta", "F", "metric", "fcalls", "event"]
    assert first == {"t": 1, "s": 0, "eta": 0.5, "F": 2.0, "metric": 4.0,
                     "fcalls": 4, "event": "step"}
    second = json.loads(lines[1])
    assert second["F"] is None and second["metric"] is None
    assert second["event"] == EVENT_ACCEPT


def test_event_names_survive_ascii_encoding():
    assert EVENT_ACCEPT == "accept-η"
    assert EVENT_REJECT == "reject-η"
    assert EVENT_SHRINK == "shrink-η"
    trace = RunTrace()
    trace.append(1, 1, 0.5, 1.0, 1.0, 4, EVENT_SHRINK)
    raw = trace.dumps()
    assert "\\u03b7" in raw                    # pure-ASCII on disk
    assert json.loads(raw)["event"] == EVENT_SHRINK


def test_slope_fit_known_values():
    slope, err = slope_fit([0.0, -1.0, -2.0])
    assert slope == pytest.approx(-1.0)
    assert err == 0.0
    slope, err = slope_fit([0.0, 0.0, 0.0])
    assert slope == 0.0 and err == 0.0
    slope, err = slope_fit([0.0, -1.0, -1.0])
    assert slope == pytest.approx(-0.5)
    assert err == pytest.approx(math.sqrt(1.0 / 12.0))
    slope, err = slope_fit([3.0, 1.0])
    assert slope == pytest.approx(-2.0)
    assert err == 0.0                          # two points fit perfectly


def test_slope_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        slope_fit([1.0])
    with pytest.raises(ValueError):
        slope_fit([1.0, math.nan, 2.0])


def test_metric_dispatch():
    p1 = make_f1(2, 2, 2.0)
    g = make_metric(p1, "G")
    gt = make_metric(p1, "G_tilde")
    x = np.array([1.0, -1.0])
    y = np.array([0.5, 2.0])
    closed = (1 + 4.0) * (x @ x + y @ y) / 2.0
    assert g(x, y) == pytest.approx(closed, rel=1e-12)
    assert gt(x, y) == pytest.approx(closed, rel=1e-12)
    assert make_metric(p1, "F") is None
    with pytest.raises(ValueError):
        make_metric(p1, "entropy")
    p2 = make_f2(2, 2, 1.0)
    with pytest.raises(ValueError):
        make_metric(p2, "G")                   # no closed-form best responses
    with pytest.raises(ValueError):
        suboptimality_gap(p2, x, y)


def test_progress_metric_f_needs_a_step():
    p = make_f1(1, 1, 1.0)
    state = _exact_state(p)
    with pytest.raises(ValueError):
        progress_metric(p, state, "F")
    state, gap = fixed_eta_step(state, p, OracleSpec(kind="exact"), 0.5)
    assert progress_metric(p, state, "F") == gap
    assert progress_metric(p, state, "G") == pytest.approx(
        suboptimality_gap(p, state.x, state.y))


def test_init_state_validates_shapes():
    p = make_f1(2, 2, 1.0)
    with pytest.raises(ValueError):
        init_state(p, OracleSpec(kind="exact"), (np.ones(3), np.ones(2)),
                   np.random.default_rng(0))
    with pytest.raises(ValueError):
        init_state(p, OracleSpec(kind="exact"), (np.ones(2), np.ones(1)),
                   np.random.default_rng(0))


def test_adapt_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig(a_eta=0.0)
    with pytest.raises(ValueError):
        AdaptConfig(b_eta=-1)
    with pytest.raises(ValueError):
        AdaptConfig(c_eta=1.0)
    with pytest.raises(ValueError):
        AdaptConfig(max_f_calls=0)
    with pytest.raises(ValueError):
        AdaptConfig(target=0.0)
    with pytest.raises(ValueError):
        AdaptConfig(metric="H")


def test_adapt_decision_table():
    # both slopes nonnegative: sharp shrink, running slope kept
    eta, gam, event, revert = adapt_decision(0.0, 0.5, 0.1, 0.5, 0.55, 1.1)
    assert eta == pytest.approx(0.5 / 1.1 ** 3)
    assert gam == 0.0 and event == EVENT_SHRINK and not revert
    # candidate at least as steep as the running estimate: accept
    eta, gam, event, revert = adapt_decision(-0.1, -0.5, 0.1, 0.5, 0.55, 1.1)
    assert eta == 0.55 and gam == -0.5 and event == EVENT_ACCEPT and not revert
    # unchanged eta is always accepted; a significantly positive slope reverts
    eta, gam, event, revert = adapt_decision(-0.5, 0.3, 0.05, 0.5, 0.5, 1.1)
    assert eta == 0.5 and gam == 0.3 and event == EVENT_ACCEPT and revert
    # worse slope at a different eta: reject, keep everything
    eta, gam, event, revert = adapt_decision(-0.5, -0.3, 0.1, 0.5, 0.55, 1.1)
    assert eta == 0.5 and gam == -0.5 and event == EVENT_REJECT and not revert


def test_adapt_run_converges_with_exact_oracle():
    p = make_f1(2, 2, 1.0)
    cfg = AdaptConfig(target=1e-5, max_f_calls=100_000, metric="G")
    trace, success, fc = adapt_run(p, OracleSpec(kind="exact"),
                                   _ones_init(2, 2), cfg, seed=3)
    assert success
    assert trace.records[-1].event == EVENT_CONVERGED
    events = {r.event for r in trace}
    assert EVENT_STEP in events
    assert events & {EVENT_ACCEPT, EVENT_SHRINK}   # the controller did something
    steps = [r.fcalls for r in trace if r.event == EVENT_STEP]
    assert steps == sorted(set(steps))


def test_adapt_run_immediate_convergence():
    p = make_f1(2, 2, 1.0)
    cfg = AdaptConfig(target=1e-5, metric="G")
    trace, success, fc = adapt_run(p, OracleSpec(kind="exact"),
                                   (np.zeros(2), np.zeros(2)), cfg, seed=0)
    assert success and fc == 0
    assert [r.event for r in trace] == [EVENT_CONVERGED]


def test_adapt_run_budget_is_respected():
    p = make_f1(1, 1, 1.0)
    cfg = AdaptConfig(target=1e-12, max_f_calls=50, metric="G")
    trace, success, fc = adapt_run(p, OracleSpec(kind="exact"),
                                   _ones_init(1, 1), cfg, seed=1)
    assert not success
    assert trace.records[-1].event == EVENT_BUDGET
    assert fc == 52        # 4 calls per step; the two gap evals overshoot


def test_adapt_run_revert_restores_the_snapshot():
    # strong coupling plus a noisy oracle: an unchanged-eta round sometimes
    # fits a significantly positive slope after progress was made, and the
    # controller must walk the iterate back
    p = make_f1(2, 2, 3.0)
    spec = OracleSpec(kind="es", tau=2)
    cfg = AdaptConfig(a_eta=1.0, b_eta=5, c_eta=1.1, max_f_calls=60_000,
                      target=1e-9, metric="G")
    init = (np.ones(2), np.ones(2))
    for seed in range(50):
        trace, _, _ = adapt_run(p, spec, init, cfg, seed)
        recs = trace.records
        hits = [i for i, r in enumerate(recs) if r.event == EVENT_REVERT]
        if hits:
            break
    else:
        pytest.fail("no revert event in 50 seeds")
    i = hits[0]
    rev = recs[i]
    assert recs[i - 1].event == EVENT_ACCEPT    # revert follows an accept
    assert rev.t == recs[i - 1].t and rev.s == recs[i - 1].s
    assert rev.fcalls == recs[i - 1].fcalls     # bookkeeping only, no new calls
    # the metric is back to the value it had when the round began
    before_round = [r for r in recs[:i] if r.t < rev.t]
    assert rev.metric == before_round[-1].metric


def test_adapt_run_degenerate_rounds_shrink_eta():
    # b_eta = 0 makes the early-break vacuous after one step, so every round
    # records a single F value and takes the no-fit path
    p = make_f1(1, 1, 1.0)
    cfg = AdaptConfig(a_eta=1.0, b_eta=0, c_eta=1.1, max_f_calls=400,
                      target=1e-12, metric="G")
    trace, success, fc = adapt_run(p, OracleSpec(kind="exact"),
                                   _ones_init(1, 1), cfg, seed=2)
    assert not success and fc == 401
    decisions = [r for r in trace
                 if r.event not in (EVENT_STEP, EVENT_BUDGET, EVENT_CONVERGED)]
    assert decisions, "expected shrink decisions"
    assert all(r.event == EVENT_SHRINK for r in decisions)
    assert all(r.s == 1 for r in decisions)
    for k, r in enumerate(decisions, start=1):
        assert r.eta == pytest.approx(1.1 ** (-3 * k), rel=1e-9)
    assert EVENT_REVERT not in {r.event for r in trace}


def test_adapt_round_lengths_match_the_schedule():
    p = make_f1(2, 2, 1.0)
    cfg = AdaptConfig(a_eta=1.0, b_eta=5, c_eta=1.1, max_f_calls=20_000,
                      target=1e-7, metric="G")
    trace, success, fc = adapt_run(p, OracleSpec(kind="es", tau=2),
                                   _ones_init(2, 2), cfg, seed=7)
    rounds = {}
    for r in trace:
        if r.event == EVENT_STEP:
            rounds.setdefault(r.t, []).append(r)
    assert rounds
    for recs in rounds.values():
        assert [r.s for r in recs] == list(range(1, len(recs) + 1))
        eta_c = recs[0].eta
        assert all(r.eta == eta_c for r in recs)
        assert len(recs) <= math.floor(5 + 1.0 / eta_c)
