"""Min-max saddle-point optimization with approximate minimization oracles.

The outer loop moves both variables a fraction eta toward their oracle
outputs; the oracles can be exact best responses, a (1+1) evolution
strategy, or Armijo backtracking gradient descent.  Rate constants for
convex-concave quadratics live in :mod:`saddlekit.theory`; seeded sweep
studies and their CSV/figure plumbing in :mod:`saddlekit.experiments`
and :mod:`saddlekit.report`.
"""

from .problems import ProblemDef, get_problem, make_f1, make_f2, make_f3, mirror_to_box
from .oracles import OracleSpec, OracleState, OracleResult, realized_epsilon
from .optimizer import (AdaptConfig, RunTrace, SaddleState, TraceRecord,
                        adapt_run, fixed_eta_step, run_fixed, slope_fit,
                        suboptimality_gap)
from .theory import TheoryConstants, constants_for, delta_bound, g_tilde

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig", "OracleResult", "OracleSpec", "OracleState", "ProblemDef",
    "RunTrace", "SaddleState", "TheoryConstants", "TraceRecord", "adapt_run",
    "constants_for", "delta_bound", "fixed_eta_step", "g_tilde", "get_problem",
    "make_f1", "make_f2", "make_f3", "mirror_to_box", "realized_epsilon",
    "run_fixed", "slope_fit", "suboptimality_gap", "__version__",
]
