"""Convergence-rate constants for the averaged min-max update.

For a problem with Hessian blocks (Hxx, Hxy, Hyx, Hyy) at the saddle, the
local geometry is summarized by the effective curvature matrices

    Gxx = Hxx + Hxy (-Hyy)^-1 Hyx,
    Gyy = (-Hyy) + Hyx Hxx^-1 Hxy,

and by the scalar interaction strength sigma_bar, the largest singular value
of sqrt(Gxx) Hxx^-1 Hxy (sqrt(Gyy))^-1.  With an inner minimizer whose
squared-distance contraction factor is at most eps_bar (plus a best-response
drift delta for non-quadratic problems), the outer step size eta must stay
below a threshold eta_bar for convergence, the per-step rate on the local
quadratic gap is gamma_bar(eta), and the rate-optimal step size eta_star has
a closed form together with its rate gamma_bar_star.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .problems import ProblemDef

Array = np.ndarray

_SPD_RTOL = 1e-12


def _require_square(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def _require_spd(a, name):
    """Validate symmetry and positive definiteness (min eig > 1e-12 max eig)."""
    a = _require_square(a, name)
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(a)
    if w[0] <= _SPD_RTOL * max(w[-1], 0.0):
        raise ValueError(f"{name} is not positive definite (eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}])")
    return a


def spd_sqrt(a: Array) -> Array:
    """Symmetric positive-definite square root via eigendecomposition."""
    a = _require_spd(a, "matrix")
    w, v = np.linalg.eigh(a)
    root = (v * np.sqrt(w)) @ v.T
    return 0.5 * (root + root.T)


def g_matrices(hxx: Array, hxy: Array, hyx: Array, hyy: Array) -> tuple[Array, Array]:
    """Effective curvature blocks (Gxx, Gyy) from saddle Hessian blocks.

    Requires Hxx and -Hyy positive definite; results are symmetrized
    before return.
    """
    hxx = _require_spd(hxx, "Hxx")
    neg_hyy = _require_spd(-_require_square(hyy, "Hyy"), "-Hyy")
    hxy = np.asarray(hxy, dtype=float)
    hyx = np.asarray(hyx, dtype=float)
    gxx = hxx + hxy @ np.linalg.solve(neg_hyy, hyx)
    gyy = neg_hyy + hyx @ np.linalg.solve(hxx, hxy)
    return 0.5 * (gxx + gxx.T), 0.5 * (gyy + gyy.T)


def sigma_bar(hxx_star: Array, hxy_star: Array, hyy_star: Array,
              gxx_star: Array, gyy_star: Array) -> float:
    """Interaction strength at the saddle.

    Computed as the largest singular value of
    sqrt(Gxx) Hxx^-1 Hxy sqrt(Gyy)^-1, cross-checked against the
    algebraically equal form sqrt(Gxx)^-1 Hxy (-Hyy)^-1 sqrt(Gyy); the two
    must agree within 1e-10.
    """
    hxx = _require_spd(hxx_star, "Hxx")
    neg_hyy = _require_spd(-_require_square(hyy_star, "Hyy"), "-Hyy")
    hxy = np.asarray(hxy_star, dtype=float)
    rx = spd_sqrt(gxx_star)
    ry = spd_sqrt(gyy_star)
    m1 = rx @ np.linalg.solve(hxx, hxy) @ np.linalg.inv(ry)
    m2 = np.linalg.solve(rx, hxy @ np.linalg.solve(neg_hyy, ry))
    s1 = float(np.linalg.svd(m1, compute_uv=False)[0])
    s2 = float(np.linalg.svd(m2, compute_uv=False)[0])
    if abs(s1 - s2) > 1e-10 * max(1.0, s1):
        raise ArithmeticError(
            f"sigma_bar formulations disagree: {s1!r} vs {s2!r}")
    return s1


def eta_bar_global(sigma_bar: float, eps_bar: float, delta: float) -> float:
    """Step-size threshold 2(1-(e+d)) / (1 + sigma^2 - (e+d)^2).

    Raises when eps_bar + delta >= 1: no convergence guarantee exists there.
    """
    if sigma_bar < 0:
        raise ValueError("sigma_bar must be nonnegative")
    if eps_bar < 0 or delta < 0:
        raise ValueError("eps_bar and delta must be nonnegative")
    ed = eps_bar + delta
    if ed >= 1.0:
        raise ValueError(
            f"no convergence guarantee: eps_bar + delta = {ed} >= 1")
    return 2.0 * (1.0 - ed) / (1.0 + sigma_bar**2 - ed**2)


def eta_bar_local(sigma_bar: float, eps_bar: float) -> float:
    """Step-size threshold near the saddle, where the drift term vanishes."""
    return eta_bar_global(sigma_bar, eps_bar, 0.0)


def gamma_bar(eta: float, sigma_bar: float, eps_bar_plus_delta: float) -> float:
    """Per-step rate bound sqrt((1-eta)^2 + eta^2 sigma^2) + eta (e+d).

    Defined for any eta > 0 so that the whole interval (0, eta_bar) can be
    scanned even when eta_bar exceeds 1.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if sigma_bar < 0 or eps_bar_plus_delta < 0:
        raise ValueError("sigma_bar and eps_bar_plus_delta must be nonnegative")
    return math.sqrt((1.0 - eta) ** 2 + eta * eta * sigma_bar**2) + eta * eps_bar_plus_delta


def eta_star_gamma_star(sigma_bar: float, eps_bar: float) -> tuple[float, float]:
    """Rate-optimal step size and its rate, in closed form.

    eta_star = (1 - sqrt(sigma^2 e^2 / A)) / (1 + sigma^2) with
    A = 1 - e^2 + sigma^2, and gamma_bar_star = gamma_bar(eta_star), which
    simplifies to (sigma (1 + sigma^2) + e (sqrt(A) - e sigma)) /
    ((1 + sigma^2) sqrt(A)).  At e = 0 these reduce to 1/(1 + sigma^2) and
    sigma / sqrt(1 + sigma^2); as e -> 1 the rate tends to 1.
    """
    if sigma_bar < 0:
        raise ValueError("sigma_bar must be nonnegative")
    if not 0.0 <= eps_bar < 1.0:
        raise ValueError("eps_bar must lie in [0, 1)")
    s2 = sigma_bar**2
    a = 1.0 - eps_bar**2 + s2
    root_a = math.sqrt(a)
    eta_star = (1.0 - math.sqrt(s2 * eps_bar**2 / a)) / (1.0 + s2)
    gamma_star = (sigma_bar * (1.0 + s2) + eps_bar * (root_a - eps_bar * sigma_bar)) / (
        (1.0 + s2) * root_a)
    return eta_star, gamma_star


def g_tilde(x: Array, y: Array, x_star: Array, y_star: Array,
            gxx_star: Array, gyy_star: Array) -> float:
    """Local quadratic gap |x - x*|^2_Gxx / 2 + |y - y*|^2_Gyy / 2."""
    dx = np.asarray(x, dtype=float) - np.asarray(x_star, dtype=float)
    dy = np.asarray(y, dtype=float) - np.asarray(y_star, dtype=float)
    gxx = _require_square(gxx_star, "Gxx")
    gyy = _require_square(gyy_star, "Gyy")
    if dx.shape != (gxx.shape[0],) or dy.shape != (gyy.shape[0],):
        raise ValueError("point dimensions do not match the curvature blocks")
    with np.errstate(over="ignore", invalid="ignore"):
        # inf on a diverged iterate is meaningful: the target is never met
        return float(0.5 * (dx @ gxx @ dx) + 0.5 * (dy @ gyy @ dy))


def fd_hessian_blocks(problem: ProblemDef, x: Array, y: Array,
                      step: float = 1e-4) -> tuple[Array, Array, Array, Array]:
    """Hessian blocks by central finite differences.

    Differences the analytic gradient when the problem has one, otherwise
    uses second differences of the payoff.  The full matrix is symmetrized,
    so the returned Hxy equals the transpose of the returned Hyx exactly.
    """
    m, n = problem.m, problem.n
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = m + n

    def split(z):
        return z[:m], z[m:]

    z0 = np.concatenate([x, y])
    h = np.empty((d, d))
    if problem.grad is not None:
        def g(z):
            gx, gy = problem.grad(*split(z))
            return np.concatenate([gx, gy])

        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            h[:, j] = (g(z0 + e) - g(z0 - e)) / (2.0 * step)
    else:
        def f(z):
            return problem.eval(*split(z))

        for i in range(d):
            for j in range(i, d):
                ei = np.zeros(d)
                ej = np.zeros(d)
                ei[i] = step
                ej[j] = step
                val = (f(z0 + ei + ej) - f(z0 + ei - ej)
                       - f(z0 - ei + ej) + f(z0 - ei - ej)) / (4.0 * step * step)
                h[i, j] = val
                h[j, i] = val
    h = 0.5 * (h + h.T)
    return h[:m, :m], h[:m, m:], h[m:, :m], h[m:, m:]


def _saddle_blocks(problem: ProblemDef):
    if problem.known_saddle is None:
        raise ValueError(f"problem {problem.name!r} has no known saddle point")
    xs, ys = problem.known_saddle
    if problem.hessian_blocks is not None:
        return problem.hessian_blocks(xs, ys)
    return fd_hessian_blocks(problem, xs, ys)


def delta_bound(problem: ProblemDef, sample_points: Sequence[tuple[Array, Array]]) -> float:
    """Empirical bound on the best-response drift over sample points.

    For each sampled (x, y) the local best-response slopes
    Hxx(x,y)^-1 Hxy(x,y) and Hyy(x,y)^-1 Hyx(x,y) are compared with their
    saddle values, whitened by the saddle curvature, and the largest
    singular value seen is returned.  Zero for quadratic problems; for f2
    with strong coupling it exceeds 1 on a modest grid around the origin.
    """
    if problem.hessian_blocks is None and problem.grad is None and problem.eval is None:
        raise ValueError("problem exposes no way to compute Hessian blocks")
    hxx_s, hxy_s, hyx_s, hyy_s = _saddle_blocks(problem)
    gxx, gyy = g_matrices(hxx_s, hxy_s, hyx_s, hyy_s)
    rx = spd_sqrt(gxx)
    ry = spd_sqrt(gyy)
    rx_inv = np.linalg.inv(rx)
    ry_inv = np.linalg.inv(ry)
    base_xy = np.linalg.solve(hxx_s, hxy_s)
    base_yx = np.linalg.solve(hyy_s, hyx_s)

    def blocks_at(x, y):
        if problem.hessian_blocks is not None:
            return problem.hessian_blocks(x, y)
        return fd_hessian_blocks(problem, x, y)

    worst = 0.0
    for x, y in sample_points:
        hxx, hxy, hyx, hyy = blocks_at(np.asarray(x, float), np.asarray(y, float))
        d_xy = np.linalg.solve(hxx, hxy) - base_xy
        d_yx = np.linalg.solve(hyy, hyx) - base_yx
        s1 = np.linalg.svd(rx @ d_xy @ ry_inv, compute_uv=False)[0]
        s2 = np.linalg.svd(ry @ d_yx @ rx_inv, compute_uv=False)[0]
        worst = max(worst, float(s1), float(s2))
    return worst


@dataclass(frozen=True)
class TheoryConstants:
    """Rate constants of a problem instance at its saddle.

    ``eta_bar`` is the local threshold (drift ignored); ``eta_bar_global``
    additionally accounts for the drift delta and is None when
    eps_bar + delta >= 1, in which case no guarantee exists.
    """

    gxx_star: Array
    gyy_star: Array
    sigma_bar: float
    eps_bar: float
    delta: float
    eta_bar: float
    eta_bar_global: Optional[float]
    eta_star: float
    gamma_bar_star: float


def constants_for(problem: ProblemDef, eps_bar: float = 0.0,
                  delta: float = 0.0) -> TheoryConstants:
    """Assemble TheoryConstants from a problem's saddle Hessian blocks.

    Falls back to finite differences when the problem lacks analytic
    blocks; requires a known saddle point either way.
    """
    hxx, hxy, hyx, hyy = _saddle_blocks(problem)
    gxx, gyy = g_matrices(hxx, hxy, hyx, hyy)
    sb = sigma_bar(hxx, hxy, hyy, gxx, gyy)
    local = eta_bar_local(sb, eps_bar)
    try:
        global_ = eta_bar_global(sb, eps_bar, delta)
    except ValueError:
        global_ = None
    eta_s, gamma_s = eta_star_gamma_star(sb, eps_bar)
    return TheoryConstants(
        gxx_star=gxx,
        gyy_star=gyy,
        sigma_bar=sb,
        eps_bar=float(eps_bar),
        delta=float(delta),
        eta_bar=local,
        eta_bar_global=global_,
        eta_star=eta_s,
        gamma_bar_star=gamma_s,
    )
