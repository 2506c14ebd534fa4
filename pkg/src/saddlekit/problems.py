"""Saddle-point problem definitions.

A problem is a payoff f(x, y) that one player minimizes over x while the
other maximizes over y.  The record carries whatever analytic structure a
problem has (gradients, Hessian blocks, closed-form best responses, a known
saddle point, box bounds); downstream code consults only the pieces that are
present.

Three benchmark families ship with the package:

* ``f1`` -- strongly convex-concave quadratic with bilinear coupling of
  strength b.  Everything about it is closed form.
* ``f2`` -- f1 plus Gaussian bumps at the origin.  Still convex-concave with
  a saddle at the origin, but the best responses are transcendental and the
  interaction term, relative to the saddle curvature, changes with position.
* ``f3`` -- a one-dimensional polynomial whose critical points include one
  strict saddle and two non-saddle traps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

GradFn = Callable[[Array, Array], tuple[Array, Array]]
HessFn = Callable[[Array, Array], tuple[Array, Array, Array, Array]]


def _readonly(a: Array) -> Array:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProblemDef:
    """A min-max problem: minimize over x, maximize over y.

    Attributes
    ----------
    name : str
        Identifier used in summaries and CSV rows.
    m, n : int
        Dimensions of x and y.
    eval : callable
        ``eval(x, y) -> float``, the payoff.
    grad : callable, optional
        ``grad(x, y) -> (gx, gy)``.
    hessian_blocks : callable, optional
        ``hessian_blocks(x, y) -> (Hxx, Hxy, Hyx, Hyy)``.
    known_saddle : (x*, y*), optional
        The saddle point when known analytically.
    exact_argmin_x : callable, optional
        ``exact_argmin_x(y) -> argmin_x f(x, y)`` when closed form exists.
    exact_argmax_y : callable, optional
        ``exact_argmax_y(x) -> argmax_y f(x, y)`` when closed form exists.
    bounds : (lo, hi), optional
        Per-coordinate box over the concatenated (x, y) vector, length m + n.
        Oracles consult it only when present.

    Treat instances as immutable; stored arrays are marked read-only.
    """

    name: str
    m: int
    n: int
    eval: Callable[[Array, Array], float]
    grad: Optional[GradFn] = None
    hessian_blocks: Optional[HessFn] = None
    known_saddle: Optional[tuple[Array, Array]] = None
    exact_argmin_x: Optional[Callable[[Array], Array]] = None
    exact_argmax_y: Optional[Callable[[Array], Array]] = None
    bounds: Optional[tuple[Array, Array]] = None

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("dimensions m and n must be at least 1")
        if self.known_saddle is not None:
            xs, ys = self.known_saddle
            if xs.shape != (self.m,) or ys.shape != (self.n,):
                raise ValueError("known_saddle has the wrong shape")
        if self.bounds is not None:
            lo, hi = self.bounds
            if lo.shape != (self.m + self.n,) or hi.shape != (self.m + self.n,):
                raise ValueError("bounds must cover the concatenated (x, y) vector")
            if np.any(lo >= hi):
                raise ValueError("box requires lo < hi in every coordinate")


def mirror_to_box(z, lo, hi):
    """Map z into [lo, hi] coordinate-wise by reflection at the box walls.

    Each coordinate is rescaled to the unit interval, folded by
    ``u -> 1 - |mod(u, 2) - 1|`` (with nonnegative modulo), and rescaled
    back.  In-box coordinates pass through unchanged, and the map is
    idempotent: applying it twice gives exactly the same point.
    """
    z = np.asarray(z, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), z.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), z.shape)
    if np.any(lo >= hi):
        raise ValueError("box requires lo < hi in every coordinate")
    width = hi - lo
    u = (z - lo) / width
    u = 1.0 - np.abs(np.mod(u, 2.0) - 1.0)
    out = np.clip(lo + u * width, lo, hi)
    inside = (z >= lo) & (z <= hi)
    return np.where(inside, z, out)


def _check_mn(m, n):
    if int(m) != m or int(n) != n or m < 1 or n < 1:
        raise ValueError("dimensions m and n must be positive integers")
    return int(m), int(n)


def make_f1(m: int, n: int, b: float) -> ProblemDef:
    """Bilinear-coupled quadratic: f(x, y) = |x|^2/2 + b x.y - |y|^2/2.

    Requires m == n.  The saddle is the origin, the best responses are
    x(y) = -b y and y(x) = b x, and the duality gap has the closed form
    (1 + b^2)(|x|^2 + |y|^2)/2.
    """
    m, n = _check_mn(m, n)
    if m != n:
        raise ValueError(f"f1 needs m == n for the bilinear term, got m={m}, n={n}")
    b = float(b)
    if b <= 0:
        raise ValueError("coupling strength b must be positive")

    def evaluate(x, y):
        return float(0.5 * (x @ x) + b * (x @ y) - 0.5 * (y @ y))

    def gradient(x, y):
        return x + b * y, b * x - y

    def hessian(x, y):
        eye = np.eye(m)
        return eye, b * np.eye(m), b * np.eye(m), -np.eye(n)

    return ProblemDef(
        name="f1",
        m=m,
        n=n,
        eval=evaluate,
        grad=gradient,
        hessian_blocks=hessian,
        known_saddle=(_readonly(np.zeros(m)), _readonly(np.zeros(n))),
        exact_argmin_x=lambda y: -b * y,
        exact_argmax_y=lambda x: b * x,
    )


def make_f2(m: int, n: int, b: float) -> ProblemDef:
    """f1 plus Gaussian bumps: f1(x, y) - exp(-|x|^2/2) + exp(-|y|^2/2).

    Still convex-concave with the saddle at the origin, where the bumps
    double the curvature (Hxx = 2I, Hyy = -2I).  No closed-form best
    responses exist, so only iterative oracles apply.
    """
    m, n = _check_mn(m, n)
    if m != n:
        raise ValueError(f"f2 needs m == n for the bilinear term, got m={m}, n={n}")
    b = float(b)
    if b <= 0:
        raise ValueError("coupling strength b must be positive")

    def evaluate(x, y):
        sx = x @ x
        sy = y @ y
        return float(0.5 * sx + b * (x @ y) - 0.5 * sy - np.exp(-0.5 * sx) + np.exp(-0.5 * sy))

    def gradient(x, y):
        ex = np.exp(-0.5 * (x @ x))
        ey = np.exp(-0.5 * (y @ y))
        return x * (1.0 + ex) + b * y, b * x - y * (1.0 + ey)

    def hessian(x, y):
        ex = np.exp(-0.5 * (x @ x))
        ey = np.exp(-0.5 * (y @ y))
        hxx = np.eye(m) + ex * (np.eye(m) - np.outer(x, x))
        hyy = -np.eye(n) - ey * (np.eye(n) - np.outer(y, y))
        return hxx, b * np.eye(m), b * np.eye(m), hyy

    return ProblemDef(
        name="f2",
        m=m,
        n=n,
        eval=evaluate,
        grad=gradient,
        hessian_blocks=hessian,
        known_saddle=(_readonly(np.zeros(m)), _readonly(np.zeros(n))),
    )


_F3_SADDLE_Y = 2.0 + math.sqrt(2.0)


def make_f3() -> ProblemDef:
    """One-dimensional polynomial with a strict saddle and two traps.

    f(x, y) = 2x^2 + 4xy + y^2 + (4/3)y^3 - y^4/4.  Critical points sit at
    (0, 0), (-2-sqrt(2), 2+sqrt(2)) and (-2+sqrt(2), 2-sqrt(2)); only the
    middle one is a strict saddle (Hxx = 4 > 0, Hyy = -4 sqrt(2) < 0).
    The x best response is closed form (x(y) = -y); the y subproblem is a
    quartic with no closed-form maximizer.
    """

    def evaluate(x, y):
        xv = float(x[0])
        yv = float(y[0])
        return 2.0 * xv * xv + 4.0 * xv * yv + yv * yv + (4.0 / 3.0) * yv**3 - 0.25 * yv**4

    def gradient(x, y):
        xv = float(x[0])
        yv = float(y[0])
        gx = 4.0 * xv + 4.0 * yv
        gy = 4.0 * xv + 2.0 * yv + 4.0 * yv * yv - yv**3
        return np.array([gx]), np.array([gy])

    def hessian(x, y):
        yv = float(y[0])
        return (
            np.array([[4.0]]),
            np.array([[4.0]]),
            np.array([[4.0]]),
            np.array([[2.0 + 8.0 * yv - 3.0 * yv * yv]]),
        )

    return ProblemDef(
        name="f3",
        m=1,
        n=1,
        eval=evaluate,
        grad=gradient,
        hessian_blocks=hessian,
        known_saddle=(_readonly(np.array([-_F3_SADDLE_Y])), _readonly(np.array([_F3_SADDLE_Y]))),
        exact_argmin_x=lambda y: -np.asarray(y, dtype=float),
    )


def f3_critical_points():
    """The three critical points of f3 as (x, y) pairs; index 1 is the saddle."""
    r = math.sqrt(2.0)
    return (
        (np.array([0.0]), np.array([0.0])),
        (np.array([-2.0 - r]), np.array([2.0 + r])),
        (np.array([-2.0 + r]), np.array([2.0 - r])),
    )


_REGISTRY: dict[str, Callable[..., ProblemDef]] = {}


def register_problem(name: str, factory: Callable[..., ProblemDef]) -> None:
    """Register a custom problem factory under a CLI-visible name."""
    if name in ("f1", "f2", "f3"):
        raise ValueError(f"{name} is a built-in problem name")
    _REGISTRY[name] = factory


def get_problem(name: str, m: int | None = None, n: int | None = None,
                b: float | None = None) -> ProblemDef:
    """Instantiate a problem by name.

    f1 and f2 require m, n and b; f3 is fixed at m = n = 1 and takes no b.
    Custom names resolve through the registry and receive whatever of
    (m, n, b) were given, as keyword arguments.
    """
    if name == "f1" or name == "f2":
        if m is None or n is None or b is None:
            raise ValueError(f"{name} requires m, n and b")
        return make_f1(m, n, b) if name == "f1" else make_f2(m, n, b)
    if name == "f3":
        if (m not in (None, 1)) or (n not in (None, 1)):
            raise ValueError("f3 is one-dimensional; m and n must be 1 if given")
        if b is not None:
            raise ValueError("f3 takes no coupling strength b")
        return make_f3()
    if name in _REGISTRY:
        kwargs = {}
        if m is not None:
            kwargs["m"] = m
        if n is not None:
            kwargs["n"] = n
        if b is not None:
            kwargs["b"] = b
        return _REGISTRY[name](**kwargs)
    raise ValueError(f"unknown problem {name!r}")
