"""Stokes wedges and classical turning points of H = p^2 + x^2 (ix)^eps.

All angles are left unreduced: for non-integer eps they label points on a
multi-sheeted surface, and reducing modulo 2*pi would merge sheets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

__all__ = [
    "StokesWedge",
    "TurningPoint",
    "Transition",
    "wedge",
    "turning_point",
    "wedge_contains",
    "transition_epsilons",
    "wedge_transitions",
    "rational_epsilon",
    "sheet_count",
    "turning_point_count",
]


def _check_eps(epsilon):
    if not epsilon >= 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon!r}")


@dataclass(frozen=True)
class StokesWedge:
    K: int
    theta_lower: float
    theta_center: float
    theta_upper: float
    opening: float
    epsilon: float


@dataclass(frozen=True)
class TurningPoint:
    K: int
    theta: float
    x: complex
    epsilon: float

    @property
    def phase(self) -> float:
        """Unwrapped arg(ix) on the sheet where this point solves 1 + (ix)^(2+eps) = 0."""
        return self.theta + math.pi / 2


@dataclass(frozen=True)
class Transition:
    epsilon: float
    edge: str  # "upper" | "lower"
    kind: str  # "entry" | "exit"
    K_tp: int
    K_w: int
    exact: Fraction | None = None


def wedge(K: int, epsilon: float) -> StokesWedge:
    """The K-th Stokes wedge; angles straight from the closed forms, unreduced."""
    _check_eps(epsilon)
    d = 4.0 + epsilon
    lower = (4 * K + 1) * math.pi / d - math.pi / 2
    center = (4 * K + 2) * math.pi / d - math.pi / 2
    upper = (4 * K + 3) * math.pi / d - math.pi / 2
    return StokesWedge(K, lower, center, upper, 2 * math.pi / d, float(epsilon))


def turning_point(K: int, epsilon: float) -> TurningPoint:
    """Turning point of H = 1 labelled K: x = exp(i theta) on the unit circle."""
    _check_eps(epsilon)
    theta = (2 * K + 1) * math.pi / (2.0 + epsilon) - math.pi / 2
    return TurningPoint(K, theta, complex(math.cos(theta), math.sin(theta)), float(epsilon))


def wedge_contains(w: StokesWedge, theta: float) -> bool:
    """Strict interior test; edges count as outside."""
    return w.theta_lower < theta < w.theta_upper


def transition_epsilons(K_tp: int, K_w: int) -> list[Transition]:
    """Values of eps >= 0 where turning point K_tp crosses an edge of wedge K_w.

    Crossing of an edge with numerator c (4K_w+3 upper, 4K_w+1 lower)
    happens at eps = (4a - 2c)/(c - a), a = 2K_tp+1. Whether the turning
    point enters or leaves follows from the sign of its angular velocity in
    eps relative to the edge. c == a means the point approaches the edge
    only asymptotically and is not reported.
    """
    a = 2 * K_tp + 1
    out = []
    for edge, c in (("lower", 4 * K_w + 1), ("upper", 4 * K_w + 3)):
        if c == a:
            continue
        eps = Fraction(4 * a - 2 * c, c - a)
        if eps < 0:
            continue
        # d(theta)/d(eps) for turning point and edge, in units of pi
        rel = Fraction(-a) / (2 + eps) ** 2 + Fraction(c) / (4 + eps) ** 2
        if rel == 0:
            continue
        moving_up = rel > 0
        if edge == "upper":
            kind = "exit" if moving_up else "entry"
        else:
            kind = "entry" if moving_up else "exit"
        out.append(Transition(float(eps), edge, kind, K_tp, K_w, eps))
    out.sort(key=lambda tr: tr.exact)
    return out


def wedge_transitions(K_w: int, K_tp_range=None) -> list[Transition]:
    """All turning-point crossings of wedge K_w, sorted by eps.

    ``K_tp_range`` defaults to a window wide enough to hold every crossing:
    a crossing needs (4a - 2c)/(c - a) >= 0, i.e. ``a`` between c/2 and c.
    """
    if K_tp_range is None:
        K_tp_range = range(-2 * abs(K_w) - 3, 2 * abs(K_w) + 4)
    out = []
    for k in K_tp_range:
        out.extend(transition_epsilons(k, K_w))
    out.sort(key=lambda tr: (tr.exact, tr.K_tp))
    return out


def rational_epsilon(epsilon: float, max_denominator: int = 1000, tol: float = 1e-12) -> Fraction | None:
    """eps as p/q in lowest terms when it is (numerically) rational, else None."""
    frac = Fraction(epsilon).limit_denominator(max_denominator)
    if abs(float(frac) - epsilon) <= tol * max(1.0, abs(epsilon)):
        return frac
    return None


def sheet_count(epsilon: float, max_denominator: int = 1000) -> int | None:
    """Number of sheets (q for eps = p/q); None when eps looks irrational."""
    frac = rational_epsilon(epsilon, max_denominator)
    return None if frac is None else frac.denominator


def turning_point_count(epsilon: float, max_denominator: int = 1000) -> int | None:
    """Distinct turning points on the finite surface for rational eps = p/q.

    (ix)^(2+eps) = -1 over q sheets has 2q + p solutions.
    """
    frac = rational_epsilon(epsilon, max_denominator)
    if frac is None:
        return None
    return 2 * frac.denominator + frac.numerator
