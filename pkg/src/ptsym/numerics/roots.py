"""Scalar root finders: bracketed real roots and complex secant/Newton."""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Callable

__all__ = [
    "RootBracket",
    "ComplexRoot",
    "InvalidBracketError",
    "RootNotConvergedError",
    "find_root_bracketed",
    "find_root_complex",
]


class InvalidBracketError(ValueError):
    pass


class RootNotConvergedError(RuntimeError):
    """Iteration cap or divergence; ``last`` is the final iterate."""

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


@dataclass(frozen=True)
class RootBracket:
    lo: float
    hi: float
    f_lo: float
    f_hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidBracketError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if not self.f_lo * self.f_hi < 0:
            raise InvalidBracketError(
                f"f does not change sign on [{self.lo}, {self.hi}] "
                f"(f_lo={self.f_lo:.3g}, f_hi={self.f_hi:.3g})")

    @classmethod
    def from_function(cls, f: Callable[[float], float], lo: float, hi: float) -> "RootBracket":
        return cls(lo, hi, f(lo), f(hi))


@dataclass(frozen=True)
class ComplexRoot:
    root: complex
    residual: float
    iterations: int


def find_root_bracketed(f: Callable[[float], float], bracket: RootBracket,
                        tol: float = 1e-12, maxiter: int = 200) -> float:
    """Brent's method: secant and inverse-quadratic steps guarded by bisection.

    Returns a point inside a final bracket of width at most ``tol``
    (plus a few ulps of the root).
    """
    a, b = bracket.lo, bracket.hi
    fa, fb = bracket.f_lo, bracket.f_hi
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    c, fc = a, fa
    d = e = b - a
    for _ in range(maxiter):
        if fb * fc > 0:
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol1 = 2.0 * 2.2e-16 * abs(b) + 0.5 * tol
        m = 0.5 * (c - b)
        if abs(m) <= tol1 or fb == 0.0:
            return b
        if abs(e) >= tol1 and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p = 2.0 * m * s
                q = 1.0 - s
            else:
                q = fa / fc
                r = fb / fc
                p = s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0:
                q = -q
            else:
                p = -p
            if 2.0 * p < min(3.0 * m * q - abs(tol1 * q), abs(e * q)):
                e, d = d, p / q
            else:
                d = e = m
        else:
            d = e = m
        a, fa = b, fb
        b += d if abs(d) > tol1 else math.copysign(tol1, m)
        fb = f(b)
    raise RootNotConvergedError(f"no convergence in {maxiter} iterations", last=b, residual=abs(fb))


def find_root_complex(f: Callable[[complex], complex], guess: complex, tol: float = 1e-10, *,
                      maxiter: int = 60, step: float | None = None,
                      max_jump: float | None = None,
                      max_dist: float | None = None) -> ComplexRoot:
    """Secant iteration in the complex plane, with a Newton fallback.

    The fallback uses a central finite-difference derivative whenever the
    secant denominator degenerates or the residual grows. Converged when
    ``|f(z)| <= tol``.

    ``max_jump`` caps the size of a single update and ``max_dist`` aborts
    once an iterate strays that far from ``guess``; both keep the iteration
    near the seed when ``f`` has many roots.
    """
    z0 = complex(guess)
    h = step if step is not None else 1e-4 * (1.0 + abs(z0))
    f0 = f(z0)
    if abs(f0) <= tol:
        return ComplexRoot(z0, abs(f0), 0)
    z1 = z0 + h
    f1 = f(z1)
    if abs(f1) > abs(f0):
        z0, z1, f0, f1 = z1, z0, f1, f0
    best_z, best_f = z1, f1
    for it in range(1, maxiter + 1):
        denom = f1 - f0
        if denom != 0 and cmath.isfinite(denom):
            dz = -f1 * (z1 - z0) / denom
        else:
            dz = complex("nan")
        if not cmath.isfinite(dz) or (it > 1 and abs(f1) > abs(f0)):
            hh = 1e-6 * (1.0 + abs(z1))
            deriv = (f(z1 + hh) - f(z1 - hh)) / (2 * hh)
            if deriv == 0 or not cmath.isfinite(deriv):
                raise RootNotConvergedError("zero derivative", last=best_z, residual=abs(best_f))
            dz = -f1 / deriv
        if max_jump is not None and abs(dz) > max_jump:
            dz *= max_jump / abs(dz)
        z2 = z1 + dz
        if max_dist is not None and abs(z2 - complex(guess)) > max_dist:
            raise RootNotConvergedError(
                f"iterate left the search disc of radius {max_dist:g}", last=best_z, residual=abs(best_f))
        f2 = f(z2)
        if not cmath.isfinite(f2):
            raise RootNotConvergedError("non-finite function value", last=best_z, residual=abs(best_f))
        if abs(f2) < abs(best_f):
            best_z, best_f = z2, f2
        if abs(f2) <= tol:
            return ComplexRoot(z2, abs(f2), it)
        if abs(dz) <= 4 * 2.2e-16 * max(1.0, abs(z2)):
            break
        z0, f0, z1, f1 = z1, f1, z2, f2
    raise RootNotConvergedError(
        f"no convergence (|f|={abs(best_f):.3g} at {best_z})", last=best_z, residual=abs(best_f))
