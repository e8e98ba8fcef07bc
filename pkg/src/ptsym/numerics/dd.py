"""Double-double arithmetic on pairs of floats (hi, lo) with value hi + lo.

Error-free transformations after Dekker and Knuth; all helpers are
numba-jitable and return plain tuples. Relative precision is about 1e-32.
No fused multiply-add is assumed.
"""
from __future__ import annotations

from fractions import Fraction

from numba.extending import register_jitable

__all__ = [
    "two_sum",
    "quick_two_sum",
    "two_prod",
    "dd_add",
    "dd_add_d",
    "dd_mul",
    "dd_mul_d",
    "dd_div",
    "dd_sqrt",
    "cdd_mul",
    "cdd_div",
    "dd_from_fraction",
]

_SPLIT = 134217729.0  # 2**27 + 1


@register_jitable
def two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@register_jitable
def quick_two_sum(a, b):
    # requires |a| >= |b| or a == 0
    s = a + b
    return s, b - (s - a)


@register_jitable
def two_prod(a, b):
    p = a * b
    c = _SPLIT * a
    ah = c - (c - a)
    al = a - ah
    c = _SPLIT * b
    bh = c - (c - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@register_jitable
def dd_add(ah, al, bh, bl):
    s, e = two_sum(ah, bh)
    t, f = two_sum(al, bl)
    e += t
    s, e = quick_two_sum(s, e)
    e += f
    return quick_two_sum(s, e)


@register_jitable
def dd_add_d(ah, al, b):
    s, e = two_sum(ah, b)
    e += al
    return quick_two_sum(s, e)


@register_jitable
def dd_mul(ah, al, bh, bl):
    p, e = two_prod(ah, bh)
    e += ah * bl + al * bh
    return quick_two_sum(p, e)


@register_jitable
def dd_mul_d(ah, al, b):
    p, e = two_prod(ah, b)
    e += al * b
    return quick_two_sum(p, e)


@register_jitable
def dd_div(ah, al, bh, bl):
    q1 = ah / bh
    ph, pl = dd_mul_d(bh, bl, q1)
    rh, rl = dd_add(ah, al, -ph, -pl)
    q2 = rh / bh
    ph, pl = dd_mul_d(bh, bl, q2)
    rh, rl = dd_add(rh, rl, -ph, -pl)
    q3 = rh / bh
    q1, q2 = quick_two_sum(q1, q2)
    return dd_add_d(q1, q2, q3)


@register_jitable
def dd_sqrt(ah, al):
    if ah <= 0.0:
        return 0.0, 0.0
    x = 1.0 / ah ** 0.5
    ax = ah * x
    sh, sl = two_prod(ax, ax)
    dh, dl = dd_add(ah, al, -sh, -sl)
    return two_sum(ax, dh * (0.5 * x))


@register_jitable
def cdd_mul(arh, arl, aih, ail, brh, brl, bih, bil):
    """(ar + i ai)(br + i bi) with each part double-double."""
    p1h, p1l = dd_mul(arh, arl, brh, brl)
    p2h, p2l = dd_mul(aih, ail, bih, bil)
    p3h, p3l = dd_mul(arh, arl, bih, bil)
    p4h, p4l = dd_mul(aih, ail, brh, brl)
    rh, rl = dd_add(p1h, p1l, -p2h, -p2l)
    ih, il = dd_add(p3h, p3l, p4h, p4l)
    return rh, rl, ih, il


@register_jitable
def cdd_div(arh, arl, aih, ail, brh, brl, bih, bil):
    nh, nl = dd_mul(brh, brl, brh, brl)
    mh, ml = dd_mul(bih, bil, bih, bil)
    nh, nl = dd_add(nh, nl, mh, ml)
    rh, rl, ih, il = cdd_mul(arh, arl, aih, ail, brh, brl, -bih, -bil)
    rh, rl = dd_div(rh, rl, nh, nl)
    ih, il = dd_div(ih, il, nh, nl)
    return rh, rl, ih, il


def dd_from_fraction(q) -> tuple[float, float]:
    """Nearest double-double to an exact rational."""
    q = Fraction(q)
    hi = float(q)
    return hi, float(q - Fraction(hi))
