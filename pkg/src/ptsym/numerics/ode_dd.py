"""Dormand-Prince 5(4) carried out entirely in double-double arithmetic.

For real state vectors whose invariants must hold far beyond double
precision, e.g. an energy of order 1 on an orbit where the kinetic and
potential terms individually reach 1e9. The state, every stage and the
tableau are double-double; only the step-size controller works in double.

The state is a ``(2, m)`` float64 array: row 0 the high words, row 1 the
low words. Right-hand sides map such an array to another one and are
expected to evaluate in double-double themselves (see :mod:`.dd`).
"""
from __future__ import annotations

from fractions import Fraction as _F

import numba
import numpy as np
from numba import types
from numba.extending import register_jitable

from .dd import dd_add, dd_from_fraction, dd_mul, dd_mul_d, two_sum
from .ode import (
    STATUS_MAX_STEPS,
    STATUS_NONFINITE,
    STATUS_UNDERFLOW,
    EventHit,
    Events,
    MaxStepsExceededError,
    NonFiniteStateError,
    StepControl,
    StepUnderflowError,
    Trail,
)

__all__ = [
    "DD_RHS_SIG",
    "DD_EVENT_SIG",
    "DD_STOP_SIG",
    "jit_dd_rhs",
    "jit_dd_event",
    "jit_dd_stop",
    "integrate_adaptive_dd",
]

DD_RHS_SIG = types.float64[:, ::1](types.float64, types.float64[:, ::1], types.float64[::1])
DD_EVENT_SIG = types.float64[::1](types.float64, types.float64[:, ::1], types.float64[::1])
DD_STOP_SIG = types.boolean(types.float64, types.float64[:, ::1], types.float64[::1], types.int64)

jit_dd_rhs = numba.njit(DD_RHS_SIG, cache=True)
jit_dd_event = numba.njit(DD_EVENT_SIG, cache=True)
jit_dd_stop = numba.njit(DD_STOP_SIG, cache=True)


def _table(rows):
    out = np.zeros((len(rows), 7, 2))
    for i, row in enumerate(rows):
        for j, q in enumerate(row):
            out[i, j] = dd_from_fraction(q)
    return out


_C = np.array([float(_F(c)) for c in ("0", "1/5", "3/10", "4/5", "8/9", "1", "1")])
_A = _table([
    [],
    ["1/5"],
    ["3/40", "9/40"],
    ["44/45", "-56/15", "32/9"],
    ["19372/6561", "-25360/2187", "64448/6561", "-212/729"],
    ["9017/3168", "-355/33", "46732/5247", "49/176", "-5103/18656"],
])
_B = _table([["35/384", "0", "500/1113", "125/192", "-2187/6784", "11/84"]])[0]
_E = _table([["71/57600", "0", "-71/16695", "71/1920", "-17253/339200", "22/525", "-1/40"]])[0]


def _no_events(t, y, args):
    return np.zeros(0)


def _never_stop(t, y, args, k):
    return False


_no_events_jit = jit_dd_event(_no_events)
_never_stop_jit = jit_dd_stop(_never_stop)


@register_jitable
def _combine(Y, Ks, coef, ns, h):
    """Y + h * sum_j coef[j] K_j, all in double-double."""
    m = Y.shape[1]
    Z = np.empty((2, m))
    for i in range(m):
        sh = 0.0
        sl = 0.0
        for j in range(ns):
            if coef[j, 0] == 0.0:
                continue
            ph, pl = dd_mul(coef[j, 0], coef[j, 1], Ks[j, 0, i], Ks[j, 1, i])
            sh, sl = dd_add(sh, sl, ph, pl)
        sh, sl = dd_mul_d(sh, sl, h)
        Z[0, i], Z[1, i] = dd_add(Y[0, i], Y[1, i], sh, sl)
    return Z


@register_jitable
def _dd_step(rhs, t, Y, h, K1, args, Ks):
    """One step; stage derivatives are left in ``Ks`` (Ks[6] at the new point)."""
    Ks[0, :, :] = K1
    for s in range(1, 6):
        Z = _combine(Y, Ks, _A[s], s, h)
        Ks[s, :, :] = rhs(t + _C[s] * h, Z, args)
    Y_new = _combine(Y, Ks, _B, 6, h)
    Ks[6, :, :] = rhs(t + h, Y_new, args)
    m = Y.shape[1]
    err = np.empty(m)
    for i in range(m):
        sh = 0.0
        sl = 0.0
        for j in range(7):
            if _E[j, 0] == 0.0:
                continue
            ph, pl = dd_mul(_E[j, 0], _E[j, 1], Ks[j, 0, i], Ks[j, 1, i])
            sh, sl = dd_add(sh, sl, ph, pl)
        err[i] = (sh + sl) * h
    return Y_new, err


@register_jitable
def _err_norm(err, Y, Y_new, rtol, atol):
    worst = 0.0
    for i in range(err.shape[0]):
        scale = atol + rtol * max(abs(Y[0, i]), abs(Y_new[0, i]))
        r = abs(err[i]) / scale
        if r > worst:
            worst = r
    return worst


@register_jitable
def _finite(Y):
    for i in range(Y.shape[1]):
        if not (np.isfinite(Y[0, i]) and np.isfinite(Y[1, i])):
            return False
    return True


@register_jitable
def _crossed(g0, g1, d):
    if d >= 0 and g0 < 0.0 and g1 >= 0.0:
        return True
    if d <= 0 and g0 > 0.0 and g1 <= 0.0:
        return True
    return False


@register_jitable
def _locate(rhs, gfun, k, t, Y, K1, hsigned, g0, g1, tol_t, args, scratch):
    # Illinois false position on the substep length
    a, b = 0.0, hsigned
    ga, gb = g0, g1
    side = 0
    for _ in range(100):
        if abs(b - a) <= tol_t:
            break
        s = b - gb * (b - a) / (gb - ga)
        if not (min(a, b) < s < max(a, b)):
            s = 0.5 * (a + b)
        Zs, _e = _dd_step(rhs, t, Y, s, K1, args, scratch)
        gs = gfun(t + s, Zs, args)[k]
        if gs == 0.0:
            a = b = s
            break
        if (gs < 0.0) == (gb < 0.0):
            b, gb = s, gs
            if side == -1:
                ga *= 0.5
            side = -1
        else:
            a, ga = s, gs
            if side == 1:
                gb *= 0.5
            side = 1
    Zb, _e = _dd_step(rhs, t, Y, b, K1, args, scratch)
    return b, Zb


def _integrate_dd_core(rhs, gfun, stopfun, Y0, t0, t1, args, direction,
                       rtol, atol, h0, hmin, hmax, max_steps, record):
    m = Y0.shape[1]
    sgn = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    cap = 1024 if record else 2
    ts = np.empty(cap)
    yh = np.empty((cap, m))
    yl = np.empty((cap, m))
    ts[0] = t0
    yh[0, :] = Y0[0]
    yl[0, :] = Y0[1]
    count = 1
    ev_cap = 16
    ev_t = np.empty(ev_cap)
    ev_y = np.empty((ev_cap, 2, m))
    ev_k = np.empty(ev_cap, dtype=np.int64)
    n_ev = 0
    n_acc = 0
    n_rej = 0
    n_rhs = 0

    Ks = np.zeros((7, 2, m))
    scratch = np.zeros((7, 2, m))
    t = t0
    t_lo = 0.0
    Y = Y0.copy()
    K1 = rhs(t, Y, args)
    n_rhs += 1
    g_old = gfun(t, Y, args)
    n_events = g_old.shape[0]

    h = h0
    if h <= 0.0:
        d0 = 0.0
        d1 = 0.0
        for i in range(m):
            sc = atol + rtol * abs(Y[0, i])
            d0 = max(d0, abs(Y[0, i]) / sc)
            d1 = max(d1, abs(K1[0, i]) / sc)
        if d0 < 1e-5 or d1 < 1e-5:
            h = 1e-6
        else:
            h = 0.01 * d0 / d1
        h = min(h, 0.1 * span)
    h = min(max(h, hmin), hmax)

    err_prev = 1e-4
    status = 0
    rejected_last = False
    while True:
        # time is double-double too; a rounded final step would shift the endpoint
        remaining = abs((t1 - t) - t_lo)
        if remaining <= 1e-14 * max(1.0, abs(t1)):
            break
        if n_acc >= max_steps:
            status = 3
            break
        last = False
        if h >= remaining:
            h = remaining
            last = True
        Y_new, err = _dd_step(rhs, t, Y, sgn * h, K1, args, Ks)
        n_rhs += 6
        if not _finite(Y_new):
            if h <= hmin:
                status = 4
                break
            h = max(0.25 * h, hmin)
            n_rej += 1
            rejected_last = True
            continue
        en = _err_norm(err, Y, Y_new, rtol, atol)
        if en > 1.0:
            n_rej += 1
            if h <= hmin:
                status = 2
                break
            h = max(h * max(0.2, 0.9 * en ** -0.2), hmin)
            rejected_last = True
            continue

        K7 = Ks[6].copy()
        t_new = t1 if last else t + sgn * h
        stop_here = False
        if n_events > 0:
            g_new = gfun(t_new, Y_new, args)
            while True:
                best = -1
                best_s = 0.0
                best_y = Y_new
                for k in range(n_events):
                    if _crossed(g_old[k], g_new[k], direction[k]):
                        tol_t = max(hmin, 4.0 * 2.2e-16 * max(abs(t), abs(t_new)))
                        se, Ze = _locate(rhs, gfun, k, t, Y, K1, sgn * h, g_old[k], g_new[k],
                                         tol_t, args, scratch)
                        if best < 0 or sgn * (se - best_s) < 0.0:
                            best = k
                            best_s = se
                            best_y = Ze
                if best < 0:
                    break
                if n_ev >= ev_cap:
                    ev_cap *= 2
                    et2 = np.empty(ev_cap)
                    ey2 = np.empty((ev_cap, 2, m))
                    ek2 = np.empty(ev_cap, dtype=np.int64)
                    et2[:n_ev] = ev_t[:n_ev]
                    ey2[:n_ev] = ev_y[:n_ev]
                    ek2[:n_ev] = ev_k[:n_ev]
                    ev_t = et2
                    ev_y = ey2
                    ev_k = ek2
                te = t + best_s + t_lo
                ev_t[n_ev] = te
                ev_y[n_ev] = best_y
                ev_k[n_ev] = best
                n_ev += 1
                if stopfun(te, best_y, args, best):
                    stop_here = True
                    t_new = te
                    Y_new = best_y
                    break
                g_old[best] = g_new[best]
            if not stop_here:
                g_old = g_new

        n_acc += 1
        Y = Y_new
        if stop_here:
            t = t_new
            t_lo = 0.0
            K1 = rhs(t, Y, args)
            n_rhs += 1
        else:
            if last:
                t = t1
                t_lo = 0.0
            else:
                t, t_lo = two_sum(t, sgn * h + t_lo)
            K1 = K7
        if record or stop_here:
            if count >= cap:
                cap *= 2
                ts2 = np.empty(cap)
                yh2 = np.empty((cap, m))
                yl2 = np.empty((cap, m))
                ts2[:count] = ts[:count]
                yh2[:count] = yh[:count]
                yl2[:count] = yl[:count]
                ts = ts2
                yh = yh2
                yl = yl2
            ts[count] = t
            yh[count, :] = Y[0]
            yl[count, :] = Y[1]
            count += 1
        if stop_here:
            status = 1
            break

        en = max(en, 1e-10)
        fac = min(5.0, max(0.2, 0.9 * en ** -0.14 * err_prev ** 0.08))
        if rejected_last:
            fac = min(fac, 1.0)
        rejected_last = False
        err_prev = en
        h = min(max(h * fac, hmin), hmax)

    if not record and not (count >= 2 and ts[count - 1] == t):
        ts[1] = t
        yh[1, :] = Y[0]
        yl[1, :] = Y[1]
        count = 2
    stats = np.array([n_acc, n_rej, n_rhs, 0], dtype=np.int64)
    return ts[:count], yh[:count], yl[:count], status, ev_t[:n_ev], ev_y[:n_ev], ev_k[:n_ev], stats


_CORE_SIG = (
    types.FunctionType(DD_RHS_SIG), types.FunctionType(DD_EVENT_SIG), types.FunctionType(DD_STOP_SIG),
    types.float64[:, ::1], types.float64, types.float64, types.float64[::1], types.int64[::1],
    types.float64, types.float64, types.float64, types.float64, types.float64, types.int64,
    types.boolean,
)
_core_jit = None


def _compiled_core():
    global _core_jit
    if _core_jit is None:
        _core_jit = numba.njit(_CORE_SIG, cache=True)(_integrate_dd_core)
    return _core_jit


def _is_jitted(f, sig) -> bool:
    return isinstance(f, numba.core.dispatcher.Dispatcher) and any(s == sig.args for s in f.signatures)


def integrate_adaptive_dd(rhs, y0, t0, t1, ctrl: StepControl | None = None,
                          events: Events | None = None, args=(), *, record: bool = True) -> Trail:
    """Double-double counterpart of :func:`integrate_adaptive` for real systems.

    ``y0`` is either a length-m vector (low words zero) or a ``(2, m)``
    hi/lo array. ``rhs(t, Y, args)`` and the event callbacks receive the
    ``(2, m)`` state. The returned trail holds the high words in ``y`` and
    the low words in ``y_lo``; event states are ``(2, m)`` arrays.

    Tolerances below 1e-16 are meaningful here: the error estimate is
    formed in double-double as well.
    """
    if t0 == t1:
        raise ValueError("t0 and t1 must differ")
    ctrl = ctrl or StepControl()
    Y0 = np.asarray(y0, dtype=np.float64)
    if Y0.ndim == 1:
        Y0 = np.vstack([Y0, np.zeros_like(Y0)])
    Y0 = np.ascontiguousarray(Y0)
    if Y0.ndim != 2 or Y0.shape[0] != 2:
        raise ValueError("y0 must be a vector or a (2, m) hi/lo array")
    args = np.ascontiguousarray(np.atleast_1d(np.asarray(args, dtype=np.float64)))
    if not np.all(np.isfinite(np.asarray(rhs(t0, Y0, args)))):
        raise ValueError("rhs is not finite at the initial state")

    if events is None:
        g, stop, direction = None, None, np.zeros(0, dtype=np.int64)
    else:
        g, stop = events.g, events.stop
        direction = np.asarray(events.direction, dtype=np.int64)
    use_jit = (_is_jitted(rhs, DD_RHS_SIG) and (g is None or _is_jitted(g, DD_EVENT_SIG))
               and (stop is None or _is_jitted(stop, DD_STOP_SIG)))
    if use_jit:
        core = _compiled_core()
        g = g if g is not None else _no_events_jit
        stop = stop if stop is not None else _never_stop_jit
    else:
        core = _integrate_dd_core
        g = g if g is not None else _no_events
        stop = stop if stop is not None else _never_stop

    ts, yh, yl, status, ev_t, ev_y, ev_k, stats = core(
        rhs, g, stop, Y0, float(t0), float(t1), args, direction,
        float(ctrl.rel_tol), float(ctrl.abs_tol), float(ctrl.initial_step),
        float(ctrl.min_step), float(ctrl.max_step), int(ctrl.max_steps), bool(record))
    hits = [EventHit(float(ev_t[i]), ev_y[i].copy(), int(ev_k[i])) for i in range(len(ev_t))]
    trail = Trail(t=ts.copy(), y=yh.copy(), status=int(status), events=hits,
                  n_accepted=int(stats[0]), n_rejected=int(stats[1]), n_rhs=int(stats[2]),
                  y_lo=yl.copy())
    if status == STATUS_UNDERFLOW:
        raise StepUnderflowError(f"step size underflow at t={trail.t_final:.6g}", trail)
    if status == STATUS_MAX_STEPS:
        raise MaxStepsExceededError(f"max_steps={ctrl.max_steps} exceeded at t={trail.t_final:.6g}", trail)
    if status == STATUS_NONFINITE:
        raise NonFiniteStateError(f"non-finite state near t={trail.t_final:.6g}", trail)
    return trail
