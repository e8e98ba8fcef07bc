"""Adaptive Dormand-Prince 5(4) integration for complex-valued ODE systems.

The stepping loop is written once and executed in two modes: compiled with
numba when the right-hand side (and any event functions) are numba
dispatchers, or as plain Python otherwise. Both modes share the same
source, so results agree to rounding.

Right-hand sides have the signature ``rhs(t, y, args) -> dy`` where ``y``
is a complex128 array and ``args`` a float64 parameter vector. Functions
compiled with :data:`jit_rhs` (and :data:`jit_event`, :data:`jit_stop`)
take the compiled path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
from numba import types
from numba.extending import register_jitable

__all__ = [
    "StepControl",
    "Events",
    "Trail",
    "EventHit",
    "IntegrationError",
    "StepUnderflowError",
    "MaxStepsExceededError",
    "NonFiniteStateError",
    "integrate_adaptive",
    "dopri_step",
    "jit_rhs",
    "jit_event",
    "jit_stop",
    "jit_jvp",
]

# Dormand-Prince tableau
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# b - b_hat
_E1 = 71 / 57600
_E3 = -71 / 16695
_E4 = 71 / 1920
_E5 = -17253 / 339200
_E6 = 22 / 525
_E7 = -1 / 40

STATUS_DONE = 0
STATUS_STOPPED = 1
STATUS_UNDERFLOW = 2
STATUS_MAX_STEPS = 3
STATUS_NONFINITE = 4


@dataclass(frozen=True)
class StepControl:
    """Tolerances and step bounds for :func:`integrate_adaptive`.

    ``initial_step`` of 0 selects a starting step automatically.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    initial_step: float = 0.0
    min_step: float = 1e-14
    max_step: float = np.inf
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("rel_tol and abs_tol must be positive")
        if not (0 < self.min_step <= self.max_step):
            raise ValueError("need 0 < min_step <= max_step")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")
        if self.initial_step < 0:
            raise ValueError("initial_step must be >= 0")

    def scaled(self, factor: float) -> "StepControl":
        """Copy with both tolerances multiplied by ``factor``."""
        return StepControl(
            rel_tol=self.rel_tol * factor,
            abs_tol=self.abs_tol * factor,
            initial_step=self.initial_step,
            min_step=self.min_step,
            max_step=self.max_step,
            max_steps=self.max_steps,
        )


RHS_SIG = types.complex128[::1](types.float64, types.complex128[::1], types.float64[::1])
EVENT_SIG = types.float64[::1](types.float64, types.complex128[::1], types.float64[::1])
STOP_SIG = types.boolean(types.float64, types.complex128[::1], types.float64[::1], types.int64)
JVP_SIG = types.complex128[::1](types.float64, types.complex128[::1], types.complex128[::1],
                                types.float64[::1])

jit_rhs = numba.njit(RHS_SIG, cache=True)
"""Decorator compiling a right-hand side for the fast path."""
jit_event = numba.njit(EVENT_SIG, cache=True)
jit_stop = numba.njit(STOP_SIG, cache=True)
jit_jvp = numba.njit(JVP_SIG, cache=True)
"""Decorator for ``jvp(t, y, v, args) -> J(t, y) @ v``, the Jacobian-vector product."""


def _no_events(t, y, args):
    return np.zeros(0)


def _never_stop(t, y, args, k):
    return False


def _no_jvp(t, y, v, args):
    return np.zeros_like(y)


_no_events_jit = jit_event(_no_events)
_never_stop_jit = jit_stop(_never_stop)
_no_jvp_jit = jit_jvp(_no_jvp)


@dataclass(frozen=True)
class Events:
    """Zero-crossing events.

    ``g(t, y, args)`` returns one float per event. ``direction[k]`` selects
    crossings of event ``k``: +1 rising only, -1 falling only, 0 both.
    Each located crossing is recorded; ``stop(t, y, args, k)`` decides
    whether integration ends there.
    """

    g: Callable
    direction: tuple
    stop: Callable | None = None


@dataclass(frozen=True)
class EventHit:
    t: float
    y: np.ndarray
    index: int


@dataclass
class Trail:
    """Sampled solution of one integration run."""

    t: np.ndarray
    y: np.ndarray
    status: int
    events: list = field(default_factory=list)
    n_accepted: int = 0
    n_rejected: int = 0
    n_rhs: int = 0
    n_rescaled: int = 0
    # low-order words of the compensated state: y + y_lo is the double-double value
    y_lo: np.ndarray | None = None

    @property
    def t_final(self) -> float:
        return float(self.t[-1])

    @property
    def y_final(self) -> np.ndarray:
        return self.y[-1]

    @property
    def stopped_by_event(self) -> bool:
        return self.status == STATUS_STOPPED


class IntegrationError(RuntimeError):
    """Integration aborted; ``trail`` holds the partial solution."""

    def __init__(self, message, trail=None):
        super().__init__(message)
        self.trail = trail


class StepUnderflowError(IntegrationError):
    pass


class MaxStepsExceededError(IntegrationError):
    pass


class NonFiniteStateError(IntegrationError):
    pass


@register_jitable
def _dopri_step(rhs, t, y, h, k1, args):
    k2 = rhs(t + _C2 * h, y + h * (_A21 * k1), args)
    k3 = rhs(t + _C3 * h, y + h * (_A31 * k1 + _A32 * k2), args)
    k4 = rhs(t + _C4 * h, y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3), args)
    k5 = rhs(t + _C5 * h, y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4), args)
    k6 = rhs(t + h, y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5), args)
    y_new = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
    k7 = rhs(t + h, y_new, args)
    err = h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
    return y_new, err, k7


@register_jitable
def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@register_jitable
def _stage(rhs, jvp, use_jvp, t, y, lo, inc, args):
    # derivative at the double-double point y + lo + inc, to first order
    s, e = _two_sum(y, inc)
    k = rhs(t, s, args)
    if use_jvp:
        k = k + jvp(t, s, e + lo, args)
    return k


@register_jitable
def _dopri_step_dd(rhs, jvp, use_jvp, t, y, lo, h, k1, args):
    """One step from the compensated state y + lo to (y_new, lo_new)."""
    k2 = _stage(rhs, jvp, use_jvp, t + _C2 * h, y, lo, h * (_A21 * k1), args)
    k3 = _stage(rhs, jvp, use_jvp, t + _C3 * h, y, lo, h * (_A31 * k1 + _A32 * k2), args)
    k4 = _stage(rhs, jvp, use_jvp, t + _C4 * h, y, lo, h * (_A41 * k1 + _A42 * k2 + _A43 * k3), args)
    k5 = _stage(rhs, jvp, use_jvp, t + _C5 * h, y, lo,
                h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4), args)
    k6 = _stage(rhs, jvp, use_jvp, t + h, y, lo,
                h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5), args)
    dy = h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
    y_new, lo_new = _two_sum(y, dy + lo)
    k7 = rhs(t + h, y_new, args)
    if use_jvp:
        k7 = k7 + jvp(t + h, y_new, lo_new, args)
    err = h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
    return y_new, lo_new, err, k7


@register_jitable
def _err_norm(err, y, y_new, rtol, atol):
    worst = 0.0
    for i in range(y.shape[0]):
        scale = atol + rtol * max(abs(y[i]), abs(y_new[i]))
        r = abs(err[i]) / scale
        if r > worst:
            worst = r
    return worst


@register_jitable
def _all_finite(y):
    for i in range(y.shape[0]):
        if not (np.isfinite(y[i].real) and np.isfinite(y[i].imag)):
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
def _locate(rhs, gfun, k, t, y, k1, hsigned, g0, g1, tol_t, args):
    # Illinois false position on the substep length s in (0, hsigned].
    a, b = 0.0, hsigned
    ga, gb = g0, g1
    side = 0
    ys = y
    for _ in range(100):
        if abs(b - a) <= tol_t:
            break
        s = b - gb * (b - a) / (gb - ga)
        if not (min(a, b) < s < max(a, b)):
            s = 0.5 * (a + b)
        ys, _e, _k = _dopri_step(rhs, t, y, s, k1, args)
        gs = gfun(t + s, ys, args)[k]
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
    ys, _e, _k = _dopri_step(rhs, t, y, b, k1, args)
    return t + b, ys


def _integrate_core(rhs, gfun, stopfun, jvp, use_jvp, y0, t0, t1, args, direction,
                    rtol, atol, h0, hmin, hmax, max_steps, record, renorm):
    n = y0.shape[0]
    sgn = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    cap = 1024 if record else 2
    ts = np.empty(cap)
    ys = np.empty((cap, n), dtype=np.complex128)
    rec_lo = np.zeros((cap, n), dtype=np.complex128)
    ts[0] = t0
    ys[0, :] = y0
    count = 1
    ev_cap = 16
    ev_t = np.empty(ev_cap)
    ev_y = np.empty((ev_cap, n), dtype=np.complex128)
    ev_k = np.empty(ev_cap, dtype=np.int64)
    n_ev = 0
    n_acc = 0
    n_rej = 0
    n_rhs = 0
    n_resc = 0

    t = t0
    y = y0.copy()
    # the state is carried as the unevaluated sum y + lo (compensated summation)
    lo = np.zeros(n, dtype=np.complex128)
    t_lo = 0.0
    k1 = rhs(t, y, args)
    n_rhs += 1
    g_old = gfun(t, y, args)
    n_events = g_old.shape[0]

    h = h0
    if h <= 0.0:
        d0 = 0.0
        d1 = 0.0
        for i in range(n):
            sc = atol + rtol * abs(y[i])
            d0 = max(d0, abs(y[i]) / sc)
            d1 = max(d1, abs(k1[i]) / sc)
        if d0 < 1e-5 or d1 < 1e-5:
            h = 1e-6
        else:
            h = 0.01 * d0 / d1
        h = min(h, 0.1 * span)
    h = min(max(h, hmin), hmax)

    err_prev = 1e-4
    status = STATUS_DONE
    rejected_last = False
    while True:
        remaining = abs(t1 - t)
        if remaining <= 1e-14 * max(1.0, abs(t1)):
            break
        if n_acc >= max_steps:
            status = STATUS_MAX_STEPS
            break
        last = False
        if h >= remaining:
            h = remaining
            last = True
        y_new, lo_new, err, k7 = _dopri_step_dd(rhs, jvp, use_jvp, t, y, lo, sgn * h, k1, args)
        n_rhs += 6
        if not _all_finite(y_new):
            if h <= hmin:
                status = STATUS_NONFINITE
                break
            h = max(0.25 * h, hmin)
            n_rej += 1
            rejected_last = True
            continue
        en = _err_norm(err, y, y_new, rtol, atol)
        if en > 1.0:
            n_rej += 1
            if h <= hmin:
                status = STATUS_UNDERFLOW
                break
            fac = max(0.2, 0.9 * en ** -0.2)
            h = max(h * fac, hmin)
            rejected_last = True
            continue

        t_new = t1 if last else t + sgn * h
        stop_here = False
        if n_events > 0:
            g_new = gfun(t_new, y_new, args)
            # earliest crossing first
            while True:
                best = -1
                best_t = 0.0
                best_y = y_new
                for k in range(n_events):
                    if _crossed(g_old[k], g_new[k], direction[k]):
                        tol_t = max(hmin, 4.0 * 2.2e-16 * max(abs(t), abs(t_new)))
                        te, ye = _locate(rhs, gfun, k, t, y, k1, t_new - t,
                                         g_old[k], g_new[k], tol_t, args)
                        if best < 0 or sgn * (te - best_t) < 0.0:
                            best = k
                            best_t = te
                            best_y = ye
                if best < 0:
                    break
                if n_ev >= ev_cap:
                    ev_cap *= 2
                    et2 = np.empty(ev_cap)
                    ey2 = np.empty((ev_cap, n), dtype=np.complex128)
                    ek2 = np.empty(ev_cap, dtype=np.int64)
                    et2[:n_ev] = ev_t[:n_ev]
                    ey2[:n_ev, :] = ev_y[:n_ev, :]
                    ek2[:n_ev] = ev_k[:n_ev]
                    ev_t = et2
                    ev_y = ey2
                    ev_k = ek2
                ev_t[n_ev] = best_t
                ev_y[n_ev, :] = best_y
                ev_k[n_ev] = best
                n_ev += 1
                if stopfun(best_t, best_y, args, best):
                    stop_here = True
                    t_new = best_t
                    y_new = best_y.copy()
                    break
                # mask the handled event; later crossings in the step are rare
                g_old[best] = g_new[best]
            if not stop_here:
                g_old = g_new

        n_acc += 1
        if stop_here:
            t = t_new
            y = y_new
            lo = np.zeros(n, dtype=np.complex128)
        else:
            y = y_new
            lo = lo_new
            if last:
                t = t1
            else:
                t, t_lo = _two_sum(t, sgn * h + t_lo)
        if renorm > 0.0:
            big = 0.0
            for i in range(n):
                big = max(big, abs(y[i]))
            if big > renorm:
                y = y / big
                lo = lo / big
                n_resc += 1
                k7 = k7 / big
        if stop_here:
            k1 = rhs(t, y, args)
            n_rhs += 1
        else:
            k1 = k7
        if record or stop_here:
            if count >= cap:
                cap *= 2
                ts2 = np.empty(cap)
                ys2 = np.empty((cap, n), dtype=np.complex128)
                lo2 = np.zeros((cap, n), dtype=np.complex128)
                ts2[:count] = ts[:count]
                ys2[:count, :] = ys[:count, :]
                lo2[:count, :] = rec_lo[:count, :]
                ts = ts2
                ys = ys2
                rec_lo = lo2
            ts[count] = t
            ys[count, :] = y
            rec_lo[count, :] = lo
            count += 1
        if stop_here:
            status = STATUS_STOPPED
            break

        # PI step-size controller
        en = max(en, 1e-10)
        fac = 0.9 * en ** -0.14 * err_prev ** 0.08
        fac = min(5.0, max(0.2, fac))
        if rejected_last:
            fac = min(fac, 1.0)
        rejected_last = False
        err_prev = en
        h = min(max(h * fac, hmin), hmax)

    if not record and not (count >= 2 and ts[count - 1] == t):
        ts[1] = t
        ys[1, :] = y
        rec_lo[1, :] = lo
        count = 2
    stats = np.array([n_acc, n_rej, n_rhs, n_resc], dtype=np.int64)
    return (ts[:count], ys[:count], rec_lo[:count], status, ev_t[:n_ev], ev_y[:n_ev], ev_k[:n_ev], stats)


_CORE_SIG = (
    types.FunctionType(RHS_SIG), types.FunctionType(EVENT_SIG), types.FunctionType(STOP_SIG),
    types.FunctionType(JVP_SIG), types.boolean,
    types.complex128[::1], types.float64, types.float64, types.float64[::1], types.int64[::1],
    types.float64, types.float64, types.float64, types.float64, types.float64, types.int64,
    types.boolean, types.float64,
)
_core_jit = None


def _compiled_core():
    global _core_jit
    if _core_jit is None:
        _core_jit = numba.njit(_CORE_SIG, cache=True)(_integrate_core)
    return _core_jit


def _is_jitted(f, sig) -> bool:
    return isinstance(f, numba.core.dispatcher.Dispatcher) and any(
        s == sig.args for s in f.signatures)


def dopri_step(rhs, t, y, h, args=()):
    """Take one Dormand-Prince step; return ``(y_new, error_estimate)``."""
    y = np.asarray(y, dtype=np.complex128)
    args = np.atleast_1d(np.asarray(args, dtype=np.float64))
    k1 = rhs(t, y, args)
    y_new, err, _ = _dopri_step(rhs, t, y, h, k1, args)
    return y_new, err


def integrate_adaptive(rhs, y0, t0, t1, ctrl: StepControl | None = None,
                       events: Events | None = None, args=(), *, jvp: Callable | None = None,
                       record: bool = True, renorm: float = 0.0) -> Trail:
    """Integrate ``y' = rhs(t, y, args)`` from ``t0`` to ``t1``.

    Parameters
    ----------
    rhs : callable
        ``rhs(t, y, args)`` returning a complex array shaped like ``y``.
    y0 : array_like
        Initial state; promoted to complex128.
    t0, t1 : float
        Start and end of the interval. ``t1 < t0`` integrates backwards.
    ctrl : StepControl, optional
    events : Events, optional
        Crossing detection; crossings are located by re-stepping within the
        accepted step.
    args : sequence of float
        Parameter vector, passed as a float64 array to ``rhs`` and the
        event callbacks.
    jvp : callable, optional
        ``jvp(t, y, v, args)`` returning the Jacobian of ``rhs`` applied to
        ``v``. The state is always accumulated with compensated summation;
        given ``jvp``, stage derivatives are also corrected for the rounding
        of stage points, which keeps invariants to a few units of the
        double-double state rather than of ``y`` alone.
    record : bool
        Keep every accepted step. When False only the endpoints are kept.
    renorm : float
        For linear systems only: when ``max|y|`` exceeds this value the
        state is divided by it. 0 disables.

    Returns
    -------
    Trail

    Raises
    ------
    StepUnderflowError, MaxStepsExceededError, NonFiniteStateError
        Each carries the partial trail.
    """
    if t0 == t1:
        raise ValueError("t0 and t1 must differ")
    ctrl = ctrl or StepControl()
    y0 = np.atleast_1d(np.asarray(y0, dtype=np.complex128)).copy()
    args = np.ascontiguousarray(np.atleast_1d(np.asarray(args, dtype=np.float64)))
    if not np.all(np.isfinite(np.asarray(rhs(t0, y0, args)))):
        raise ValueError("rhs is not finite at the initial state")

    if events is None:
        g, stop, direction = None, None, np.zeros(0, dtype=np.int64)
    else:
        g, stop = events.g, events.stop
        direction = np.asarray(events.direction, dtype=np.int64)

    use_jit = (_is_jitted(rhs, RHS_SIG) and (g is None or _is_jitted(g, EVENT_SIG))
               and (stop is None or _is_jitted(stop, STOP_SIG))
               and (jvp is None or _is_jitted(jvp, JVP_SIG)))
    use_jvp = jvp is not None
    if use_jit:
        core = _compiled_core()
        g = g if g is not None else _no_events_jit
        stop = stop if stop is not None else _never_stop_jit
        jvp = jvp if jvp is not None else _no_jvp_jit
    else:
        core = _integrate_core
        g = g if g is not None else _no_events
        stop = stop if stop is not None else _never_stop
        jvp = jvp if jvp is not None else _no_jvp

    ts, ys, lo, status, ev_t, ev_y, ev_k, stats = core(
        rhs, g, stop, jvp, use_jvp, y0, float(t0), float(t1), args, direction,
        float(ctrl.rel_tol), float(ctrl.abs_tol), float(ctrl.initial_step),
        float(ctrl.min_step), float(ctrl.max_step), int(ctrl.max_steps),
        bool(record), float(renorm))
    hits = [EventHit(float(ev_t[i]), ev_y[i].copy(), int(ev_k[i])) for i in range(len(ev_t))]
    trail = Trail(t=ts.copy(), y=ys.copy(), status=int(status), events=hits,
                  n_accepted=int(stats[0]), n_rejected=int(stats[1]),
                  n_rhs=int(stats[2]), n_rescaled=int(stats[3]), y_lo=lo.copy())
    if status == STATUS_UNDERFLOW:
        raise StepUnderflowError(f"step size underflow at t={trail.t_final:.6g}", trail)
    if status == STATUS_MAX_STEPS:
        raise MaxStepsExceededError(f"max_steps={ctrl.max_steps} exceeded at t={trail.t_final:.6g}", trail)
    if status == STATUS_NONFINITE:
        raise NonFiniteStateError(f"non-finite state near t={trail.t_final:.6g}", trail)
    return trail
