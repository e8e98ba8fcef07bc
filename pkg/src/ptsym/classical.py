"""Complex classical orbits of H = p^2 + x^2 (ix)^eps at energy 1.

The multivalued factor (ix)^eps is evaluated on the sheet selected by an
unwrapped phase phi of ix, carried as a third (real) component of the
state and integrated alongside x and p. The phase only picks the sheet:
values are always computed from the principal argument of ix shifted by
the nearest multiple of 2*pi, so small drift in phi never leaks into the
potential.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba.extending import register_jitable
from scipy.spatial import cKDTree

from .geometry import rational_epsilon, turning_point
from .numerics import (
    Events,
    IntegrationError,
    StepControl,
    gamma_real,
    integrate_adaptive,
    jit_event,
    jit_jvp,
    jit_rhs,
    jit_stop,
)
from .numerics.dd import cdd_div, cdd_mul, dd_mul_d
from .numerics.ode_dd import integrate_adaptive_dd, jit_dd_event, jit_dd_rhs, jit_dd_stop

__all__ = [
    "RiemannPoint",
    "PhaseState",
    "Trajectory",
    "TurnEvent",
    "OrbitClassification",
    "PeriodRecord",
    "ClosureTolerances",
    "OrbitIntegrationError",
    "DEFAULT_CTRL",
    "DEFAULT_CTRLS",
    "potential",
    "potential_array",
    "mirror_hausdorff",
    "energy",
    "energy_error",
    "hamilton_rhs",
    "initial_state",
    "mirror_state",
    "integrate_orbit",
    "analytic_period",
    "period_scan",
    "broken_pt_candidates",
    "ConservedOrbit",
    "conserved_orbit",
]

TWO_PI = 2.0 * math.pi
# below this radius the phase equation is frozen (origin passage)
ORIGIN_RADIUS = 1e-10

DEFAULT_CTRL = StepControl(rel_tol=1e-12, abs_tol=1e-14, max_steps=3_000_000)
DEFAULT_CTRLS = {
    "double": DEFAULT_CTRL,
    "double-double": StepControl(rel_tol=1e-18, abs_tol=1e-20, max_steps=3_000_000),
}


@dataclass(frozen=True)
class RiemannPoint:
    """A complex position with an unwrapped representative of arg(ix)."""

    value: complex
    phase: float

    @classmethod
    def on_principal_sheet(cls, value: complex) -> "RiemannPoint":
        return cls(complex(value), math.atan2(value.real, -value.imag))

    def consistent(self, tol: float = 1e-9) -> bool:
        x = complex(self.value)
        if x == 0:
            return True
        return abs(complex(math.cos(self.phase), math.sin(self.phase)) - 1j * x / abs(x)) <= tol


@dataclass(frozen=True)
class PhaseState:
    position: RiemannPoint
    momentum: complex
    time: float = 0.0

    @property
    def x(self) -> complex:
        return self.position.value

    @property
    def p(self) -> complex:
        return self.momentum


# 2*pi as an unevaluated sum; a rounded 2*pi would rotate the force by a
# fixed angle on every other sheet, which breaks energy conservation
_TWO_PI_HI = 6.283185307179586
_TWO_PI_LO = 2.4492935982947064e-16


@register_jitable
def _snap_phase(xr, xi, phi):
    # arg(ix) shifted onto the sheet nearest to phi
    a = math.atan2(xr, -xi)
    k = math.floor((phi - a) / _TWO_PI_HI + 0.5)
    return (a + k * _TWO_PI_HI) + k * _TWO_PI_LO


@register_jitable
def _two_prod(a, b):
    # Dekker product: a*b = p + e exactly
    p = a * b
    c = 134217729.0 * a
    ah = c - (c - a)
    al = a - ah
    c = 134217729.0 * b
    bh = c - (c - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@register_jitable
def _two_sum_s(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@register_jitable
def _sheet_rotation(xr, xi, phi, power):
    """exp(i * power * phase) for the snapped phase, with the angle in double-double.

    The angle can be many radians; rounding it to double before taking
    cos/sin would cost far more than the ulp of the result.
    """
    a = math.atan2(xr, -xi)
    k = math.floor((phi - a) / _TWO_PI_HI + 0.5)
    # phase = a + k * 2pi as hi + lo
    p1, e1 = _two_prod(k, _TWO_PI_HI)
    ph, e2 = _two_sum_s(a, p1)
    ph_lo = e1 + e2 + k * _TWO_PI_LO
    # angle = power * phase
    ang, e3 = _two_prod(power, ph)
    ang_lo = e3 + power * ph_lo
    # reduce modulo 2pi
    m = math.floor(ang / _TWO_PI_HI + 0.5)
    p2, e4 = _two_prod(m, _TWO_PI_HI)
    r, e5 = _two_sum_s(ang, -p2)
    r_lo = e5 - e4 - m * _TWO_PI_LO + ang_lo
    r, r_lo = _two_sum_s(r, r_lo)
    c = math.cos(r)
    s = math.sin(r)
    return complex(c - s * r_lo, s + c * r_lo)


@register_jitable
def _force(x, phi, eps, int_eps):
    """x (ix)^eps on the sheet of phi."""
    r = abs(x)
    if r == 0.0:
        return 0.0j
    if int_eps >= 0:
        w = 1.0 + 0.0j
        ix = 1j * x
        for _ in range(int_eps):
            w = w * ix
        return x * w
    return -1j * r ** (1.0 + eps) * _sheet_rotation(x.real, x.imag, phi, 1.0 + eps)


@register_jitable
def _potential(x, phi, eps, int_eps):
    """x^2 (ix)^eps = -(ix)^(2+eps) on the sheet of phi."""
    r = abs(x)
    if r == 0.0:
        return 0.0j
    if int_eps >= 0:
        return x * _force(x, phi, eps, int_eps)
    return -(r ** (2.0 + eps)) * _sheet_rotation(x.real, x.imag, phi, 2.0 + eps)


def _int_eps(epsilon: float) -> int:
    """Integer exponent when eps is an integer, else -1."""
    return int(epsilon) if float(epsilon).is_integer() else -1


def _snap_eps(epsilon: float) -> float:
    """eps moved by at most an ulp so that 1 + eps and 2 + eps are exact.

    Force and potential use the exponents 1 + eps and 2 + eps; if those are
    rounded independently the force is not the gradient of the potential,
    an error that grows like log|x| and shows up as energy drift.
    """
    return (2.0 + float(epsilon)) - 2.0


# parameter vector layout shared by the compiled callbacks
_P_EPS, _P_INT, _P_X0R, _P_X0I, _P_PHI0, _P_DX, _P_DP, _P_DPHI, _P_SHEET = range(9)


@jit_rhs
def _orbit_rhs(t, y, par):
    eps = par[0]
    ie = int(par[1])
    x = y[0]
    p = y[1]
    out = np.empty(3, dtype=np.complex128)
    out[0] = 2.0 * p
    out[1] = -(2.0 + eps) * _force(x, y[2].real, eps, ie)
    r2 = x.real * x.real + x.imag * x.imag
    if r2 > ORIGIN_RADIUS * ORIGIN_RADIUS:
        xd = 2.0 * p
        out[2] = ((xd * np.conj(x)).imag / r2) + 0.0j
    else:
        out[2] = 0.0j
    return out


@jit_jvp
def _orbit_jvp(t, y, v, par):
    eps = par[0]
    ie = int(par[1])
    x = y[0]
    out = np.zeros(3, dtype=np.complex128)
    out[0] = 2.0 * v[1]
    if x != 0:
        # d/dx [x (ix)^eps] = (1 + eps) (ix)^eps
        out[1] = -(2.0 + eps) * (1.0 + eps) * (_force(x, y[2].real, eps, ie) / x) * v[0]
    return out


@jit_event
def _orbit_events(t, y, par):
    eps = par[0]
    ie = int(par[1])
    p = y[1]
    pd = -(2.0 + eps) * _force(y[0], y[2].real, eps, ie)
    g = np.empty(1)
    # d|p|^2/dt / 2: rising zero marks a local minimum of |p|
    g[0] = (np.conj(p) * pd).real
    return g


@register_jitable
def _same_sheet(x, phi, par):
    if par[1] >= 0:
        return True
    d = _snap_phase(x.real, x.imag, phi) - par[4]
    period = par[8]
    if period > 0.0:
        d = d - period * math.floor(d / period + 0.5)
    return abs(d) <= par[7]


@jit_stop
def _orbit_closed(t, y, par, k):
    if t <= 0.0:
        return False
    x = y[0]
    if abs(y[1]) > par[6]:
        return False
    if abs(x - complex(par[2], par[3])) > par[5]:
        return False
    return _same_sheet(x, y[2].real, par)


# double-double orbit state: real components of x, p, w = (ix)^eps, then phi
_DD_X, _DD_P, _DD_W, _DD_PHI = 0, 2, 4, 6


@jit_dd_rhs
def _orbit_rhs_dd(t, Y, par):
    # Carrying w = (ix)^eps as a state variable makes the field algebraic,
    # so every operation stays in double-double. dw/dt = eps w xdot / x.
    eps = par[0]
    out = np.zeros((2, 7))
    xrh, xrl, xih, xil = Y[0, 0], Y[1, 0], Y[0, 1], Y[1, 1]
    prh, prl, pih, pil = Y[0, 2], Y[1, 2], Y[0, 3], Y[1, 3]
    wrh, wrl, wih, wil = Y[0, 4], Y[1, 4], Y[0, 5], Y[1, 5]
    out[0, 0], out[1, 0] = 2.0 * prh, 2.0 * prl
    out[0, 1], out[1, 1] = 2.0 * pih, 2.0 * pil
    ar, arl, ai, ail = cdd_mul(xrh, xrl, xih, xil, wrh, wrl, wih, wil)
    c = -(2.0 + eps)
    out[0, 2], out[1, 2] = dd_mul_d(ar, arl, c)
    out[0, 3], out[1, 3] = dd_mul_d(ai, ail, c)
    if xrh * xrh + xih * xih > ORIGIN_RADIUS * ORIGIN_RADIUS:
        qr, qrl, qi, qil = cdd_div(prh, prl, pih, pil, xrh, xrl, xih, xil)
        br, brl, bi, bil = cdd_mul(wrh, wrl, wih, wil, qr, qrl, qi, qil)
        out[0, 4], out[1, 4] = dd_mul_d(br, brl, 2.0 * eps)
        out[0, 5], out[1, 5] = dd_mul_d(bi, bil, 2.0 * eps)
        out[0, 6], out[1, 6] = 2.0 * qi, 2.0 * qil
    return out


@jit_dd_event
def _orbit_events_dd(t, Y, par):
    x = complex(Y[0, 0], Y[0, 1])
    p = complex(Y[0, 2], Y[0, 3])
    w = complex(Y[0, 4], Y[0, 5])
    g = np.empty(1)
    g[0] = (np.conj(p) * (-(2.0 + par[0]) * x * w)).real
    return g


@jit_dd_stop
def _orbit_closed_dd(t, Y, par, k):
    if t <= 0.0:
        return False
    x = complex(Y[0, 0], Y[0, 1])
    if abs(complex(Y[0, 2], Y[0, 3])) > par[6]:
        return False
    if abs(x - complex(par[2], par[3])) > par[5]:
        return False
    return _same_sheet(x, Y[0, 6], par)


def _initial_state_dd(K: int, epsilon: float) -> np.ndarray:
    """(2, 7) hi/lo launch state; w0 = (i x0)^eps to double-double accuracy."""
    import mpmath

    tp = turning_point(K, epsilon)
    x0 = tp.x
    with mpmath.workdps(45):
        a = mpmath.atan2(mpmath.mpf(x0.real), -mpmath.mpf(x0.imag))
        k = round((tp.phase - float(a)) / TWO_PI)
        phi = a + 2 * mpmath.pi * k
        lr = mpmath.log(mpmath.hypot(mpmath.mpf(x0.real), mpmath.mpf(x0.imag)))
        w0 = mpmath.exp(mpmath.mpf(_snap_eps(epsilon)) * mpmath.mpc(lr, phi))

        def split(v):
            hi = float(v)
            return hi, float(v - hi)

        Y = np.zeros((2, 7))
        Y[:, 0] = (x0.real, 0.0)
        Y[:, 1] = (x0.imag, 0.0)
        Y[:, 4] = split(w0.real)
        Y[:, 5] = split(w0.imag)
        Y[:, 6] = split(phi)
    return Y


def potential(pt: RiemannPoint, epsilon: float) -> complex:
    """x^2 (ix)^eps evaluated on the sheet carried by ``pt``."""
    return complex(_potential(complex(pt.value), float(pt.phase), _snap_eps(epsilon), _int_eps(epsilon)))


def potential_array(x: np.ndarray, phase: np.ndarray, epsilon: float) -> np.ndarray:
    """Vectorised :func:`potential` for sampled trajectories."""
    x = np.asarray(x, dtype=complex)
    phase = np.asarray(phase, dtype=float)
    ie = _int_eps(epsilon)
    if ie >= 0:
        return x * x * (1j * x) ** ie
    a = np.arctan2(x.real, -x.imag)
    ph = a + TWO_PI * np.floor((phase - a) / TWO_PI + 0.5)
    e2 = 2.0 + _snap_eps(epsilon)
    v = -np.abs(x) ** e2 * np.exp(1j * e2 * ph)
    return np.where(x == 0, 0.0, v)


def energy(state: PhaseState, epsilon: float) -> complex:
    return state.momentum ** 2 + potential(state.position, epsilon)


def hamilton_rhs(state: PhaseState, epsilon: float) -> tuple[complex, complex, float]:
    """(dx/dt, dp/dt, dphi/dt) from Hamilton's equations with phase tracking."""
    y = np.array([state.position.value, state.momentum, state.position.phase], dtype=complex)
    par = np.array([_snap_eps(epsilon), _int_eps(epsilon)], dtype=float)
    d = _orbit_rhs(0.0, y, par)
    return complex(d[0]), complex(d[1]), float(d[2].real)


def initial_state(K: int, epsilon: float) -> PhaseState:
    """Rest at the K-th turning point, on the sheet where it solves H = 1."""
    tp = turning_point(K, epsilon)
    return PhaseState(RiemannPoint(tp.x, tp.phase), 0j, 0.0)


def mirror_state(state: PhaseState) -> PhaseState:
    """Image under x -> -x*, p -> -p*; the phase of ix flips sign."""
    pos = state.position
    return PhaseState(RiemannPoint(-pos.value.conjugate(), -pos.phase),
                      -state.momentum.conjugate(), state.time)


_PI_EXT = np.longdouble("3.14159265358979323846264338327950288")


def energy_error(x, p, phase, epsilon: float, energy: complex = 1.0, x_lo=None, p_lo=None) -> np.ndarray:
    """|H - energy| per sample, evaluated in extended precision.

    With ``x_lo``/``p_lo`` the state is the unevaluated sum x + x_lo,
    p + p_lo kept by the integrator. Far out on an orbit |p|^2 and |V| are
    huge and nearly cancel, so rounding the sum to double alone would cost
    more than the integration error being measured.
    """
    X = np.asarray(x, dtype=complex).astype(np.clongdouble)
    P = np.asarray(p, dtype=complex).astype(np.clongdouble)
    if x_lo is not None:
        X = X + np.asarray(x_lo, dtype=complex)
    if p_lo is not None:
        P = P + np.asarray(p_lo, dtype=complex)
    ie = _int_eps(epsilon)
    if ie >= 0:
        v = X * X * (1j * X) ** ie
    else:
        two_pi = 2 * _PI_EXT
        a = np.arctan2(X.real, -X.imag)
        ph = a + two_pi * np.floor((np.asarray(phase, dtype=float).astype(np.longdouble) - a) / two_pi + 0.5)
        e2 = np.longdouble(_snap_eps(epsilon)) + 2
        v = np.where(X == 0, 0, -(np.abs(X) ** e2) * np.exp(1j * e2 * ph))
    return np.abs(P * P + v - energy).astype(float)


@dataclass
class Trajectory:
    """Sampled orbit. Arrays are aligned; ``samples`` builds PhaseState objects.

    ``x_lo`` and ``p_lo``, when present, are the low-order words of the
    compensated state; the drift diagnostic uses them.
    """

    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    phase: np.ndarray
    epsilon: float
    energy: complex = 1.0 + 0j
    x_lo: np.ndarray | None = None
    p_lo: np.ndarray | None = None
    max_energy_drift: float = field(init=False)

    def __post_init__(self):
        err = energy_error(self.x, self.p, self.phase, self.epsilon, self.energy, self.x_lo, self.p_lo)
        self.max_energy_drift = float(np.max(err)) if len(err) else 0.0

    def __len__(self):
        return len(self.t)

    @property
    def samples(self) -> list[PhaseState]:
        return [PhaseState(RiemannPoint(complex(x), float(ph)), complex(p), float(t))
                for t, x, p, ph in zip(self.t, self.x, self.p, self.phase)]

    def phase_consistency(self) -> float:
        """max |e^{i phi} - ix/|x|| over samples away from the origin."""
        ok = np.abs(self.x) > ORIGIN_RADIUS
        u = 1j * self.x[ok] / np.abs(self.x[ok])
        return float(np.max(np.abs(np.exp(1j * self.phase[ok]) - u))) if ok.any() else 0.0


@dataclass(frozen=True)
class TurnEvent:
    time: float
    x: complex
    p_abs: float


@dataclass
class OrbitClassification:
    closed: bool
    period: float | None
    pt_symmetric: bool
    reached_mirror: bool
    reached_conjugate: bool
    turn_events: list = field(default_factory=list)
    mirror_distance: float | None = None
    min_radius: float = float("inf")
    status: str = "ok"


@dataclass(frozen=True)
class ClosureTolerances:
    """Thresholds used to detect closure and classify turning-point encounters."""

    dx: float = 1e-6
    dp: float = 1e-6
    dphase: float = 1e-6
    turn_p: float = 1e-3
    match_radius: float = 1e-3
    hausdorff: float = 1e-3


class OrbitIntegrationError(IntegrationError):
    """Integrator failure; carries the partial trajectory and classification."""

    def __init__(self, message, trajectory=None, classification=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.classification = classification


_HAUSDORFF_NEIGHBOURS = 4


def _hermite_densify(x, p, t, m=16):
    """Cubic Hermite refinement of a sampled path using dx/dt = 2p."""
    if len(x) < 2:
        return x
    h = np.diff(t)[:, None]
    s = np.linspace(0.0, 1.0, m, endpoint=False)[None, :]
    x0, x1 = x[:-1, None], x[1:, None]
    d0, d1 = 2 * p[:-1, None] * h, 2 * p[1:, None] * h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    pts = h00 * x0 + h10 * d0 + h01 * x1 + h11 * d1
    return np.concatenate([pts.ravel(), x[-1:]])


def mirror_hausdorff(x: np.ndarray, p: np.ndarray, t: np.ndarray) -> float:
    """Hausdorff distance between a sampled path and its image under x -> -x*.

    The mirror is an isometric involution, so one directed distance
    suffices. Distances are measured to the polyline of a Hermite-densified
    copy of the path.
    """
    pts = _hermite_densify(np.asarray(x), np.asarray(p), np.asarray(t))
    xy = np.column_stack([pts.real, pts.imag])
    n = len(xy)
    if n < 2:
        return float(2 * abs(xy[0, 0])) if n else 0.0
    tree = cKDTree(xy)
    mir = np.column_stack([-pts.real, pts.imag])
    # the nearest vertex need not bound the nearest segment when the path
    # passes close to itself, so several candidates are projected
    _, idx = tree.query(mir, k=min(_HAUSDORFF_NEIGHBOURS, n))
    idx = idx.reshape(len(mir), -1)
    best = np.full(len(mir), np.inf)
    for j in range(idx.shape[1]):
        for off in (-1, 0):
            i0 = np.clip(idx[:, j] + off, 0, n - 2)
            a, b = xy[i0], xy[i0 + 1]
            ab = b - a
            ll = np.einsum("ij,ij->i", ab, ab)
            u = np.where(ll > 0, np.einsum("ij,ij->i", mir - a, ab) / np.where(ll > 0, ll, 1), 0.0)
            u = np.clip(u, 0.0, 1.0)
            proj = a + u[:, None] * ab
            best = np.minimum(best, np.hypot(*(mir - proj).T))
    return float(best.max())


def _sheet_period(epsilon: float) -> float:
    frac = rational_epsilon(epsilon)
    return TWO_PI * frac.denominator if frac is not None else 0.0


def integrate_orbit(K: int, epsilon: float, ctrl: StepControl | None = None,
                    t_max: float = 1e4, tol: ClosureTolerances | None = None,
                    precision: str = "double-double"
                    ) -> tuple[Trajectory, OrbitClassification]:
    """Integrate from the K-th turning point until the orbit closes or t_max.

    Closure is the first minimum of |p| at which x, p and the sheet all
    match the launch point. Minima of |p| below ``tol.turn_p`` are turn
    events; each is compared with the mirror image -x0* and the conjugate
    x0* of the launch point.

    ``precision`` selects the arithmetic. "double-double" (the default)
    keeps |H - 1| near 1e-10 even where |x|^(2+eps) reaches 1e9; "double"
    is several times faster but its drift grows like 1e-16 |V|max.
    ``ctrl`` defaults to the matching entry of :data:`DEFAULT_CTRLS`.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    if precision not in DEFAULT_CTRLS:
        raise ValueError(f"precision must be one of {sorted(DEFAULT_CTRLS)}")
    ctrl = ctrl or DEFAULT_CTRLS[precision]
    tol = tol or ClosureTolerances()
    s0 = initial_state(K, epsilon)
    x0 = s0.position.value
    par = np.zeros(9)
    par[_P_EPS] = _snap_eps(epsilon)
    par[_P_INT] = _int_eps(epsilon)
    par[_P_X0R], par[_P_X0I] = x0.real, x0.imag
    par[_P_PHI0] = s0.position.phase
    par[_P_DX], par[_P_DP], par[_P_DPHI] = tol.dx, tol.dp, tol.dphase
    par[_P_SHEET] = _sheet_period(epsilon)

    failure = None
    if precision == "double":
        y0 = np.array([x0, 0j, s0.position.phase], dtype=complex)
        events = Events(_orbit_events, (1,), _orbit_closed)
        try:
            trail = integrate_adaptive(_orbit_rhs, y0, 0.0, t_max, ctrl, events, par, jvp=_orbit_jvp)
        except IntegrationError as exc:
            trail, failure = exc.trail, exc
        ys, lo = trail.y, trail.y_lo
        traj = Trajectory(trail.t, ys[:, 0].copy(), ys[:, 1].copy(), ys[:, 2].real.copy(),
                          float(epsilon), x_lo=lo[:, 0].copy(), p_lo=lo[:, 1].copy())
        hits = [(ev.t, complex(ev.y[0]), abs(ev.y[1])) for ev in trail.events]
    else:
        events = Events(_orbit_events_dd, (1,), _orbit_closed_dd)
        try:
            trail = integrate_adaptive_dd(_orbit_rhs_dd, _initial_state_dd(K, epsilon), 0.0, t_max,
                                          ctrl, events, par)
        except IntegrationError as exc:
            trail, failure = exc.trail, exc
        hi, lo = trail.y, trail.y_lo
        traj = Trajectory(trail.t, hi[:, 0] + 1j * hi[:, 1], hi[:, 2] + 1j * hi[:, 3], hi[:, 6].copy(),
                          float(epsilon), x_lo=lo[:, 0] + 1j * lo[:, 1], p_lo=lo[:, 2] + 1j * lo[:, 3])
        hits = [(ev.t, complex(ev.y[0, 0], ev.y[0, 1]), abs(complex(ev.y[0, 2], ev.y[0, 3])))
                for ev in trail.events]
    closed = trail.stopped_by_event and failure is None
    period = float(trail.t_final) if closed else None

    turns = [TurnEvent(t, x, pa) for t, x, pa in hits if pa < tol.turn_p]
    mirror = -x0.conjugate()
    conj = x0.conjugate()
    # the final event is the return to x0 itself
    interior = turns[:-1] if closed and turns else turns
    reached_mirror = any(abs(ev.x - mirror) <= tol.match_radius for ev in interior)
    conj_distinct = abs(conj - x0) > 2 * tol.match_radius
    reached_conjugate = conj_distinct and any(
        abs(ev.x - conj) <= tol.match_radius and abs(ev.x - mirror) > tol.match_radius
        for ev in interior)
    min_radius = float(np.min(np.abs(traj.x))) if len(traj) else float("inf")

    status = "closed" if closed else "open"
    if failure is not None:
        status = f"failed: {type(failure).__name__}"
    unclassifiable = min_radius < ORIGIN_RADIUS and _int_eps(epsilon) < 0
    if unclassifiable:
        status = "origin-passage"

    mirror_dist = None
    pt_sym = False
    if closed and reached_mirror and not reached_conjugate and not unclassifiable:
        mirror_dist = mirror_hausdorff(traj.x, traj.p, traj.t)
        pt_sym = mirror_dist <= tol.hausdorff
    cls = OrbitClassification(closed=closed and not unclassifiable, period=period, pt_symmetric=pt_sym,
                              reached_mirror=reached_mirror, reached_conjugate=reached_conjugate,
                              turn_events=turns, mirror_distance=mirror_dist,
                              min_radius=min_radius, status=status)
    if failure is not None:
        raise OrbitIntegrationError(str(failure), traj, cls) from failure
    return traj, cls


def analytic_period(epsilon: float) -> float:
    """Closed-form period of the orbit joining the K = 0 and K = -1 turning points."""
    if not epsilon >= 0:
        raise ValueError("epsilon must be >= 0")
    e = float(epsilon)
    return (2.0 * math.sqrt(math.pi) * gamma_real((3 + e) / (2 + e)) / gamma_real((4 + e) / (4 + 2 * e))
            * math.cos(e * math.pi / (4 + 2 * e)))


@dataclass
class PeriodRecord:
    epsilon: float
    K: int
    classification: OrbitClassification | None
    wall_time: float
    energy_drift: float | None = None
    status: str = "ok"

    @property
    def period(self):
        return None if self.classification is None else self.classification.period


def _period_row(K, epsilon, ctrl, t_max, tol, precision):
    start = time.perf_counter()
    try:
        traj, cls = integrate_orbit(K, epsilon, ctrl, t_max, tol, precision)
        drift, status = traj.max_energy_drift, cls.status
    except OrbitIntegrationError as exc:
        cls = exc.classification
        drift = exc.trajectory.max_energy_drift if exc.trajectory is not None else None
        status = cls.status if cls is not None else f"failed: {exc}"
    except Exception as exc:  # noqa: BLE001 - a scan row never aborts the scan
        cls, drift, status = None, None, f"error: {type(exc).__name__}: {exc}"
    return PeriodRecord(float(epsilon), K, cls, time.perf_counter() - start, drift, status)


def period_scan(K: int, epsilons, ctrl: StepControl | None = None, t_max: float = 1e4,
                tol: ClosureTolerances | None = None, workers: int = 1,
                precision: str = "double-double") -> list[PeriodRecord]:
    """One independent orbit per eps; rows come back in grid order.

    Failures are recorded in the row's ``status``; the scan itself does not
    raise for per-point trouble.
    """
    eps = [float(e) for e in epsilons]
    if not eps:
        raise ValueError("empty epsilon grid")
    if any(b <= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilon grid must be strictly increasing")
    if precision not in DEFAULT_CTRLS:
        raise ValueError(f"precision must be one of {sorted(DEFAULT_CTRLS)}")
    if workers <= 1:
        return [_period_row(K, e, ctrl, t_max, tol, precision) for e in eps]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(_period_row, K, e, ctrl, t_max, tol, precision) for e in eps]
        return [f.result() for f in futs]


def broken_pt_candidates(lo: float, hi: float, max_p: int = 6, max_q: int = 9) -> list[float]:
    """Rational eps = 4p/q (q odd) in the open interval (lo, hi), sorted, deduplicated."""
    from fractions import Fraction

    vals = {Fraction(4 * p, q) for p in range(1, max_p + 1) for q in range(1, max_q + 1, 2)}
    return [float(v) for v in sorted(vals) if lo < v < hi]


@dataclass
class ConservedOrbit:
    """An orbit refined until |H - 1| stays under a bound, plus a half-tolerance rerun."""

    K: int
    epsilon: float
    rel_tol: float | None
    accepted: bool
    reason: str
    classification: OrbitClassification | None = None
    energy_drift: float | None = None
    half_tol_period: float | None = None
    half_tol_drift: float | None = None
    attempts: list = field(default_factory=list)

    @property
    def period(self):
        return None if self.classification is None else self.classification.period

    @property
    def period_shift(self) -> float | None:
        """Relative change of the period when the tolerance is halved."""
        if self.period is None or self.half_tol_period is None:
            return None
        return abs(self.half_tol_period - self.period) / abs(self.period)


def _dd_ctrl(rel_tol):
    return StepControl(rel_tol=rel_tol, abs_tol=rel_tol * 1e-2, max_steps=3_000_000)


def conserved_orbit(K: int, epsilon: float, drift_limit: float = 1e-8, start_tol: float = 1e-14,
                    tol_floor: float = 1e-18, t_max: float = 1e4,
                    tol: ClosureTolerances | None = None) -> ConservedOrbit:
    """Double-double orbit at the loosest tolerance whose energy drift meets ``drift_limit``.

    Drift is dominated by truncation and scales about linearly with the
    relative tolerance, so each retry jumps straight to the tolerance the
    previous drift predicts (with a factor 4 margin). When that lies below
    ``tol_floor`` the orbit is rejected rather than integrated for minutes.
    The accepted run is repeated at half the tolerance; both must conserve
    energy and the second supplies ``half_tol_period``.
    """
    rel = start_tol
    out = ConservedOrbit(K, float(epsilon), None, False, "")
    for _ in range(6):
        try:
            traj, cls = integrate_orbit(K, epsilon, _dd_ctrl(rel), t_max, tol, "double-double")
        except OrbitIntegrationError as exc:
            out.attempts.append((rel, None, exc.classification.status if exc.classification else str(exc)))
            out.reason = f"integration failed at rel_tol {rel:.1e}: {exc}"
            return out
        drift = traj.max_energy_drift
        out.attempts.append((rel, drift, cls.status))
        if drift <= drift_limit:
            break
        nxt = rel * drift_limit / drift / 4
        if nxt < tol_floor:
            out.classification, out.energy_drift, out.rel_tol = cls, drift, rel
            out.reason = (f"drift {drift:.1e} at rel_tol {rel:.1e} needs rel_tol {nxt:.1e}, "
                          f"below floor {tol_floor:.0e}")
            return out
        rel = nxt
    else:
        out.reason = "no tolerance in the ladder met the drift limit"
        return out
    out.classification, out.energy_drift, out.rel_tol = cls, drift, rel
    try:
        traj2, cls2 = integrate_orbit(K, epsilon, _dd_ctrl(rel / 2), t_max, tol, "double-double")
    except OrbitIntegrationError as exc:
        out.reason = f"half-tolerance rerun failed: {exc}"
        return out
    out.half_tol_period, out.half_tol_drift = cls2.period, traj2.max_energy_drift
    if out.half_tol_drift > drift_limit:
        out.reason = f"half-tolerance rerun drift {out.half_tol_drift:.1e}"
        return out
    out.accepted, out.reason = True, "ok"
    return out
