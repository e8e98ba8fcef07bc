"""Shooting eigenvalues of -psi'' + x^2 (ix)^eps psi = E psi for wedge pairs.

For the pair (K, -K-1) the equation is integrated inward along the centre
rays of the two wedges, x = r exp(i theta), starting from a WKB tail deep
in each wedge. The two solutions are joined at the origin by continuity of
psi and dpsi/dx; the Wronskian-like mismatch D(E) vanishes exactly at the
eigenvalues.

Seeds on the left ray are the PT images of the right-ray seeds, so
D(conj E) = conj D(E) and D is real on the real axis up to a constant
phase. Real eigenvalues are therefore found as sign changes.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import rational_epsilon, wedge
from .numerics import (
    IntegrationError,
    RootBracket,
    RootNotConvergedError,
    StepControl,
    find_root_bracketed,
    find_root_complex,
    integrate_adaptive,
    jit_rhs,
)

__all__ = [
    "ShootingConfig",
    "RaySolution",
    "MatchingResult",
    "SpectralPoint",
    "ShootingError",
    "DEFAULT_CONFIG",
    "ray_angle",
    "rays_coincide",
    "r_max_for",
    "wkb_seed",
    "shoot_ray",
    "matching",
    "matching_function",
    "rotation_factor",
    "is_real_energy",
    "find_real_eigenvalues",
    "find_eigenvalue_complex",
    "find_complex_in_box",
    "spectrum_scan",
]


class ShootingError(RuntimeError):
    """The shooting setup is invalid for the requested energy."""


@dataclass(frozen=True)
class ShootingConfig:
    """Knobs for ray integration and eigenvalue search.

    ``r_max_rule`` is ``(c_scale, wkb_exponent_target)``: the ray starts at
    the smallest r beyond ``c_scale * (|E| + 1)**(1/(2+eps))`` at which the
    WKB decay exponent measured from the turning radius exceeds the target.
    """

    r_max_rule: tuple = (1.5, 40.0)
    ode_ctrl: StepControl = field(default_factory=lambda: StepControl(rel_tol=1e-9, abs_tol=1e-12))
    match_tol: float = 1e-7
    # |D| below this is roundoff: D is a difference of unit vectors known to ~1e-16
    noise_floor: float = 1e-13
    e_grid_step: float = 0.05
    newton_tol: float = 1e-9
    divergence_cap: float = 1e3
    # multipliers for the (right, left) seeds; roots do not depend on them
    seed_scale: tuple = (1.0, 1.0)

    def __post_init__(self):
        c_scale, target = self.r_max_rule
        if not (c_scale > 1.0 and target > 0):
            raise ValueError("r_max_rule needs c_scale > 1 and a positive exponent target")
        if not (self.match_tol > 0 and self.noise_floor > 0 and self.e_grid_step > 0 and self.newton_tol > 0):
            raise ValueError("tolerances and grid step must be positive")
        if not self.divergence_cap > 0:
            raise ValueError("divergence_cap must be positive")
        if any(c == 0 for c in self.seed_scale):
            raise ValueError("seed scales must be nonzero")


DEFAULT_CONFIG = ShootingConfig()


@dataclass(frozen=True)
class RaySolution:
    K: int
    theta: float
    psi0: complex
    dpsi_dr0: complex
    r_max: float
    n_steps: int
    log10_growth: float
    n_rescaled: int

    @property
    def dpsi_dx0(self) -> complex:
        return rotation_factor(self.theta) * self.dpsi_dr0


@dataclass(frozen=True)
class MatchingResult:
    E: complex
    D: complex
    left: RaySolution
    right: RaySolution


@dataclass(frozen=True)
class SpectralPoint:
    """One eigenvalue at one eps; ``status`` is "ok" for a converged root.

    Other statuses mark a branch that failed ("not_converged"), ran past the
    divergence cap ("divergent"), or a degenerate ray pair ("degenerate").
    """

    epsilon: float
    K_pair: int
    E: complex
    residual: float
    branch_label: int
    is_real: bool
    status: str = "ok"


def is_real_energy(E: complex) -> bool:
    return abs(E.imag) <= 1e-6 * (1.0 + abs(E))


def ray_angle(K: int, epsilon: float) -> float:
    """Centre angle of wedge K, unreduced."""
    return wedge(K, epsilon).theta_center


def rotation_factor(theta: float) -> complex:
    """exp(-i theta): converts d/dr along a ray into d/dx."""
    return cmath.exp(-1j * theta)


def rays_coincide(K_pair: int, epsilon: float) -> bool:
    """True when both centre rays are the same curve on the Riemann surface.

    The two rays differ in phase by 2 theta_R + pi. For eps = p/q the
    surface repeats every 2 pi q, so a multiple of that makes the two decay
    conditions one and the same; D then vanishes for every E.
    """
    frac = rational_epsilon(epsilon)
    if frac is None:
        return False
    from fractions import Fraction

    # (theta_R - theta_L) / (2 pi) as an exact rational
    gap = Fraction(2 * (4 * K_pair + 2), 1) / (4 + frac) / 2
    return (gap / frac.denominator).denominator == 1


def _ray_coefficients(theta: float, epsilon: float):
    # psi'' = B (r^(2+eps) A - E) psi with B = e^{2i theta}, A = e^{i(2 theta + eps phi)}
    phi = theta + math.pi / 2
    B = cmath.exp(2j * theta)
    A = cmath.exp(1j * math.fmod(2 * theta + epsilon * phi, 2 * math.pi))
    return A, B


def _q_of_r(r, theta, E, epsilon):
    A, B = _ray_coefficients(theta, epsilon)
    return B * (np.asarray(r, dtype=float) ** (2 + epsilon) * A - E)


def _sqrt_right(q):
    s = np.sqrt(q + 0j)
    return np.where(s.real < 0, -s, s)


def r_max_for(theta: float, E: complex, epsilon: float, rule=(1.5, 40.0)) -> float:
    """Starting radius per the WKB exponent rule (see :class:`ShootingConfig`)."""
    c_scale, target = rule
    power = 2.0 + epsilon
    r_tp = abs(E) ** (1.0 / power)
    r_floor = c_scale * (abs(E) + 1.0) ** (1.0 / power)
    # far enough that r^(1+eps/2) alone would reach the target
    r_hi = max(r_floor, r_tp + (target * (1 + power / 2)) ** (1 / (1 + power / 2))) * 1.5
    for _ in range(20):
        r = np.linspace(r_tp, r_hi, 4001)
        s = _sqrt_right(_q_of_r(r, theta, E, epsilon)).real
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (s[1:] + s[:-1]) * np.diff(r))])
        ok = (cum > target) & (r > r_floor)
        if ok.any():
            i = int(np.argmax(ok))
            if i == 0 or r[i - 1] <= r_floor:
                return float(max(r[i], r_floor)) if cum[i] > target else float(r[i])
            # linear interpolation keeps r_max continuous in E
            frac = (target - cum[i - 1]) / (cum[i] - cum[i - 1])
            return float(max(r[i - 1] + frac * (r[i] - r[i - 1]), r_floor))
        r_hi *= 2.0
    raise ShootingError(f"no r_max found for theta={theta}, E={E}, eps={epsilon}")


def wkb_seed(theta: float, E: complex, epsilon: float, r_max: float) -> tuple[complex, complex]:
    """Decaying WKB tail (psi, dpsi/dr) at r_max on the ray of angle theta."""
    power = 2.0 + epsilon
    if not r_max > abs(E) ** (1.0 / power):
        raise ShootingError("r_max must lie beyond the turning-point radius")
    q = complex(_q_of_r(r_max, theta, E, epsilon))
    s = complex(_sqrt_right(q))
    if not s.real > 1e-3 * abs(s):
        raise ShootingError(f"decay rate not sign-definite at r_max={r_max:.4g} (s={s:.4g}); "
                            "increase r_max")
    psi = q ** -0.25
    return psi, -s * psi


@jit_rhs
def _ray_rhs(r, y, args):
    # args: Ar, Ai, Br, Bi, eps, Er, Ei
    A = complex(args[0], args[1])
    B = complex(args[2], args[3])
    E = complex(args[5], args[6])
    out = np.empty(2, dtype=np.complex128)
    out[0] = y[1]
    out[1] = B * (r ** (2.0 + args[4]) * A - E) * y[0]
    return out


_RENORM = 1e150


def shoot_ray(K: int, E: complex, epsilon: float, cfg: ShootingConfig = DEFAULT_CONFIG,
              *, r_max: float | None = None, scale: complex = 1.0) -> RaySolution:
    """Integrate the ray of wedge K from the WKB tail at r_max down to r = 0.

    The state is rescaled whenever it exceeds 1e150; the solution is only
    defined up to scale, and ``n_rescaled`` counts the events.
    """
    theta = ray_angle(K, epsilon)
    E = complex(E)
    if r_max is None:
        r_max = r_max_for(theta, E, epsilon, cfg.r_max_rule)
    psi, dpsi = wkb_seed(theta, E, epsilon, r_max)
    psi, dpsi = scale * psi, scale * dpsi
    A, B = _ray_coefficients(theta, epsilon)
    args = (A.real, A.imag, B.real, B.imag, float(epsilon), E.real, E.imag)
    try:
        trail = integrate_adaptive(_ray_rhs, [psi, dpsi], r_max, 0.0, cfg.ode_ctrl, args=args,
                                   record=False, renorm=_RENORM)
    except IntegrationError as exc:
        raise ShootingError(f"ray K={K} at E={E}: {exc}") from exc
    y = trail.y_final
    size0 = math.hypot(abs(psi), abs(dpsi))
    size1 = math.hypot(abs(y[0]), abs(y[1]))
    growth = math.log10(size1 / size0) + trail.n_rescaled * math.log10(_RENORM)
    return RaySolution(K, theta, complex(y[0]), complex(y[1]), float(r_max),
                       trail.n_accepted, growth, trail.n_rescaled)


def _unit(sol: RaySolution) -> tuple[complex, complex]:
    # psi and dpsi/dx scaled to unit norm; the scale is real so phases survive
    dx = sol.dpsi_dx0
    n = math.hypot(abs(sol.psi0), abs(dx))
    return sol.psi0 / n, dx / n


def matching(E: complex, epsilon: float, K_pair: int,
             cfg: ShootingConfig = DEFAULT_CONFIG) -> MatchingResult:
    """Mismatch of the two ray solutions at the origin.

    D = psi_L dpsi_R/dx - psi_R dpsi_L/dx, with each ray's solution scaled
    to unit norm at the origin so |D| <= 1 and vanishes at eigenvalues.
    """
    E = complex(E)
    right = shoot_ray(K_pair, E, epsilon, cfg, scale=cfg.seed_scale[0])
    left = shoot_ray(-K_pair - 1, E, epsilon, cfg, scale=cfg.seed_scale[1])
    pr, dr = _unit(right)
    pl, dl = _unit(left)
    return MatchingResult(E, dr * pl - dl * pr, left, right)


def matching_function(epsilon: float, K_pair: int, cfg: ShootingConfig = DEFAULT_CONFIG):
    """E -> D(E) as a plain callable."""
    return lambda E: matching(E, epsilon, K_pair, cfg).D


# ---------------------------------------------------------------- root search

def _alignment(D: np.ndarray) -> float:
    """Phase alpha making exp(-i alpha) D real along a real-E scan.

    Half the argument of sum(D^2): the square removes the sign ambiguity
    and weights each sample by |D|^2, so noisy small values barely count.
    """
    total = np.sum(np.asarray(D) ** 2)
    return 0.5 * cmath.phase(total) if total != 0 else 0.0


def _point(epsilon, K_pair, E, residual, label=-1, status="ok") -> SpectralPoint:
    E = complex(E)
    return SpectralPoint(float(epsilon), int(K_pair), E, float(residual), int(label),
                         status == "ok" and is_real_energy(E), status)


def _analytic_matching(epsilon, K_pair, cfg, guess: complex, radius: float):
    """E -> D(E) analytic in E near ``guess``, for Newton-type polishing.

    Unit scaling at the origin makes D non-analytic, which misleads secant
    steps far from a root. Here both rays start from one fixed r_max, large
    enough for every E within ``radius`` of the guess, and the raw D is
    divided by a single constant, |dD/dE| at the guess, so it stays analytic
    and its size near a simple root approximates the distance to it.
    """
    far = abs(guess) + radius
    r_fixed = {}
    for K in (K_pair, -K_pair - 1):
        theta = ray_angle(K, epsilon)
        r_fixed[K] = max(r_max_for(theta, guess, epsilon, cfg.r_max_rule),
                         r_max_for(theta, far, epsilon, cfg.r_max_rule))

    def raw(E):
        right = shoot_ray(K_pair, E, epsilon, cfg, r_max=r_fixed[K_pair], scale=cfg.seed_scale[0])
        left = shoot_ray(-K_pair - 1, E, epsilon, cfg, r_max=r_fixed[-K_pair - 1],
                         scale=cfg.seed_scale[1])
        scale = math.hypot(abs(right.psi0), abs(right.dpsi_dx0)) * math.hypot(abs(left.psi0), abs(left.dpsi_dx0))
        return right.dpsi_dx0 * left.psi0 - left.dpsi_dx0 * right.psi0, scale

    guess = complex(guess)
    _, c0 = raw(guess)
    # dividing by |dD/dE| at the guess makes |f| a distance in E near a simple root
    h = 1e-5 * (1.0 + abs(guess))
    slope = abs(raw(guess + h)[0] - raw(guess - h)[0]) / (2 * h)
    norm = slope if slope > 0 and math.isfinite(slope) else c0
    return lambda E: raw(complex(E))[0] / norm


def find_eigenvalue_complex(epsilon: float, K_pair: int, guess: complex,
                            cfg: ShootingConfig = DEFAULT_CONFIG, *,
                            max_jump: float | None = None, max_dist: float | None = None,
                            label: int = -1) -> SpectralPoint:
    """Polish a root of D from ``guess`` by complex secant iteration.

    The iteration runs on an analytic rescaling of D. The result has status
    "ok" when the iteration converged and the unit-scaled residual |D| is
    within ``cfg.match_tol``; otherwise "not_converged" with the best
    iterate. ``max_jump`` and ``max_dist`` confine the iteration as in
    :func:`find_root_complex`.
    """
    guess = complex(guess)
    if not cmath.isfinite(guess):
        raise ValueError("guess must be finite")
    if rays_coincide(K_pair, epsilon):
        return _point(epsilon, K_pair, guess, math.nan, label, "degenerate")
    radius = max_dist if max_dist is not None else max(abs(guess), 1.0)
    try:
        f = _analytic_matching(epsilon, K_pair, cfg, guess, radius)
        root = find_root_complex(f, guess, cfg.newton_tol, max_jump=max_jump, max_dist=max_dist)
        E = root.root
        if root.iterations:
            # the scale of f was fixed at the guess; refine with it fixed at the root
            near = 1e-2 * (1.0 + abs(E))
            f = _analytic_matching(epsilon, K_pair, cfg, E, near)
            E = find_root_complex(f, E, cfg.newton_tol, max_jump=near, max_dist=near).root
        converged = True
    except (RootNotConvergedError, ShootingError) as exc:
        E, converged = getattr(exc, "last", None), False
        if E is None:
            return _point(epsilon, K_pair, guess, math.nan, label, "not_converged")
    try:
        residual = abs(matching(E, epsilon, K_pair, cfg).D)
    except ShootingError:
        return _point(epsilon, K_pair, E, math.nan, label, "not_converged")
    ok = converged and residual <= cfg.match_tol
    return _point(epsilon, K_pair, E, residual, label, "ok" if ok else "not_converged")


def _real_grid(lo, hi, step):
    n = max(2, int(math.ceil((hi - lo) / step - 1e-9)) + 1)
    return np.linspace(lo, hi, n)


def _real_roots_on_grid(epsilon, K_pair, grid, cfg):
    """Refined real roots of D from sign changes of its phase-aligned real part."""
    D = np.array([matching(E, epsilon, K_pair, cfg).D for E in grid])
    rot = cmath.exp(-1j * _alignment(D))
    vals = (rot * D).real

    def proj(E):
        return (rot * matching(E, epsilon, K_pair, cfg).D).real

    roots = []
    for i in range(len(grid) - 1):
        a, b = vals[i], vals[i + 1]
        # sign flips of a D that is numerically zero all around are noise
        if np.max(np.abs(vals[max(i - 1, 0):i + 3])) < cfg.noise_floor:
            continue
        if a == 0.0:
            roots.append(float(grid[i]))
        elif a * b < 0:
            tol = 1e-12 * (1.0 + abs(grid[i]))
            roots.append(find_root_bracketed(proj, RootBracket(grid[i], grid[i + 1], a, b), tol))
    if vals[-1] == 0.0:
        roots.append(float(grid[-1]))
    return roots


def find_real_eigenvalues(epsilon: float, K_pair: int, E_window,
                          cfg: ShootingConfig = DEFAULT_CONFIG) -> list[SpectralPoint]:
    """Real eigenvalues of the pair (K_pair, -K_pair-1) with E in ``E_window``.

    Each sign change of the aligned D on a grid of spacing
    ``cfg.e_grid_step`` is refined by bracketing and then confirmed by a
    complex polish; candidates whose polish leaves the real axis are
    dropped. ``branch_label`` is the index in ascending order.
    """
    lo, hi = (float(v) for v in E_window)
    if not hi > lo:
        raise ValueError("E_window must have lo < hi")
    if rays_coincide(K_pair, epsilon):
        return []
    grid = _real_grid(lo, hi, cfg.e_grid_step)
    found = []
    for r in _real_roots_on_grid(epsilon, K_pair, grid, cfg):
        check = find_eigenvalue_complex(epsilon, K_pair, r, cfg, max_jump=cfg.e_grid_step,
                                        max_dist=cfg.e_grid_step)
        if check.status != "ok" or not check.is_real or abs(check.E - r) > cfg.e_grid_step:
            continue
        residual = abs(matching(r, epsilon, K_pair, cfg).D)
        if residual > cfg.match_tol:
            continue
        if found and abs(r - found[-1][0]) <= 1e-6 * (1.0 + abs(r)):
            continue
        found.append((r, residual))
    return [_point(epsilon, K_pair, r, res, i) for i, (r, res) in enumerate(found)]


def _winding(f, corners, per_side, depth=8):
    """Winding number of f around the closed polygon ``corners``."""
    total = 0.0
    for a, b in zip(corners, corners[1:] + corners[:1]):
        ts = np.linspace(0.0, 1.0, per_side + 1)
        zs = [a + (b - a) * t for t in ts]
        vals = [f(z) for z in zs]
        for j in range(per_side):
            total += _arg_increment(f, zs[j], zs[j + 1], vals[j], vals[j + 1], depth)
    return int(round(total / (2 * math.pi)))


def _arg_increment(f, za, zb, fa, fb, depth):
    if fa == 0 or fb == 0:
        raise ShootingError(f"root on the search contour near {za}")
    d = cmath.phase(fb / fa)
    if abs(d) < math.pi / 3 or depth == 0:
        return d
    zm = 0.5 * (za + zb)
    fm = f(zm)
    return (_arg_increment(f, za, zm, fa, fm, depth - 1)
            + _arg_increment(f, zm, zb, fm, fb, depth - 1))


def find_complex_in_box(epsilon: float, K_pair: int, re_range, im_range,
                        cfg: ShootingConfig = DEFAULT_CONFIG, *, per_side: int = 12,
                        max_depth: int = 6) -> list[SpectralPoint]:
    """All roots of D inside a rectangle, located by the argument principle.

    The winding number of D around the box counts its zeros; boxes holding
    several are quartered until each holds one, which is then polished from
    the box centre. Roots on the boundary raise :class:`ShootingError`.
    """
    (x0, x1), (y0, y1) = sorted(map(float, re_range)), sorted(map(float, im_range))
    if not (x1 > x0 and y1 > y0):
        raise ValueError("box must have positive extent")
    if rays_coincide(K_pair, epsilon):
        return []
    f = matching_function(epsilon, K_pair, cfg)
    out = []

    def visit(x0, x1, y0, y1, depth):
        corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
        n = _winding(f, corners, per_side)
        if n <= 0:
            return
        if n == 1 or depth == 0:
            centre = complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))
            size = max(x1 - x0, y1 - y0)
            pt = find_eigenvalue_complex(epsilon, K_pair, centre, cfg, max_jump=0.5 * size,
                                         max_dist=size)
            inside = x0 <= pt.E.real <= x1 and y0 <= pt.E.imag <= y1
            if pt.status == "ok" and inside:
                out.append(pt)
            elif n == 1 and depth > 0:
                # polish escaped the box: quarter it and try again
                split(x0, x1, y0, y1, depth)
            return
        split(x0, x1, y0, y1, depth)

    def split(x0, x1, y0, y1, depth):
        xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        for a, b, c, d in ((x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)):
            visit(a, b, c, d, depth - 1)

    visit(x0, x1, y0, y1, max_depth)
    out.sort(key=lambda p: (p.E.real, p.E.imag))
    return out


# ------------------------------------------------------------ epsilon scans

@dataclass
class _Branch:
    label: int
    history: list  # (eps, E) of accepted points
    partner: int | None = None
    alive: bool = True

    @property
    def last(self) -> complex:
        return self.history[-1][1]

    @property
    def is_complex(self) -> bool:
        return not is_real_energy(self.last)

    @property
    def moved(self) -> float:
        return abs(self.history[-1][1] - self.history[-2][1]) if len(self.history) > 1 else 0.0

    def predict(self, eps: float) -> complex:
        if len(self.history) < 2:
            return self.last
        (e0, E0), (e1, E1) = self.history[-2:]
        if is_real_energy(E0) != is_real_energy(E1):
            return E1
        return E1 + (E1 - E0) * (eps - e1) / (e1 - e0)

    def reach(self, cfg: ShootingConfig, spacing: float = 0.0) -> float:
        """How far the next point may sit from the prediction.

        Up to the gap to the nearest neighbouring level: the order-preserving
        alignment keeps a branch from taking its neighbour's root.
        """
        return max(2 * cfg.e_grid_step, 3 * self.moved, spacing)


def _fresh_real(args):
    eps, K_pair, window, cfg = args
    if rays_coincide(K_pair, eps):
        return None
    return [p.E.real for p in find_real_eigenvalues(eps, K_pair, window, cfg)]


def _escape_scan(eps, K_pair, start, cfg):
    """First real root of D above ``start``, as ``(root, searched_to)``.

    ``root`` is None when there is no sign change before the divergence
    cap, or before D drops below ``cfg.noise_floor``; ``searched_to`` is
    the energy where the search stopped, so callers can tell the two apart.
    """
    f = matching_function(eps, K_pair, cfg)
    E, dE = start, f(start)
    if abs(dE) < cfg.noise_floor:
        return None, E
    rot = cmath.exp(-1j * cmath.phase(dE))
    fE = (rot * dE).real
    while E < cfg.divergence_cap:
        nxt = min(E + max(cfg.e_grid_step, 0.02 * E), cfg.divergence_cap)
        d = f(nxt)
        if abs(d) < cfg.noise_floor:
            return None, nxt
        fn = (rot * d).real
        if fE * fn < 0:
            proj = lambda z: (rot * f(z)).real  # noqa: E731
            return find_root_bracketed(proj, RootBracket(E, nxt, fE, fn), 1e-12 * (1 + nxt)), nxt
        E, fE = nxt, fn
    return None, E


def spectrum_scan(K_pair: int, epsilons, E_window, cfg: ShootingConfig = DEFAULT_CONFIG, *,
                  workers: int = 1, seed: list[SpectralPoint] | None = None) -> list[SpectralPoint]:
    """Eigenvalue branches of the pair (K_pair, -K_pair-1) followed across an eps grid.

    Work is split in two passes. First an independent real scan of
    ``E_window`` at every grid point, run on ``workers`` processes. Then a
    sequential pass stitches these into branches, seeded from the first grid
    point (labels n for E = 2n+1 at eps = 0, or the labels in ``seed``):

    * a real branch takes the fresh real root nearest its linear
      prediction, in order and within reach; a branch with a single point
      first gets a slope from a short probe step;
    * two adjacent real branches that lose their roots together, and were
      within 10 * e_grid_step or predicted to cross, have met at an
      exceptional point and continue as a complex-conjugate pair polished
      from their midpoint;
    * a lone real branch that loses its root near the window may have met
      a level above it: a nearby complex root continues it, and its
      conjugate opens a new branch. Otherwise it follows the next unclaimed
      real root upward, and is marked "divergent" when there is none
      below ``cfg.divergence_cap`` or before D fades into roundoff well
      past its prediction. Branches lost above the window end silently;
    * complex branches are continued by complex polishing and rejoin the
      real axis when their pair splits back into two real roots;
    * unclaimed real roots start new branches (re-emerging eigenvalues).

    Every grid point yields at least one row: points with nothing to report
    carry status "empty", coincident ray pairs "degenerate". Rows are ordered
    by (grid index, branch_label) whatever the worker count.
    """
    eps_grid = [float(e) for e in epsilons]
    if not eps_grid:
        raise ValueError("empty epsilon grid")
    if any(b <= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("epsilon grid must be strictly increasing")
    if seed is None and eps_grid[0] != 0.0:
        raise ValueError("grid must start at eps = 0 unless a seed is supplied")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    window = tuple(float(v) for v in E_window)

    tasks = [(e, K_pair, window, cfg) for e in eps_grid]
    if workers == 1:
        fresh = [_fresh_real(t) for t in tasks]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            fresh = list(pool.map(_fresh_real, tasks))

    rows: list[SpectralPoint] = []
    branches: dict[int, _Branch] = {}
    if seed is None:
        start = fresh[0] or []
        for E in start:
            label = int(round((E - 1.0) / 2.0))
            if label in branches:
                label = max(branches) + 1
            branches[label] = _Branch(label, [(eps_grid[0], complex(E))])
            rows.append(_point(eps_grid[0], K_pair, E, abs(matching(E, eps_grid[0], K_pair, cfg).D), label))
    else:
        for p in seed:
            if p.status == "ok":
                branches[p.branch_label] = _Branch(p.branch_label, [(eps_grid[0], p.E)])
                rows.append(replace(p, epsilon=eps_grid[0], K_pair=K_pair))
        for b in branches.values():
            if b.is_complex:
                twin = [o for o in branches.values()
                        if o is not b and abs(o.last - b.last.conjugate()) <= 1e-6 * (1 + abs(b.last))]
                b.partner = twin[0].label if twin else None
    if not any(r.epsilon == eps_grid[0] for r in rows):
        rows.append(_empty_row(eps_grid[0], K_pair, fresh[0] is None))

    for i in range(1, len(eps_grid)):
        eps = eps_grid[i]
        n_before = len(rows)
        if fresh[i] is None:
            rows.append(_empty_row(eps, K_pair, True))
            continue
        rows.extend(_advance(branches, eps, K_pair, fresh[i], cfg, window[1]))
        if len(rows) == n_before:
            rows.append(_empty_row(eps, K_pair, False))

    index = {e: k for k, e in enumerate(eps_grid)}
    rows.sort(key=lambda p: (index[p.epsilon], p.branch_label))
    return rows


def _empty_row(eps, K_pair, degenerate):
    return _point(eps, K_pair, complex(math.nan, math.nan), math.nan, -1,
                  "degenerate" if degenerate else "empty")


def _align(preds, reach, roots):
    """Order-preserving matching of predicted branch values to sorted roots.

    Maximises the number of pairs with |root - pred| <= reach, then
    minimises their total distance. Real eigenvalues keep their order as
    eps moves, which is what makes the order constraint safe.
    """
    n, m = len(preds), len(roots)
    # score[i][j]: best (pairs, -distance) using the first i branches and j roots
    score = [[(0, 0.0)] * (m + 1) for _ in range(n + 1)]
    move = [[None] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        for j in range(m + 1):
            if i == 0 and j == 0:
                continue
            best, how = None, None
            if i > 0:
                best, how = score[i - 1][j], "skip_branch"
            if j > 0 and (best is None or score[i][j - 1] > best):
                best, how = score[i][j - 1], "skip_root"
            if i > 0 and j > 0:
                d = abs(roots[j - 1] - preds[i - 1])
                if d <= reach[i - 1]:
                    prev = score[i - 1][j - 1]
                    cand = (prev[0] + 1, prev[1] - d)
                    if cand > best:
                        best, how = cand, "match"
            score[i][j], move[i][j] = best, how
    out = {}
    i, j = n, m
    while i > 0 or j > 0:
        how = move[i][j]
        if how == "match":
            out[i - 1] = j - 1
            i, j = i - 1, j - 1
        elif how == "skip_branch":
            i -= 1
        else:
            j -= 1
    return out


def _advance(branches: dict, eps: float, K_pair: int, reals: list, cfg: ShootingConfig, e_top: float):
    """Move every live branch to ``eps``; returns the new rows."""
    rows = []
    free = sorted(reals)
    claimed = set()
    live = [b for b in branches.values() if b.alive]

    real_br = sorted((b for b in live if not b.is_complex), key=lambda b: b.last.real)
    lasts = [b.last.real for b in real_br]
    spacing = []
    for k in range(len(real_br)):
        gaps = [abs(lasts[k] - lasts[q]) for q in (k - 1, k + 1) if 0 <= q < len(lasts)]
        spacing.append(min(gaps) if gaps else 2.0)
    for b, sp in zip(real_br, spacing):
        if len(b.history) == 1:
            _probe_slope(b, eps, K_pair, cfg, 0.25 * sp)
    reach = [b.reach(cfg, sp) for b, sp in zip(real_br, spacing)]
    match = _align([b.predict(eps).real for b in real_br], reach, free)
    for k, j in match.items():
        claimed.add(j)
        _accept(real_br[k], eps, complex(free[j]), K_pair, cfg, rows)

    # lost real branches: adjacent pairs that vanish together have coalesced
    taken = [free[j] for j in claimed]
    k = 0
    while k < len(real_br):
        if k in match:
            k += 1
            continue
        b = real_br[k]
        nb = real_br[k + 1] if k + 1 < len(real_br) and (k + 1) not in match else None
        if nb is not None and _meeting(b, nb, eps, cfg):
            _coalesce(b, nb, eps, K_pair, cfg, rows)
            k += 2
            continue
        if _lost_single(b, eps, K_pair, cfg, rows, reach[k], taken, e_top) and b.alive:
            # its partner was never tracked; add the conjugate as a new branch
            label = max(branches) + 1
            branches[label] = _Branch(label, [], partner=b.label)
            b.partner = label
            _accept(branches[label], eps, b.last.conjugate(), K_pair, cfg, rows, rows[-1].residual)
        k += 1

    # complex branches, one polish per conjugate pair
    seen = set()
    for b in sorted(live, key=lambda b: b.label):
        if not b.alive or not b.is_complex or b.label in seen or b.history[-1][0] == eps:
            continue
        mate = branches.get(b.partner) if b.partner is not None else None
        if mate is not None and (not mate.alive or mate.history[-1][0] == eps):
            mate = None
        seen.add(b.label)
        if mate is not None:
            seen.add(mate.label)
        _continue_complex(b, mate, eps, K_pair, cfg, rows, free, claimed)

    # unclaimed real roots open new branches
    next_label = max(branches, default=-1) + 1
    for j, r in enumerate(free):
        if j in claimed:
            continue
        branches[next_label] = _Branch(next_label, [])
        _accept(branches[next_label], eps, complex(r), K_pair, cfg, rows)
        next_label += 1
    return rows


def _probe_slope(b: _Branch, eps: float, K_pair: int, cfg: ShootingConfig, radius: float):
    """Give a one-point real branch a slope from a short step towards ``eps``.

    The probe joins the history, so :meth:`_Branch.predict` extrapolates
    instead of assuming the level stands still.
    """
    e0, E0 = b.history[-1]
    e1 = e0 + 0.05 * (eps - e0)
    if rays_coincide(K_pair, e1):
        return
    radius = max(radius, cfg.e_grid_step)
    pt = find_eigenvalue_complex(e1, K_pair, E0, cfg, max_jump=radius / 2, max_dist=radius)
    if pt.status == "ok" and pt.is_real:
        b.history.append((e1, complex(pt.E.real)))


def _accept(b: _Branch, eps, E, K_pair, cfg, rows, residual=None):
    if abs(E) > cfg.divergence_cap:
        _terminate(b, eps, K_pair, "divergent", rows)
        return
    if residual is None:
        residual = abs(matching(E, eps, K_pair, cfg).D)
    b.history.append((eps, complex(E)))
    rows.append(_point(eps, K_pair, E, residual, b.label))


def _terminate(b: _Branch, eps, K_pair, status, rows):
    b.alive = False
    rows.append(_point(eps, K_pair, complex(math.nan, math.nan), math.nan, b.label, status))


def _complex_near(eps, K_pair, centre: complex, offsets, radius, cfg):
    """Closest non-real root to ``centre`` among polishes from centre + i*offset."""
    best = None
    for o in offsets:
        pt = find_eigenvalue_complex(eps, K_pair, complex(centre.real, centre.imag + o), cfg,
                                     max_jump=radius / 2, max_dist=radius)
        if pt.status != "ok" or pt.is_real or abs(pt.E) > cfg.divergence_cap:
            continue
        # max_dist is measured from the offset start, not from the centre
        if abs(pt.E - centre) > radius:
            continue
        if best is None or abs(pt.E - centre) < abs(best.E - centre):
            best = pt
    return best


def _meeting(b: _Branch, nb: _Branch, eps, cfg) -> bool:
    """Whether two adjacent lost real branches look like a coalescing pair.

    Either they were already close, or their predictions cross or close
    most of the remaining gap.
    """
    gap = abs(nb.last.real - b.last.real)
    ahead = nb.predict(eps).real - b.predict(eps).real
    return gap <= 10 * cfg.e_grid_step or ahead <= 0.5 * gap


def _coalesce(b: _Branch, nb: _Branch, eps, K_pair, cfg, rows):
    """Two neighbouring real branches met: continue them as a conjugate pair.

    Past the meeting point the imaginary part grows like a square root, so
    the search radius also scales with how far the branches just moved.
    """
    gap = max(abs(nb.last.real - b.last.real), cfg.e_grid_step)
    scale = max(gap, b.moved, nb.moved)
    mid = complex(0.5 * (b.predict(eps) + nb.predict(eps)).real, 0.0)
    pt = _complex_near(eps, K_pair, mid, (0.5 * gap, gap, 2 * scale, 4 * scale),
                       2 * scale + 5 * cfg.e_grid_step, cfg)
    if pt is None:
        _terminate(b, eps, K_pair, "not_converged", rows)
        _terminate(nb, eps, K_pair, "not_converged", rows)
        return
    z = complex(pt.E.real, abs(pt.E.imag))
    b.partner, nb.partner = nb.label, b.label
    _accept(b, eps, z, K_pair, cfg, rows, pt.residual)
    _accept(nb, eps, z.conjugate(), K_pair, cfg, rows, pt.residual)


def _lost_single(b: _Branch, eps, K_pair, cfg, rows, reach, taken: list, e_top: float):
    """A real branch whose root vanished from the fresh scan without a partner.

    Inside the window its partner may lie above ``e_top``, so a nearby
    complex root is tried first; above the window the shooting is too
    coarse for this. Otherwise
    the real axis is searched upward, skipping roots in ``taken``. A rising branch is marked
    "divergent" when that search finds no root up to the divergence cap,
    or up to where D is lost in roundoff well beyond the prediction. A
    branch lost above the window is retired without a row. Returns True
    when the branch moved onto a complex root.
    """
    guess = b.predict(eps)
    if b.last.real <= e_top:
        step = max(b.moved, cfg.e_grid_step)
        pt = _complex_near(eps, K_pair, complex(guess.real, 0.0), (step, 2 * step, 4 * step),
                           2 * reach, cfg)
        if pt is not None:
            z = pt.E if pt.E.imag > 0 else pt.E.conjugate()
            _accept(b, eps, z, K_pair, cfg, rows, pt.residual)
            return True
    start = max(b.last.real, 0.0)
    try:
        for _ in range(len(taken) + 1):
            up, searched_to = _escape_scan(eps, K_pair, start, cfg)
            # roots already claimed at this eps belong to other branches
            if up is None or not any(abs(up - t) <= 1e-6 * (1 + abs(t)) for t in taken):
                break
            start = up + 1e-6 * (1 + abs(up))
    except ShootingError:
        up, searched_to = None, start
    if up is not None and abs(up - guess.real) <= reach:
        taken.append(up)
        _accept(b, eps, complex(up), K_pair, cfg, rows)
        return False
    # divergence needs a search that got well past where the branch should be
    rising = len(b.history) > 1 and b.history[-1][1].real > b.history[-2][1].real
    if up is None and rising and searched_to > guess.real + reach:
        _terminate(b, eps, K_pair, "divergent", rows)
    elif b.last.real > e_top:
        # lost track above the window: nothing to report inside it
        b.alive = False
    else:
        _terminate(b, eps, K_pair, "not_converged", rows)
    return False


def _follow(b: _Branch, eps: float, K_pair: int, cfg: ShootingConfig):
    """Carry a complex branch to ``eps`` with adaptive sub-steps in eps.

    Each sub-step polishes from a linear extrapolation and must land within
    a radius tied to the predicted move; otherwise the sub-step is halved.
    Returns the final point or None when the step would have to shrink
    below 1/64 of the grid spacing.
    """
    track = [(e, z) for e, z in b.history[-2:] if not is_real_energy(z)]
    e_cur = track[-1][0]
    h = eps - e_cur
    h_min = h / 64
    last = None
    while e_cur < eps:
        e_next = min(e_cur + h, eps)
        z_cur = track[-1][1]
        if len(track) > 1:
            (e0, z0), (e1, z1) = track[-2:]
            guess = z1 + (z1 - z0) * (e_next - e1) / (e1 - e0)
        else:
            guess = z_cur
        radius = max(2 * cfg.e_grid_step, 2 * abs(guess - z_cur))
        pt = find_eigenvalue_complex(eps if e_next == eps else e_next, K_pair, guess, cfg,
                                     max_jump=radius / 2, max_dist=radius)
        if pt.status == "ok" and not pt.is_real and abs(pt.E - guess) <= radius:
            z = pt.E if (pt.E.imag > 0) == (z_cur.imag > 0) else pt.E.conjugate()
            track.append((e_next, z))
            e_cur, last = e_next, replace(pt, E=z)
            h = min(2 * h, eps - e_cur) if e_cur < eps else h
            continue
        h /= 2
        if h < h_min:
            return None
    return last


def _continue_complex(b, mate, eps, K_pair, cfg, rows, free, claimed):
    upper = b if b.last.imag > 0 or mate is None else mate
    pt = _follow(upper, eps, K_pair, cfg)
    if pt is not None:
        if abs(pt.E) > cfg.divergence_cap:
            for m in (b, mate):
                if m is not None:
                    _terminate(m, eps, K_pair, "divergent", rows)
            return
        _accept(upper, eps, pt.E, K_pair, cfg, rows, pt.residual)
        if mate is not None:
            _accept(mate if upper is b else b, eps, pt.E.conjugate(), K_pair, cfg, rows, pt.residual)
        return
    # the pair may have split back onto the real axis
    guess = upper.predict(eps)
    members = sorted((m for m in (b, mate) if m is not None), key=lambda m: m.label)
    window = max(upper.reach(cfg), 3 * abs(guess.imag))
    cand = sorted((abs(free[j] - guess.real), j) for j in range(len(free))
                  if j not in claimed and abs(free[j] - guess.real) <= window)
    if len(cand) >= len(members):
        picks = sorted(j for _, j in cand[:len(members)])
        for m, j in zip(members, picks):
            claimed.add(j)
            m.partner = None
            _accept(m, eps, complex(free[j]), K_pair, cfg, rows)
        return
    for m in members:
        _terminate(m, eps, K_pair, "not_converged", rows)
