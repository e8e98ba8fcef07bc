import cmath
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptsym.numerics import RootBracket, find_root_bracketed
from ptsym.quantum import (
    DEFAULT_CONFIG,
    ShootingConfig,
    ShootingError,
    find_complex_in_box,
    find_eigenvalue_complex,
    find_real_eigenvalues,
    is_real_energy,
    matching,
    r_max_for,
    ray_angle,
    rays_coincide,
    shoot_ray,
    spectrum_scan,
    wkb_seed,
)

from .oracles import contour_spectrum

PI = math.pi


def _reals(eps, K_pair, window, cfg=DEFAULT_CONFIG):
    return [p.E.real for p in find_real_eigenvalues(eps, K_pair, window, cfg)]


def _oracle_reals(eps, K_pair, hi, count=12):
    ev = contour_spectrum(eps, K_pair, count=count)
    return [z.real for z in ev if abs(z.imag) < 1e-6 * (1 + abs(z)) and z.real < hi]


# ------------------------------------------------------------ rays and seeds

@pytest.mark.parametrize("K, eps, theta", [(0, 0.0, 0.0), (-1, 0.0, -PI), (1, 4.0, PI / 4)])
def test_ray_angles(K, eps, theta):
    assert ray_angle(K, eps) == pytest.approx(theta, abs=1e-15)


def test_harmonic_seed_decays():
    psi, dpsi = wkb_seed(0.0, 1.0, 0.0, 10.0)
    s = -dpsi / psi
    assert s == pytest.approx(math.sqrt(99.0), rel=1e-14)
    assert psi.real > 0 and dpsi.real < 0 and abs(dpsi.imag) < 1e-15


@given(st.floats(min_value=-3 * PI, max_value=3 * PI),
       st.complex_numbers(max_magnitude=20, allow_nan=False, allow_infinity=False),
       st.floats(min_value=0, max_value=6))
def test_seed_always_decays_outward(theta, E, eps):
    r_max = r_max_for(theta, E, eps)
    try:
        psi, dpsi = wkb_seed(theta, E, eps, r_max)
    except ShootingError:
        return
    assert (-dpsi / psi).real > 0


def test_seed_rejects_radius_inside_turning_point():
    with pytest.raises(ShootingError):
        wkb_seed(0.0, 9.0, 0.0, 2.0)


def test_seed_is_the_decaying_solution():
    # moving inward from the seed the tail grows monotonically until the turning radius
    from ptsym.numerics import StepControl, integrate_adaptive
    from ptsym.quantum import _ray_coefficients, _ray_rhs

    theta, eps, E = ray_angle(0, 1.0), 1.0, 1.15
    r0 = r_max_for(theta, E, eps)
    r_tp = abs(E) ** (1 / 3)
    psi, dpsi = wkb_seed(theta, E, eps, r0)
    A, B = _ray_coefficients(theta, eps)
    trail = integrate_adaptive(_ray_rhs, [psi, dpsi], r0, 1.5 * r_tp,
                               StepControl(rel_tol=1e-12, abs_tol=1e-30),
                               args=(A.real, A.imag, B.real, B.imag, eps, E, 0.0))
    mag = np.abs(trail.y[:, 0])
    assert np.all(np.diff(mag) > 0)
    assert mag[-1] > 1e10 * mag[0]


def test_r_max_clears_the_turning_point():
    for eps in (0.0, 1.0, 4.0):
        for E in (0.5, 10.0, 30.0 + 5j):
            r = r_max_for(ray_angle(1, eps), E, eps)
            assert r > abs(E) ** (1 / (2 + eps))
            assert r > 1.5 * (abs(E) + 1) ** (1 / (2 + eps)) - 1e-12


def test_harmonic_ground_state_is_even():
    sol = shoot_ray(0, 1.0, 0.0)
    assert abs(sol.dpsi_dr0) <= 1e-7 * abs(sol.psi0)
    assert sol.log10_growth > 0


def test_harmonic_first_excited_state_is_odd():
    sol = shoot_ray(0, 3.0, 0.0)
    assert abs(sol.psi0) <= 1e-7 * abs(sol.dpsi_dr0)


def test_rescaling_keeps_long_rays_finite():
    # exp(r^2 / 2) from r = 40 passes the 1e150 rescale threshold twice
    sol = shoot_ray(0, 1.0, 0.0, r_max=40.0)
    assert sol.n_rescaled == 2 and sol.log10_growth > 300
    assert cmath.isfinite(sol.psi0) and cmath.isfinite(sol.dpsi_dr0)
    assert abs(sol.dpsi_dr0) <= 1e-7 * abs(sol.psi0)


# ------------------------------------------------------------------ matching

def test_matching_vanishes_at_harmonic_ground_state():
    assert abs(matching(1.0, 0.0, 0).D) <= DEFAULT_CONFIG.match_tol


def test_matching_is_large_between_harmonic_levels():
    assert abs(matching(2.0, 0.0, 0).D) > 0.1


def test_cubic_ground_state_minimises_mismatch():
    E0 = 1.156267072
    near = abs(matching(E0, 1.0, 0).D)
    assert near <= DEFAULT_CONFIG.match_tol
    assert abs(matching(E0 - 0.05, 1.0, 0).D) > 100 * near
    assert abs(matching(E0 + 0.05, 1.0, 0).D) > 100 * near


def test_reflected_pair_shares_the_quartic_levels():
    for E in _reals(4.0, 0, (0, 30)):
        assert abs(matching(E, 4.0, 1).D) <= DEFAULT_CONFIG.match_tol


def test_conjugation_symmetry_of_the_mismatch():
    rng = np.random.default_rng(20)
    Es = list(rng.uniform(0.5, 20, 10)) + list(rng.uniform(0.5, 20, 10) + 1j * rng.uniform(-5, 5, 10))
    for eps, K_pair in ((0.6, 1), (1.0, 0), (3.5, 2)):
        ratios = []
        for E in Es:
            d = matching(E, eps, K_pair).D
            dc = matching(complex(E).conjugate(), eps, K_pair).D
            ratios.append(dc / d.conjugate())
        ratios = np.array(ratios)
        np.testing.assert_allclose(np.abs(ratios), 1.0, atol=1e-6)
        np.testing.assert_allclose(ratios, ratios[0], atol=1e-6)


def test_seed_scale_leaves_roots_alone():
    big = replace(DEFAULT_CONFIG, seed_scale=(1e3, 1.0))
    for eps, K_pair in ((1.0, 0), (4.0, 1)):
        a = _reals(eps, K_pair, (0, 20))
        b = _reals(eps, K_pair, (0, 20), big)
        assert len(a) == len(b) > 0
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def test_coincident_rays():
    assert rays_coincide(1, 2.0) and rays_coincide(2, 6.0) and rays_coincide(2, 1.0)
    assert not rays_coincide(0, 4.0) and not rays_coincide(1, 4.0) and not rays_coincide(1, math.sqrt(2))
    # the mismatch is identically zero there, not just at eigenvalues
    for E in (1.0, 7.3, 12.0 + 2j):
        assert abs(matching(E, 2.0, 1).D) < 1e-12


# ------------------------------------------------------------- real spectra

def test_harmonic_levels():
    got = _reals(0.0, 0, (0, 16))
    np.testing.assert_allclose(got, [1, 3, 5, 7, 9, 11, 13, 15], rtol=0, atol=1e-6)


@pytest.mark.parametrize("K_pair", [1, 2])
def test_harmonic_levels_for_every_pair(K_pair):
    got = _reals(0.0, K_pair, (0, 16))
    np.testing.assert_allclose(got, [1, 3, 5, 7, 9, 11, 13, 15], rtol=0, atol=1e-6)


def test_no_real_levels_in_the_gap():
    assert find_real_eigenvalues(2.0, 1, (0, 30)) == []
    assert find_real_eigenvalues(1.7, 1, (0, 30)) == []


def test_labels_and_residuals():
    pts = find_real_eigenvalues(1.0, 0, (0, 20))
    assert [p.branch_label for p in pts] == list(range(len(pts)))
    assert all(p.is_real and p.status == "ok" and p.residual <= DEFAULT_CONFIG.match_tol for p in pts)
    assert [p.E.real for p in pts] == sorted(p.E.real for p in pts)


def test_bad_window():
    with pytest.raises(ValueError):
        find_real_eigenvalues(1.0, 0, (5, 5))


@pytest.mark.parametrize("eps, K_pair, hi", [
    (0.0, 2, 16), (1.0, 0, 20), (2.0, 0, 20), (4.0, 0, 30), (4.0, 1, 20), (3.5, 1, 10), (8.0, 2, 10),
])
def test_real_levels_match_collocation(eps, K_pair, hi):
    want = _oracle_reals(eps, K_pair, hi)
    got = _reals(eps, K_pair, (0, hi))
    assert len(got) == len(want) > 0
    np.testing.assert_allclose(got, want, rtol=1e-6)


@pytest.mark.parametrize("eps, K_pair", [(4.0, 1), (2.0, 2), (4.0, 2), (8.0, 2)])
def test_reflected_pairs_repeat_the_wedge_zero_spectrum(eps, K_pair):
    base = _reals(eps, 0, (0, 30))
    other = _reals(eps, K_pair, (0, 30))
    if rays_coincide(K_pair, eps):
        assert other == []
        return
    assert len(other) == len(base)
    np.testing.assert_allclose(other, base, rtol=0, atol=1e-4)


def test_real_levels_stable_under_tolerances():
    eps, K_pair = 1.0, 0
    base = _reals(eps, K_pair, (0, 20))
    tight = replace(DEFAULT_CONFIG, ode_ctrl=DEFAULT_CONFIG.ode_ctrl.scaled(0.5))
    np.testing.assert_allclose(_reals(eps, K_pair, (0, 20), tight), base,
                               rtol=0, atol=1e-6 * (1 + max(base)))
    # start both rays 25% further out and re-solve each root
    for E0 in base:
        r = {K: 1.25 * r_max_for(ray_angle(K, eps), E0 + 1, eps) for K in (K_pair, -K_pair - 1)}

        def d(E):
            right = shoot_ray(K_pair, E, eps, r_max=r[K_pair])
            left = shoot_ray(-K_pair - 1, E, eps, r_max=r[-K_pair - 1])
            return right.dpsi_dx0 * left.psi0 - left.dpsi_dx0 * right.psi0

        lo, hi = E0 - 1e-3, E0 + 1e-3
        rot = cmath.exp(-1j * cmath.phase(d(lo)))
        f = lambda E: (rot * d(E)).real  # noqa: E731
        moved = find_root_bracketed(f, RootBracket.from_function(f, lo, hi), 1e-13)
        assert abs(moved - E0) <= 1e-6 * (1 + E0)


# ----------------------------------------------------------- complex spectra

def test_polish_leaves_a_converged_root_alone():
    E = _reals(1.0, 0, (0, 3))[0]
    pt = find_eigenvalue_complex(1.0, 0, E)
    assert pt.status == "ok" and pt.E == E


def test_coalesced_high_pair_is_conjugate():
    guess = contour_spectrum(0.1, 1, count=22)
    guess = [z for z in guess if 34 < z.real < 36 and z.imag > 0][0]
    pt = find_eigenvalue_complex(0.1, 1, guess + 0.05)
    assert pt.status == "ok" and not pt.is_real
    assert pt.E == pytest.approx(guess, abs=1e-3)
    twin = find_eigenvalue_complex(0.1, 1, pt.E.conjugate())
    assert twin.status == "ok" and twin.E == pytest.approx(pt.E.conjugate(), abs=1e-8)


def test_complex_pair_at_small_eps():
    guess = 6.33 + 3.37j
    pt = find_eigenvalue_complex(0.6, 1, guess)
    assert pt.status == "ok" and pt.residual <= DEFAULT_CONFIG.newton_tol
    assert pt.E == pytest.approx(6.332353 + 3.369757j, abs=1e-5)
    tight = replace(DEFAULT_CONFIG, ode_ctrl=DEFAULT_CONFIG.ode_ctrl.scaled(0.5),
                    newton_tol=DEFAULT_CONFIG.newton_tol / 2)
    again = find_eigenvalue_complex(0.6, 1, pt.E, tight)
    assert abs(again.E - pt.E) <= 1e-6 * (1 + abs(pt.E))


def test_box_search_finds_closed_conjugate_set():
    upper = find_complex_in_box(0.6, 1, (0, 12), (0.01, 10))
    lower = find_complex_in_box(0.6, 1, (0, 12), (-10, -0.01))
    assert len(upper) == len(lower) == 2
    for a, b in zip(upper, lower):
        assert abs(a.E - b.E.conjugate()) <= 1e-6
    want = [z for z in contour_spectrum(0.6, 1, count=10) if z.imag > 0.01 and z.real < 12]
    np.testing.assert_allclose([p.E for p in upper], sorted(want, key=lambda z: z.real), atol=1e-4)


def test_box_search_on_coincident_rays_is_empty():
    assert find_complex_in_box(2.0, 1, (0, 10), (0.1, 5)) == []


def test_polish_on_coincident_rays_is_degenerate():
    assert find_eigenvalue_complex(2.0, 1, 3.0).status == "degenerate"


def test_polish_rejects_non_finite_guess():
    with pytest.raises(ValueError):
        find_eigenvalue_complex(1.0, 0, complex(math.nan, 0))


@settings(max_examples=30)
@given(st.complex_numbers(max_magnitude=1e4, allow_nan=False, allow_infinity=False))
def test_reality_threshold(E):
    assert is_real_energy(E) == (abs(E.imag) <= 1e-6 * (1 + abs(E)))


# -------------------------------------------------------------------- scans

def _by_eps(rows):
    out = {}
    for r in rows:
        out.setdefault(r.epsilon, []).append(r)
    return out


@pytest.mark.slow
def test_wedge_zero_scan_stays_real_and_rises():
    grid = [round(0.25 * i, 12) for i in range(17)]
    rows = spectrum_scan(0, grid, (0, 20))
    ok = [r for r in rows if r.status == "ok"]
    assert all(r.is_real for r in ok)
    per_label = {}
    for r in ok:
        per_label.setdefault(r.branch_label, []).append((r.epsilon, r.E.real))
    assert per_label[0][0] == (0.0, pytest.approx(1.0, abs=1e-6))
    for label, track in per_label.items():
        values = [E for _, E in sorted(track)]
        assert all(b > a for a, b in zip(values, values[1:])), label
    # branches that rise out of the window end without a failure row
    assert ok == rows
    # every in-window level is on a branch, matching a fresh scan
    for e in (1.0, 4.0):
        here = sorted(r.E.real for r in ok if r.epsilon == e and r.E.real < 20)
        np.testing.assert_allclose(here, _reals(e, 0, (0, 20)), atol=1e-9)


@pytest.mark.slow
def test_wedge_one_scan_gap_and_return():
    grid = [round(0.25 * i, 12) for i in range(29)]
    rows = spectrum_scan(1, grid, (0, 30), replace(DEFAULT_CONFIG, e_grid_step=0.1))
    table = _by_eps(rows)
    assert sorted(table) == grid
    real = {e: [r for r in rs if r.status == "ok" and r.is_real] for e, rs in table.items()}
    for e in grid:
        if 1 < e < 3:
            assert real[e] == []
    assert len(real[3.5]) >= 1
    np.testing.assert_allclose(sorted(r.E.real for r in real[4.0]), _reals(4.0, 0, (0, 30)), atol=1e-4)
    assert [r.status for r in table[2.0]] == ["degenerate"]
    # the ground state runs off to infinity as eps approaches 1
    assert any(r.status == "divergent" for r in rows)


@pytest.mark.slow
def test_wedge_two_scan_real_islands():
    grid = [round(0.5 * i, 12) for i in range(23)]
    rows = spectrum_scan(2, grid, (0, 30), replace(DEFAULT_CONFIG, e_grid_step=0.1))
    table = _by_eps(rows)
    assert sorted(table) == grid
    real = {e: [r for r in rs if r.status == "ok" and r.is_real] for e, rs in table.items()}
    for e in grid:
        if 0.5 < e < 1.5 or 5 < e < 7:
            assert real[e] == [], e
    for e in (2.0, 4.0, 8.0, 9.0):
        if rays_coincide(2, e):
            continue
        fresh = _reals(e, 2, (0, 30))
        assert len(real[e]) == len(fresh) > 0
        assert all(is_real_energy(r.E) for r in table[e] if r.status == "ok")


def test_scan_reports_every_grid_point_once_in_order():
    grid = [0.0, 0.5, 1.0, 2.0]
    rows = spectrum_scan(1, grid, (0, 8))
    seen = []
    for r in rows:
        if not seen or seen[-1] != r.epsilon:
            seen.append(r.epsilon)
    assert seen == grid
    assert [r.status for r in rows if r.epsilon == 2.0] == ["degenerate"]


def test_scan_workers_do_not_change_rows():
    grid = [0.0, 0.3, 0.6]
    a = spectrum_scan(1, grid, (0, 8), workers=1)
    b = spectrum_scan(1, grid, (0, 8), workers=2)
    # repr, because NaN fields never compare equal
    assert [repr(r) for r in a] == [repr(r) for r in b]


def test_scan_resumes_from_seed():
    first = spectrum_scan(0, [0.0, 0.2, 0.4], (0, 10))
    seed = [r for r in first if r.epsilon == 0.4]
    rest = spectrum_scan(0, [0.4, 0.6], (0, 10), seed=seed)
    direct = spectrum_scan(0, [0.0, 0.2, 0.4, 0.6], (0, 10))
    tail = [r for r in direct if r.epsilon == 0.6]
    got = [r for r in rest if r.epsilon == 0.6]
    assert [r.branch_label for r in got] == [r.branch_label for r in tail]
    np.testing.assert_allclose([r.E for r in got], [r.E for r in tail], atol=1e-9)


def test_scan_argument_checks():
    with pytest.raises(ValueError):
        spectrum_scan(0, [], (0, 5))
    with pytest.raises(ValueError):
        spectrum_scan(0, [0.0, 0.0], (0, 5))
    with pytest.raises(ValueError):
        spectrum_scan(0, [0.5, 1.0], (0, 5))
    with pytest.raises(ValueError):
        spectrum_scan(0, [0.0], (0, 5), workers=0)


# ------------------------------------------------------------------- config

@pytest.mark.parametrize("kwargs", [
    dict(r_max_rule=(1.0, 40.0)), dict(r_max_rule=(1.5, 0.0)), dict(match_tol=0.0),
    dict(e_grid_step=-0.1), dict(newton_tol=0.0), dict(noise_floor=0.0),
    dict(divergence_cap=0.0), dict(seed_scale=(0.0, 1.0)),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        ShootingConfig(**kwargs)
