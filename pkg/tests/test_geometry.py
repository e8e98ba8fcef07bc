import cmath
import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptsym.geometry import (
    rational_epsilon,
    sheet_count,
    transition_epsilons,
    turning_point,
    turning_point_count,
    wedge,
    wedge_contains,
    wedge_transitions,
)

PI = math.pi
ks = st.integers(min_value=-12, max_value=12)
epsilons = st.floats(min_value=0.0, max_value=20.0, allow_nan=False)


def test_wedge_zero_at_eps_zero():
    w = wedge(0, 0.0)
    assert (w.theta_lower, w.theta_center, w.theta_upper, w.opening) == pytest.approx(
        (-PI / 4, 0.0, PI / 4, PI / 2), abs=1e-15)


def test_wedge_one_at_eps_zero():
    w = wedge(1, 0.0)
    assert (w.theta_lower, w.theta_center, w.theta_upper) == pytest.approx((3 * PI / 4, PI, 5 * PI / 4))


@pytest.mark.parametrize("K, eps, centre", [(2, 2.0, 7 * PI / 6), (2, 4.0, 3 * PI / 4), (2, 8.0, PI / 3)])
def test_wedge_centres(K, eps, centre):
    assert wedge(K, eps).theta_center == pytest.approx(centre, abs=1e-14)


def test_angles_are_not_reduced():
    assert wedge(3, 0.0).theta_center == pytest.approx(3 * PI)
    assert turning_point(-3, 0.0).theta == pytest.approx(-3 * PI)


def test_negative_eps_rejected():
    with pytest.raises(ValueError):
        wedge(0, -0.1)
    with pytest.raises(ValueError):
        turning_point(0, -1e-9)


@pytest.mark.parametrize("K, eps, theta", [(0, 0.0, 0.0), (-1, 0.0, -PI), (2, 0.5, 3 * PI / 2)])
def test_turning_point_angles(K, eps, theta):
    tp = turning_point(K, eps)
    assert tp.theta == pytest.approx(theta, abs=1e-14)
    assert tp.x == pytest.approx(cmath.exp(1j * theta), abs=1e-15)


def test_wedge_membership():
    assert wedge_contains(wedge(1, 0.0), PI)
    assert not wedge_contains(wedge(1, 1.0), PI / 2)
    assert not wedge_contains(wedge(0, 0.0), PI)


def test_edge_counts_as_outside():
    w = wedge(0, 0.0)
    assert not wedge_contains(w, w.theta_upper)
    assert not wedge_contains(w, w.theta_lower)


@pytest.mark.parametrize("K_tp, K_w, expected", [
    (1, 1, [("exit", Fraction(1), "lower")]),
    (2, 1, [("entry", Fraction(3), "upper")]),
    (3, 2, [("entry", Fraction(3, 2), "upper"), ("exit", Fraction(5), "lower")]),
])
def test_transition_examples(K_tp, K_w, expected):
    got = [(tr.kind, tr.exact, tr.edge) for tr in transition_epsilons(K_tp, K_w)]
    assert got == expected


def test_pinned_turning_point_has_no_crossing():
    # a = c: K_tp = 2 K_w + 1 on the upper edge is approached only asymptotically
    assert all(tr.edge != "upper" for tr in transition_epsilons(3, 1))


def test_region_one_ends_at_one_over_k():
    for K in range(1, 7):
        exits = [tr for tr in transition_epsilons(K, K) if tr.kind == "exit"]
        assert exits and exits[0].exact == Fraction(1, K)


def test_wedge_transition_tables():
    assert [(t.kind, t.exact) for t in wedge_transitions(1)] == [("exit", 1), ("entry", 3)]
    assert [(t.kind, t.exact) for t in wedge_transitions(2)] == [
        ("exit", Fraction(1, 2)), ("entry", Fraction(3, 2)), ("exit", 5), ("entry", 7)]


def test_finite_surface_counts():
    assert rational_epsilon(2.4) == Fraction(12, 5)
    assert sheet_count(2.4) == 5
    assert turning_point_count(2.4) == 22
    assert rational_epsilon(math.sqrt(2)) is None
    assert sheet_count(math.pi) is None


# ------------------------------------------------------------- properties

@given(ks, epsilons)
def test_wedge_shape(K, eps):
    w = wedge(K, eps)
    assert w.theta_upper - w.theta_lower == pytest.approx(w.opening, abs=1e-12)
    assert w.theta_center == pytest.approx(0.5 * (w.theta_upper + w.theta_lower), abs=1e-12)
    assert w.opening == pytest.approx(2 * PI / (4 + eps))


@given(ks, epsilons)
def test_pt_pairing_of_turning_points_and_wedges(K, eps):
    assert turning_point(K, eps).theta + turning_point(-K - 1, eps).theta == pytest.approx(-PI, abs=1e-12)
    assert wedge(K, eps).theta_center + wedge(-K - 1, eps).theta_center == pytest.approx(-PI, abs=1e-12)


@given(ks)
def test_turning_points_start_at_wedge_centres(K):
    assert turning_point(K, 0.0).theta == pytest.approx(wedge(K, 0.0).theta_center, abs=1e-13)


@given(ks, epsilons)
def test_turning_point_solves_the_energy_equation(K, eps):
    tp = turning_point(K, eps)
    assert abs(tp.x) == pytest.approx(1.0, abs=1e-15)
    power = cmath.exp(1j * (2 + eps) * (tp.theta + PI / 2))
    assert abs(1 + power) < 1e-12


@given(st.integers(min_value=-10, max_value=10), st.integers(min_value=-6, max_value=6))
def test_crossings_land_on_their_edges(K_tp, K_w):
    for tr in transition_epsilons(K_tp, K_w):
        w = wedge(K_w, tr.epsilon)
        edge = w.theta_upper if tr.edge == "upper" else w.theta_lower
        assert turning_point(K_tp, tr.epsilon).theta == pytest.approx(edge, abs=1e-12)
        assert tr.epsilon >= 0


@given(st.integers(min_value=-10, max_value=10), st.integers(min_value=-6, max_value=6))
def test_entry_and_exit_match_membership_either_side(K_tp, K_w):
    for tr in transition_epsilons(K_tp, K_w):
        step = 1e-6
        before = wedge_contains(wedge(K_w, tr.epsilon - step), turning_point(K_tp, tr.epsilon - step).theta) \
            if tr.epsilon >= step else None
        after = wedge_contains(wedge(K_w, tr.epsilon + step), turning_point(K_tp, tr.epsilon + step).theta)
        assert after == (tr.kind == "entry")
        if before is not None:
            assert before == (tr.kind == "exit")
