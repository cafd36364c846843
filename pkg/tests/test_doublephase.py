import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resolvent_surface import HamiltonianModel
from resolvent_surface.doublephase import (CentreChord, DoublePoint, centre_action,
                                           continue_branch, double_action_loop,
                                           evolution_surface_sample, from_centre_chord,
                                           legendre_to_energy, solve_segments_centre,
                                           solve_segments_position, to_centre_chord, wedge)

vec4 = st.lists(st.floats(-5, 5), min_size=4, max_size=4).map(np.array)


@settings(max_examples=50, deadline=None)
@given(vec4, vec4)
def test_centre_chord_round_trip(a, b):
    X = DoublePoint(a, b)
    Y = from_centre_chord(to_centre_chord(X))
    assert np.allclose(Y.x_minus, a) and np.allclose(Y.x_plus, b)
    C = to_centre_chord(X)
    Z = to_centre_chord(from_centre_chord(CentreChord(C.centre, C.chord)))
    assert np.allclose(Z.chord, b - a)


@settings(max_examples=50, deadline=None)
@given(vec4, vec4, vec4)
def test_wedge_is_antisymmetric_and_bilinear(a, b, c):
    assert wedge(a, b) == pytest.approx(-wedge(b, a), abs=1e-9)
    assert wedge(a, a) == 0.0
    assert wedge(a + c, b) == pytest.approx(wedge(a, b) + wedge(c, b), abs=1e-8)


def test_double_coordinates_sign():
    X = DoublePoint(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    P, Q = X.double_coordinates()
    assert np.array_equal(P, [-2.0, 4.0]) and np.array_equal(Q, [1.0, 3.0])


def test_evolution_surface_is_lagrangian(quartic):
    # the closed-loop integral of P.dQ vanishes on the graph of a canonical map
    th = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    seeds = np.stack([0.4 + 0.3 * np.cos(th), 0.2 + 0.5 * np.sin(th)], axis=1)
    pairs = [X for X, _ in evolution_surface_sample(quartic, 1.3, seeds)]
    assert abs(double_action_loop(pairs)) < 1e-4
    area = double_action_loop([DoublePoint(x, x) for x in seeds])
    assert area == pytest.approx(0.0, abs=1e-12)


def test_harmonic_position_durations(ho):
    bs = solve_segments_position(ho, [0.0], [0.0], 1.0, (1e-9, 2.2 * math.pi / 1.3))
    half = math.pi / 1.3
    assert np.allclose(np.sort(bs.durations), [half, half, 2 * half, 2 * half], atol=1e-8)
    for b in bs:
        assert b.action == pytest.approx(b.duration * 1.0, rel=1e-8)   # S_E = E t for the HO


def test_harmonic_centre_chords_and_segment_area():
    m = HamiltonianModel("harmonic1d")
    x = np.array([0.3, 0.4])
    R, d = math.sqrt(2.0), 0.5
    bs = solve_segments_centre(m, x, 1.0, (1e-9, 2 * math.pi))
    t1 = 2 * math.acos(d / R)
    assert np.allclose(np.sort(bs.durations), [t1, 2 * math.pi - t1], atol=1e-9)
    for b in bs:
        assert np.allclose(b.centre, x, atol=1e-9)
        assert np.linalg.norm(b.chord) == pytest.approx(2 * math.sqrt(R * R - d * d), rel=1e-9)
        t = b.duration
        assert b.action == pytest.approx(0.5 * R * R * (t - math.sin(t)), rel=1e-8)
        assert centre_action(b.segment) == pytest.approx(b.action, rel=1e-12)
    # the two branches are the two arcs cut off by one chord
    assert np.allclose(bs.branches[0].chord, -bs.branches[1].chord, atol=1e-9)


def test_empty_outside_allowed_region(quartic):
    bs = solve_segments_position(quartic, [5.0], [0.0], 1.0, (1e-9, 6))
    assert len(bs) == 0


@pytest.mark.parametrize("rep", ["position", "centre"])
def test_legendre_duality_quartic(quartic, rep):
    if rep == "position":
        bs = solve_segments_position(quartic, [0.1], [0.6], 1.0, (1e-9, 6))
    else:
        bs = solve_segments_centre(quartic, [0.3, 0.4], 1.0, (1e-9, 6))
    assert len(bs) >= 2
    for b in bs:
        r = legendre_to_energy(quartic, b)
        assert r.energy_action == pytest.approx(b.action, abs=1e-8)
        assert r.duration == pytest.approx(b.duration, abs=1e-8)


@pytest.mark.parametrize("rep", ["position", "centre"])
def test_action_derivative_is_duration(quartic, rep):
    if rep == "position":
        bs = solve_segments_position(quartic, [0.1], [0.6], 1.0, (1e-9, 6))
    else:
        bs = solve_segments_centre(quartic, [0.3, 0.4], 1.0, (1e-9, 6))
    h = 1e-5
    for b in bs:
        up, dn = continue_branch(quartic, b, 1 + h), continue_branch(quartic, b, 1 - h)
        assert (up.action - dn.action) / (2 * h) == pytest.approx(b.duration, abs=1e-6)
        assert continue_branch(quartic, b, 1.0, build=False) == pytest.approx(b.duration, abs=1e-9)


def test_centre_segments_two_dof(cq):
    x = np.array([0.1, 0.2, 0.3, 0.1])
    bs = solve_segments_centre(cq, x, 1.0, (1e-9, 2.5), n_seeds=200)
    assert len(bs) >= 2
    assert np.all(np.diff(np.sort(bs.durations)) > 1e-6)
    h = 1e-5
    for b in bs:
        assert np.allclose(b.centre, x, atol=1e-8)
        assert b.energy == pytest.approx(1.0, abs=1e-9)
        up, dn = continue_branch(cq, b, 1 + h), continue_branch(cq, b, 1 - h)
        assert np.allclose(up.centre, x, atol=1e-8)
        assert (up.action - dn.action) / (2 * h) == pytest.approx(b.duration, abs=1e-6)
