import math

import numpy as np
import pytest

from resolvent_surface import ConfigError
from resolvent_surface.caustics import (ShellCurve, caustic_scan, caustic_scan_shell,
                                        closure_distance, closure_scan,
                                        convergent_denominators, geometric_chords,
                                        integrable_leaf, resonant_period, tongue_probe)
from resolvent_surface.doublephase import solve_segments_centre
from resolvent_surface.dynamics import shell_loop
from resolvent_surface.orbits import PoincareSection, find_po

TH = np.linspace(0, 2 * np.pi, 800, endpoint=False)
BOX = ((-1.2, 1.2), (-1.2, 1.2))


def curve(r):
    return np.c_[r * np.cos(TH), r * np.sin(TH)]


def test_circle_has_one_chord_inside_and_none_outside():
    g = caustic_scan_shell(curve(np.ones_like(TH)), BOX, 40)
    assert g.classes() == [0, 1]
    assert g.islands(1)[1] == 1
    cs = geometric_chords(curve(np.ones_like(TH)), [0.3, -0.2])
    assert len(cs) == 1
    a, b = cs.pairs[0]
    assert np.allclose(0.5 * (a + b), [0.3, -0.2], atol=1e-10)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-6)


@pytest.fixture(scope="module")
def trefoil():
    return caustic_scan_shell(curve(1 + 0.15 * np.cos(3 * TH)), BOX, 60)


def test_trefoil_shell_has_a_three_chord_island(trefoil):
    g = trefoil
    assert g.classes() == [0, 1, 3]
    lab, n = g.islands(3)
    assert n == 1
    i0 = np.argmin(np.abs(g.u)), np.argmin(np.abs(g.v))
    assert lab[i0] > 0


def test_flags_mark_count_changes(trefoil):
    g = trefoil
    d = np.diff(g.counts, axis=0) != 0
    assert np.all(g.flags[:-1][d]) and np.all(g.flags[1:][d])
    assert np.any(g.cusp_candidates)


def test_shell_curve_validation():
    with pytest.raises(ConfigError):
        ShellCurve(np.zeros((4, 2)))
    bow = np.c_[np.sin(2 * TH), np.sin(TH)]          # figure eight
    with pytest.raises(ConfigError):
        ShellCurve(bow)


@pytest.mark.parametrize("x", [[0.3, 0.2], [1.0, 0.1], [0.0, 0.05], [0.8, 0.0]])
def test_geometric_chords_match_dynamical_branches(doublewell, x):
    E = 0.05
    pts, tau, _ = shell_loop(doublewell, E, 0, n=1000)
    cs = geometric_chords(pts, x)
    bs = solve_segments_centre(doublewell, x, E, (1e-9, tau * (1 - 1e-9)))
    # each chord pair is traversed once by +xi and once by -xi within a period
    assert len(bs) == 2 * len(cs)
    for b in bs:
        d = np.min([np.linalg.norm(b.chord - s * c) for c in cs.chords for s in (1, -1)])
        assert d < 1e-4


def test_scan_counts_agree_with_shell_scan(quartic):
    E = 1.0
    g = caustic_scan(quartic, E, resolution=30)
    pts, _, _ = shell_loop(quartic, E, 0, n=2000)
    h = caustic_scan_shell(pts, (tuple(g.u[[0, -1]]), tuple(g.v[[0, -1]])), 30)
    assert np.array_equal(g.counts, h.counts)
    assert g.classes() == [0, 1]


def test_tongue_is_one_sided(cq):
    po = find_po(cq, PoincareSection(1.0, 0, 0.0, 1), [0.01, 0.02])
    r = tongue_probe(cq, po, 1, [1e-3, -1e-3], direction="inward")
    assert r[0].present and not r[1].present
    assert r[0].duration < po.period
    assert r[0].chord_norm > 0


def test_resonant_leaf_closes():
    w2 = 1.7
    for r, s in [(1, 2), (2, 3), (3, 5)]:
        t = resonant_period(r, s, w2)
        assert closure_distance(w2 * r / s, w2, t) < 1e-12
        leaf = integrable_leaf(w2 * r / s, w2, times=[0.0, t])
        assert np.allclose(np.cos(leaf.theta_plus[-1]), np.cos(leaf.theta_minus[-1]))


def test_irrational_leaf_closes_only_at_convergents():
    w1 = (1 + math.sqrt(5)) / 2
    k, d, run = closure_scan(w1, 1.0, K=400)
    assert np.all(d > 0)
    drops = k[1:][np.diff(run) < 0]
    fib = set(convergent_denominators(w1, 16))
    assert set(drops.tolist()) <= fib
    assert run[-1] < 0.02


def test_leaf_validation():
    with pytest.raises(ConfigError):
        integrable_leaf(-1.0, 1.0)
