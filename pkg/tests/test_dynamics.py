import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from resolvent_surface import DomainError, HamiltonianModel, Tolerances, symplectic_j
from resolvent_surface.dynamics import (count_sign_changes, energy_shell_sample,
                                        first_return_time_1dof, flow, period_1dof,
                                        project_to_shell, shell_components, shell_loop,
                                        turning_points)

TIGHT = Tolerances(rtol=1e-12, atol=1e-12)


def ho_exact(x0, t, w):
    q, p = x0
    c, s = math.cos(w * t), math.sin(w * t)
    return np.array([q * c + p * s / w, p * c - q * w * s])


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-10, 10))
def test_harmonic_flow_matches_closed_form(q, p, t):
    w = 1.3
    m = HamiltonianModel("harmonic1d", {"omega": w})
    seg = flow(m, [q, p], t, TIGHT)
    assert np.allclose(seg.x_plus, ho_exact((q, p), t, w), atol=1e-9)
    c, s = math.cos(w * t), math.sin(w * t)
    assert np.allclose(seg.monodromy, [[c, s / w], [-w * s, c]], atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["quartic1d", "doublewell1d", "coupledquartic2d", "ho2d"]),
       st.lists(st.floats(-1.2, 1.2), min_size=4, max_size=4), st.floats(0.1, 4.0))
def test_monodromy_is_symplectic_and_flow_reversible(kind, xs, t):
    m = HamiltonianModel(kind)
    x0 = np.array(xs[:2 * m.dof])
    seg = flow(m, x0, t)
    M = seg.monodromy
    J = symplectic_j(m.dof)
    assert np.max(np.abs(M.T @ J @ M - J)) < 1e-6
    back = flow(m, seg.x_plus, -t)
    assert np.allclose(back.x_plus, x0, atol=1e-7)


def test_flow_composition(cq):
    x0 = np.array([0.3, 0.2, 0.5, -0.4])
    a = flow(cq, x0, 1.1, TIGHT)
    b = flow(cq, a.x_plus, 0.7, TIGHT)
    c = flow(cq, x0, 1.8, TIGHT)
    assert np.allclose(b.x_plus, c.x_plus, atol=1e-9)
    assert np.allclose(b.monodromy @ a.monodromy, c.monodromy, atol=1e-7)
    assert b.energy_action + a.energy_action == pytest.approx(c.energy_action, abs=1e-9)


def test_energy_drift_over_many_periods(quartic):
    tau, _ = period_1dof(quartic, 1.0)
    seg = flow(quartic, [math.sqrt(2.0), 0.0], 100 * tau, TIGHT, n_samples=2000)
    drift = np.max(np.abs(quartic.energies(seg.sample_x) - 1.0))
    assert drift < 1e-8


def test_quartic_period_and_action_closed_form(quartic):
    # tau(1) = B(1/4, 1/2); S(1) = (8/3) * 2^(1/2) * B(1/4, 3/2) / 2 * ...; use quadrature-free forms
    tau, S = period_1dof(quartic, 1.0)
    assert tau == pytest.approx(special.beta(0.25, 0.5), rel=1e-10)
    assert S == pytest.approx(2 * special.beta(0.25, 1.5), rel=1e-10)
    # homogeneous scaling: S ~ E^(3/4), tau ~ E^(-1/4)
    tau2, S2 = period_1dof(quartic, 16.0)
    assert tau2 == pytest.approx(tau / 2, rel=1e-10)
    assert S2 == pytest.approx(8 * S, rel=1e-10)


def test_harmonic_period_and_action(ho):
    tau, S = period_1dof(ho, 2.0)
    assert tau == pytest.approx(2 * math.pi / 1.3, rel=1e-10)
    assert S == pytest.approx(2 * math.pi * 2.0 / 1.3, rel=1e-10)
    assert first_return_time_1dof(ho, 2.0) == pytest.approx(tau, rel=1e-9)


def test_turning_points_and_components(doublewell):
    assert len(shell_components(doublewell, -0.1)) == 2
    assert len(shell_components(doublewell, 0.1)) == 1
    r = turning_points(HamiltonianModel("harmonic1d"), 0.5)
    assert np.allclose(r, [-1.0, 1.0])
    with pytest.raises(DomainError):
        turning_points(doublewell, doublewell.potential_minimum - 1)


def test_separatrix_is_refused(doublewell):
    with pytest.raises(DomainError):
        period_1dof(doublewell, 0.0)


def test_shell_loop_lies_on_shell(quartic):
    pts, tau, length = shell_loop(quartic, 1.0, 0, n=400)
    assert np.max(np.abs(quartic.energies(pts) - 1.0)) < 1e-9
    assert tau == pytest.approx(special.beta(0.25, 0.5), rel=1e-8)
    seglen = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    assert np.std(seglen) / np.mean(seglen) < 0.05
    assert length > 0


@pytest.mark.parametrize("kind, E", [("quartic1d", 1.0), ("doublewell1d", -0.1),
                                     ("coupledquartic2d", 1.0), ("ho2d", 2.0)])
def test_shell_sample_on_shell_and_reproducible(kind, E):
    m = HamiltonianModel(kind)
    a = energy_shell_sample(m, E, 64, seed=3)
    b = energy_shell_sample(m, E, 64, seed=3)
    assert np.array_equal(a.points, b.points)
    assert np.max(np.abs(m.energies(a.points) - E)) < 1e-8


def test_project_to_shell(cq):
    pts = np.array([[0.2, 0.1, 0.9, 0.3], [0.5, -0.3, -0.2, 0.8]])
    out = project_to_shell(cq, pts, 1.0, iters=12)
    assert np.max(np.abs(cq.energies(out) - 1.0)) < 1e-10


def test_count_sign_changes():
    assert count_sign_changes([1, -1, 0, -2, 3]) == 2
    assert count_sign_changes([1e-20, -1.0, 1.0], rel_floor=1e-12) == 1
    assert count_sign_changes([]) == 0
