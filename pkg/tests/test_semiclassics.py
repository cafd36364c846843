import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from resolvent_surface import ConfigError, HamiltonianModel, flow
from resolvent_surface.doublephase import solve_segments_centre
from resolvent_surface.quantum import exact_spectral_wigner_points
from resolvent_surface.semiclassics import (SCTerm, SmoothingSpec, continue_orbit,
                                            grouped_longtime_trace, maslov_index,
                                            measured_residuals, refine_peaks,
                                            SecondaryTerm, spectral_wigner,
                                            trace_resolvent_osc, weyl_propagator)


def ho_weyl(x, t, w):
    H = 0.5 * (x[1] ** 2 + w * w * x[0] ** 2)
    return np.exp(-2j / w * math.tan(w * t / 2) * H) / math.cos(w * t / 2)


@settings(max_examples=15, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5),
       st.floats(0.05, 4.5).filter(lambda t: abs(t - math.pi / 1.3) > 0.05))
def test_harmonic_weyl_propagator_is_exact(q, p, t):
    m = HamiltonianModel("harmonic1d", {"omega": 1.3})
    v, terms = weyl_propagator(m, [q, p], t)
    assert len(terms) == 1 and not terms[0].caustic
    assert abs(v - ho_weyl((q, p), t, 1.3)) < 1e-7 * max(1.0, abs(v))


def test_weyl_propagator_caustic_flag(ho):
    v, terms = weyl_propagator(ho, [0.4, -0.7], math.pi / 1.3)
    assert v == 0j
    assert all(tm.caustic for tm in terms)
    assert weyl_propagator(ho, [0.4, -0.7], 0.0)[0] == 1.0


def test_weyl_propagator_unitary_limit(quartic):
    # short times: |U_W| -> 1 and the phase is -H t / hbar
    x = np.array([0.6, 0.3])
    t = 1e-3
    v, _ = weyl_propagator(quartic, x, t)
    assert abs(v - np.exp(-1j * quartic.energy(x) * t)) < 1e-6


def test_maslov_tangential_zero_counts_twice():
    m = HamiltonianModel("harmonic1d")
    seg = flow(m, [0.3, 0.2], 4.0, n_samples=401)
    mc = maslov_index(seg, "centre")     # det(1 + M) = 4 cos^2(t/2) touches zero at t = pi
    assert (mc.count, mc.tangential, mc.indeterminate) == (2, 1, False)
    mp = maslov_index(seg, "position")   # sin t crosses zero at t = pi
    assert (mp.count, mp.tangential) == (1, 0)
    seg = flow(m, [0.3, 0.2], 7.0, n_samples=701)
    assert maslov_index(seg, "position").count == 2
    with pytest.raises(ConfigError):
        maslov_index(seg, "momentum")


def test_sc_term_phase():
    tm = SCTerm("a", 2.0, math.pi, -0.5 * math.pi)
    assert tm.value == pytest.approx(2.0 * np.exp(0.5j * math.pi))
    assert SCTerm("b", 1.0, 0.0, 0.0, caustic=True).value == 0j


def test_smoothing_spec():
    with pytest.raises(ConfigError):
        SmoothingSpec("boxcar", 0.1)
    with pytest.raises(ConfigError):
        SmoothingSpec(width=0.0)
    s = SmoothingSpec("gaussian_time_cutoff", 4.0)
    assert s.energy_width(1.0) == 0.25
    assert s.weight(s.max_time(1.0), 1.0) == pytest.approx(1e-17, rel=1e-6)


def test_harmonic_trace_peaks_at_half_integers(ho):
    E = np.linspace(0.2, 6.0, 1500)
    sm = SmoothingSpec(width=0.08)
    sf = trace_resolvent_osc(ho, E, sm)
    pk = refine_peaks(ho, sm, E, sf.values)
    n = np.arange(len(pk))
    assert np.allclose(pk, 1.3 * (n + 0.5), atol=1e-6)


def test_quartic_trace_peaks_at_quantized_actions(quartic):
    S1 = 2 * special.beta(0.25, 1.5)
    ebk = np.array([(2 * math.pi * (n + 0.5) / S1) ** (4 / 3) for n in range(6)])
    E = np.linspace(0.2, 9.0, 3000)
    sm = SmoothingSpec(width=0.02)
    sf = trace_resolvent_osc(quartic, E, sm)
    pk = refine_peaks(quartic, sm, E, sf.values)
    assert len(pk) == 6
    assert np.max(np.abs(pk - ebk)) < 5e-4


def test_orbit_continuation_scaling(cq_orbits):
    po = cq_orbits.orbits[0]
    S, T = continue_orbit(po, 16.0, 4)
    assert S == pytest.approx(8 * po.action, rel=1e-12)
    assert T == pytest.approx(po.period / 2, rel=1e-12)


def test_spectral_wigner_matches_exact_away_from_focus(quartic, quartic_spectrum):
    E, g = quartic_spectrum.energies[10], 0.3
    for x in ([0.5, 1.0], [1.0, 2.0]):
        bs = solve_segments_centre(quartic, x, E, (1e-9, 5))
        sc = spectral_wigner(quartic, bs, SmoothingSpec(width=g))
        ex = exact_spectral_wigner_points(quartic_spectrum, E, g, [x])[0]
        assert sc == pytest.approx(ex, rel=0.1)


def test_grouped_identity_on_primaries(cq_orbits):
    orbits = {po.id: po for po in cq_orbits}
    ids = list(orbits)[:4]
    # pair each orbit with a different one so the residual is nonzero
    terms = [SecondaryTerm(orbits[a], [(b, 1)]) for a, b in zip(ids, ids[1:] + ids[:1])]
    measured_residuals(terms, orbits)
    res = grouped_longtime_trace(orbits, terms)
    assert res.max_abs_difference < 1e-12 * max(1.0, abs(res.direct))
    with pytest.raises(ConfigError):
        grouped_longtime_trace(orbits, [SecondaryTerm(orbits[ids[0]], [])])

