import json
import math

import numpy as np
import pytest
from scipy import special

from resolvent_surface import ConfigError, DomainError, symplectic_j
from resolvent_surface.orbits import (OrbitDatabase, PoincareSection, composite_action, find_po,
                                      maslov_repetition, repetition, section_map)

AXIS_PERIOD = special.beta(0.25, 0.5)       # 5.244115108584...
AXIS_ACTION = 6.99215347811232
AXIS_LAMBDA = 5.80873324                    # frozen from a converged run


@pytest.fixture(scope="module")
def axis(cq):
    return find_po(cq, PoincareSection(1.0, 0, 0.0, 1), [0.01, 0.02])


def test_axis_orbit_reduces_to_one_dof(axis):
    assert axis.period == pytest.approx(AXIS_PERIOD, rel=1e-9)
    assert axis.action == pytest.approx(AXIS_ACTION, rel=1e-9)
    assert np.allclose(axis.points, 0.0, atol=1e-10)
    assert axis.hyperbolic
    assert axis.eigenvalues[0].real == pytest.approx(AXIS_LAMBDA, rel=1e-7)
    assert axis.maslov == 6


def test_monodromy_structure(axis):
    M = axis.monodromy
    J = symplectic_j(2)
    assert np.max(np.abs(M.T @ J @ M - J)) < 1e-6
    ev = axis.eigenvalues
    assert ev[0] * ev[1] == pytest.approx(1.0, abs=1e-8)           # reciprocal pair
    full = np.linalg.eigvals(M)
    assert np.sum(np.abs(full - 1.0) < 1e-4) == 2                  # trivial pair along the flow


def test_repetition_is_additive(axis):
    r3 = repetition(axis, 3)
    assert r3.period == pytest.approx(3 * axis.period)
    assert r3.action == pytest.approx(3 * axis.action)
    assert r3.maslov == 3 * axis.maslov
    assert np.allclose(r3.eigenvalues, axis.eigenvalues ** 3, rtol=1e-9)
    assert repetition(axis, 1) is axis
    with pytest.raises(ConfigError):
        repetition(axis, 0)


def test_section_map_returns_fixed_point(cq, axis):
    step = section_map(cq, axis.section, axis.points[0])
    assert np.allclose(step.z1, axis.points[0], atol=1e-9)


def test_scan_table(cq_orbits):
    periods = sorted({round(po.period, 4) for po in cq_orbits})
    assert periods == [3.6006, 3.762, 3.7649, 4.4338, 5.1464, 5.2441]
    axes = [po for po in cq_orbits if abs(po.period - AXIS_PERIOD) < 1e-6]
    assert len(axes) == 2
    for po in cq_orbits:
        assert po.maslov is not None
        assert po.residual < 1e-9
        assert po.energy == 1.0


def test_elliptic_orbits_use_rotation_number(cq_orbits):
    ell = [po for po in cq_orbits if not po.hyperbolic]
    assert ell
    for po in ell:
        ev = po.eigenvalues[0]
        assert math.cos(po.rotation) == pytest.approx(ev.real, abs=1e-7)
        for r in (1, 2, 5):
            assert maslov_repetition(po, r) == 2 * math.floor(r * po.rotation / (2 * math.pi)) + 1
    for po in cq_orbits:
        if po.hyperbolic:
            assert maslov_repetition(po, 4) == 4 * po.maslov


def test_composite_action(cq_orbits):
    a, b = cq_orbits.orbits[0], cq_orbits.orbits[-1]
    orbits = {a.id: a, b.id: b}
    assert composite_action(orbits, [(a.id, 2), (b.id, 1)]) == pytest.approx(2 * a.action + b.action)


def test_database_round_trip(tmp_path, cq_orbits):
    path = tmp_path / "db.json"
    cq_orbits.save(path)
    db = OrbitDatabase.load(path)
    assert len(db) == len(cq_orbits)
    for a, b in zip(db, cq_orbits):
        assert a.id == b.id and a.action == b.action and a.maslov == b.maslov
        assert np.array_equal(a.monodromy, b.monodromy)
    assert db.by_id("p20").period == cq_orbits.by_id("p20").period
    doc = json.loads(path.read_text())
    doc["model"]["params"]["coupling"] = 9.0
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        OrbitDatabase.load(path)


def test_one_dof_model_refused(quartic):
    with pytest.raises(DomainError):
        find_po(quartic, PoincareSection(1.0), [0.0, 0.0])


def test_section_lift_outside_shell(cq):
    with pytest.raises(DomainError):
        PoincareSection(1.0).lift(cq, [0.0, 3.0])
