import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resolvent_surface import ConfigError, HamiltonianModel, evaluate, symplectic_j

KINDS = ["harmonic1d", "quartic1d", "doublewell1d", "ho2d", "coupledquartic2d"]
coord = st.floats(-2.0, 2.0, allow_nan=False)


def test_defaults_and_roundtrip():
    for kind in KINDS:
        m = HamiltonianModel(kind)
        again = HamiltonianModel.from_dict(m.to_dict())
        assert again == m
        assert again.model_hash() == m.model_hash()


@pytest.mark.parametrize("doc, key", [
    ({"kind": "nope"}, "kind"),
    ({"kind": "harmonic1d", "params": {"beta": 1}}, "params.beta"),
    ({"kind": "harmonic1d", "params": {"omega": -1}}, "params.omega"),
    ({"kind": "harmonic1d", "params": {"omega": "x"}}, "params.omega"),
    ({"kind": "harmonic1d", "hbar": 0}, "hbar"),
    ({"kind": "coupledquartic2d", "params": {"coupling": -2}}, "params.coupling"),
    ({"kind": "harmonic1d", "colour": 1}, "colour"),
])
def test_invalid_documents_name_the_key(doc, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        HamiltonianModel.from_dict(doc)


def test_potential_values():
    assert HamiltonianModel("quartic1d").potential([2.0]) == pytest.approx(4.0)
    dw = HamiltonianModel("doublewell1d")
    assert dw.potential([1.0]) == pytest.approx(dw.potential_minimum)
    assert dw.barrier_energy == 0.0
    cq = HamiltonianModel("coupledquartic2d")
    assert cq.potential([1.0, 1.0]) == pytest.approx(0.5 + 4.0)


def test_symplectic_matrix():
    J = symplectic_j(2)
    assert np.allclose(J @ J, -np.eye(4))
    assert np.allclose(J.T, -J)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(KINDS), st.lists(coord, min_size=4, max_size=4))
def test_gradient_and_hessian_match_finite_differences(kind, xs):
    m = HamiltonianModel(kind)
    x = np.array(xs[:2 * m.dof])
    h, g, H = evaluate(m, x)
    assert h == pytest.approx(m.energy(x), rel=1e-12, abs=1e-12)
    eps = 1e-6
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = eps
        _, gp, _ = evaluate(m, x + e)
        _, gm, _ = evaluate(m, x - e)
        fd = (m.energy(x + e) - m.energy(x - e)) / (2 * eps)
        assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-6)
        assert np.allclose(H[:, i], (gp - gm) / (2 * eps), rtol=1e-5, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(KINDS), st.lists(st.lists(coord, min_size=4, max_size=4), min_size=1,
                                         max_size=5))
def test_batch_energies_agree(kind, rows):
    m = HamiltonianModel(kind)
    xs = np.array(rows)[:, :2 * m.dof]
    assert np.allclose(m.energies(xs), [m.energy(x) for x in xs], rtol=1e-13, atol=1e-13)


def test_velocity_is_hamiltonian_flow():
    m = HamiltonianModel("harmonic1d", {"omega": 2.0})
    assert np.allclose(m.velocity([1.0, 0.5]), [0.5, -4.0])
    assert math.isclose(HamiltonianModel("ho2d").dof, 2)
