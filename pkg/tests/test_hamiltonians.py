import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scaledspin.hamiltonians import (
    HamiltonianSpec,
    commutator,
    dipolar_all_axes,
    dipolar_secular,
    double_quantum,
    internal_hamiltonian,
    scaled_dipolar,
    zeeman,
)
from scaledspin.spin_core import SpinSystem, collective_operator, make_system, rotation_operator


def _random_system(n, seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, n))
    d = np.triu(d, 1)
    return SpinSystem(n, d + d.T)


def test_pair_eigenvalues():
    d = 1.7
    h = dipolar_secular(SpinSystem(2, [[0, d], [d, 0]]), "z")
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(h)), np.sort([d / 2, d / 2, -d, 0]), atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10_000))
def test_axis_sum_identity(n, seed):
    hs = dipolar_all_axes(_random_system(n, seed))
    assert np.abs(hs["x"] + hs["y"] + hs["z"]).max() < 1e-12
    for h in hs.values():
        assert abs(np.trace(h)) < 1e-12
        assert np.abs(h - h.conj().T).max() < 1e-14


def test_rotation_covariance():
    s = _random_system(3, 4)
    hs = dipolar_all_axes(s)
    # pi/2 about x maps z -> y (and y -> z) up to sign; dipolar terms are even in sign
    u = rotation_operator(3, "x", np.pi / 2)
    np.testing.assert_allclose(u @ hs["z"] @ u.conj().T, hs["y"], atol=1e-10)
    u = rotation_operator(3, "y", np.pi / 2)
    np.testing.assert_allclose(u @ hs["z"] @ u.conj().T, hs["x"], atol=1e-10)
    u = rotation_operator(3, "z", np.pi / 2)
    np.testing.assert_allclose(u @ hs["x"] @ u.conj().T, hs["y"], atol=1e-10)


def test_zeeman_examples():
    s = SpinSystem(1, [[0.0]], zeeman_offsets=[2 * np.pi * 100])
    np.testing.assert_allclose(zeeman(s), np.diag([-np.pi * 100, np.pi * 100]))
    assert not np.any(zeeman(make_system("chain", 3, 1.0)))


def test_uniform_zeeman_commutes_with_secular():
    s = _random_system(4, 1).with_offsets(np.full(4, 123.0))
    assert np.abs(commutator(zeeman(s), dipolar_secular(s, "z"))).max() < 1e-10


def test_double_quantum_pair():
    h = double_quantum(SpinSystem(2, [[0, 1.0], [1.0, 0]]))
    nz = {(i, j) for i, j in zip(*np.nonzero(np.abs(h) > 1e-14))}
    assert nz == {(0, 3), (3, 0)}
    iz = collective_operator(2, "z")
    assert np.abs(commutator(h, iz)).max() > 0.1
    assert not np.any(double_quantum(SpinSystem(3, np.zeros((3, 3)))))


def test_internal_is_zeeman_plus_dipolar():
    s = make_system("random", 3, 10.0, seed=0, offsets=[1.0, 2.0, 3.0])
    np.testing.assert_allclose(internal_hamiltonian(s), zeeman(s) + dipolar_secular(s, "z"))


def test_bad_axis():
    with pytest.raises(ValueError):
        dipolar_secular(_random_system(2, 0), "w")


def test_spec_round_trip():
    s = _random_system(3, 2).with_offsets([1.0, -1.0, 0.5])
    spec = HamiltonianSpec("composite", terms=(scaled_dipolar(0.3), HamiltonianSpec("zeeman", scale=-1.0)))
    again = HamiltonianSpec.from_dict(spec.to_dict())
    assert again == spec
    np.testing.assert_allclose(again.build(s), 0.3 * dipolar_secular(s, "y") - zeeman(s))
    with pytest.raises(ValueError):
        HamiltonianSpec("bogus")
