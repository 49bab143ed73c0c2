import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scaledspin.hamiltonians import dipolar_secular
from scaledspin.sequences import (
    IDEAL,
    P8_SLOTS,
    PHASES,
    Delay,
    ErrorModel,
    Pulse,
    PulseSequence,
    SequenceError,
    SequenceRegistry,
    SymbolicFrameError,
    all_patterns_table,
    apply_errors,
    build_sequence,
    cycle_propagator,
    default_pattern,
    magic_echo_microscopic,
    numeric_average_hamiltonian,
    project_average,
    registry_patterns,
    registry_record,
    search_phase_patterns,
    slot_delays,
    symbolic_average,
)
from scaledspin.spin_core import expm_unitary, make_system, unitary_distance


@pytest.fixture(scope="module")
def system4():
    return make_system("random", 4, 2 * np.pi * 1e3, seed=0)


@pytest.fixture(scope="module")
def system6():
    return make_system("random", 6, 2 * np.pi * 200, seed=3)


def test_fig1_delays():
    seq = build_sequence("P8", 0.3, 10e-6, "F")
    d = seq.delays
    assert len(seq.pulses) == 8
    assert seq.cycle_time == pytest.approx(120e-6, rel=1e-12)
    d1, d2 = 7e-6, 16e-6
    expect = [n1 * d1 + n2 * d2 for n1, n2 in P8_SLOTS]
    np.testing.assert_allclose(d, expect, rtol=1e-12)
    assert seq.delta == 0.3


def test_backward_delays_and_cycle():
    seq = build_sequence("P8", 0.3, 10e-6, "B")
    d1, d2 = 13e-6, 4e-6
    np.testing.assert_allclose(seq.delays, [n1 * d1 + n2 * d2 for n1, n2 in P8_SLOTS], rtol=1e-12)
    assert seq.delta == -0.3
    assert build_sequence("P16", 0.3, 10e-6, "B").cycle_time == pytest.approx(240e-6)


@pytest.mark.parametrize("delta,direction,msg", [
    (0.6, "B", "backward scaling exceeds 1/2"),
    (1.0, "F", "forward scaling"),
    (-0.1, "F", "forward scaling"),
])
def test_delta_bounds(delta, direction, msg):
    with pytest.raises(SequenceError, match=msg):
        build_sequence("P8", delta, 10e-6, direction)


def test_min_separation():
    with pytest.raises(SequenceError, match="minimum pulse separation"):
        build_sequence("P8", 0.48, 10e-6, "B")
    build_sequence("P8", 0.45, 10e-6, "B")
    build_sequence("P8", 0.48, 10e-6, "B", min_separation=0.3e-6)


@settings(max_examples=40, deadline=None)
@given(st.fractions(0, Fraction(99, 100)), st.sampled_from(["P8", "P16"]))
def test_weight_algebra_forward(delta, kind):
    seq = build_sequence(kind, float(delta), 10e-6, "F", min_separation=0)
    avg = symbolic_average(seq)
    d = float(delta)
    np.testing.assert_allclose(avg.frame.weights, [(1 - d) / 3, (1 + 2 * d) / 3, (1 - d) / 3], atol=1e-12)
    assert avg.frame.weights.sum() == pytest.approx(1.0)
    assert avg.coefficients == pytest.approx((d, 0.0), abs=1e-12)
    assert np.abs(avg.zeeman).max() < 1e-12
    assert avg.closed


@settings(max_examples=30, deadline=None)
@given(st.fractions(0, Fraction(1, 2)))
def test_weight_algebra_backward(delta):
    d = float(delta)
    avg = symbolic_average(build_sequence("P8", d, 10e-6, "B", min_separation=0))
    np.testing.assert_allclose(avg.frame.weights, [(1 + d) / 3, (1 - 2 * d) / 3, (1 + d) / 3], atol=1e-12)
    assert avg.coefficients == pytest.approx((-d, 0.0), abs=1e-12)


def test_delta_zero_refocuses(system4):
    seq = build_sequence("P8", 0.0, 10e-6, "F")
    assert symbolic_average(seq).coefficients == pytest.approx((0.0, 0.0), abs=1e-15)
    h0 = numeric_average_hamiltonian(seq, system4.with_offsets([100.0, -50.0, 30.0, 7.0]), 0)
    assert np.abs(h0).max() < 1e-9


@pytest.mark.parametrize("kind", ["P8", "P16"])
@pytest.mark.parametrize("direction", ["F", "B"])
def test_numeric_matches_symbolic(system4, kind, direction):
    seq = build_sequence(kind, 0.35, 10e-6, direction)
    h0 = numeric_average_hamiltonian(seq, system4, 0)
    hy = dipolar_secular(system4, "y")
    assert np.linalg.norm(h0 - seq.delta * hy) / np.linalg.norm(hy) < 1e-12
    cy, cz = project_average(h0, system4)
    assert (cy, cz) == pytest.approx(symbolic_average(seq).coefficients, abs=1e-12)


def test_forward_backward_duality(system6):
    f = numeric_average_hamiltonian(build_sequence("P8", 0.25, 10e-6, "F"), system6, 0)
    b = numeric_average_hamiltonian(build_sequence("P8", 0.25, 10e-6, "B"), system6, 0)
    assert np.abs(f + b).max() < 1e-12 * np.abs(f).max()


def test_first_order_cancels_in_16p(system4):
    h8 = numeric_average_hamiltonian(build_sequence("P8", 0.3, 10e-6, "F"), system4, 1)
    h16 = numeric_average_hamiltonian(build_sequence("P16", 0.3, 10e-6, "F"), system4, 1)
    assert np.linalg.norm(h8) > 1e-3
    assert np.linalg.norm(h16) < 1e-12 * np.linalg.norm(dipolar_secular(system4, "y"))


def test_repeat_construction_keeps_first_order(system4):
    seq = build_sequence("P16", 0.3, 10e-6, "F", p16_construction="repeat")
    h1 = numeric_average_hamiltonian(seq, system4, 1)
    h8 = numeric_average_hamiltonian(build_sequence("P8", 0.3, 10e-6, "F"), system4, 1)
    assert np.linalg.norm(h1) == pytest.approx(np.linalg.norm(h8), rel=1e-10)


def test_16p_is_product_of_halves(system4):
    seq = build_sequence("P16", 0.3, 10e-6, "F")
    half = len(seq.elements) // 2
    first = PulseSequence(seq.elements[:half], seq.delta, "F", seq.tau, "P8")
    second = PulseSequence(seq.elements[half:], seq.delta, "F", seq.tau, "P8")
    u = cycle_propagator(seq, system4)
    np.testing.assert_allclose(u, cycle_propagator(second, system4) @ cycle_propagator(first, system4), atol=1e-10)
    p8 = build_sequence("P8", 0.3, 10e-6, "F")
    shifted = [p.shifted().phase for p in reversed(p8.pulses)]
    assert [p.phase for p in seq.pulses[8:]] == shifted


def test_cycle_propagator_unitary(system4):
    u = cycle_propagator(build_sequence("P16", 0.2, 5e-6, "B"), system4)
    assert np.abs(u @ u.conj().T - np.eye(16)).max() < 1e-10


def test_delta_zero_short_tau_faster_than_delay(system6):
    hz = dipolar_secular(system6, "z")
    for tau in (4e-6, 1e-6):
        seq = build_sequence("P8", 0.0, tau, "F", min_separation=0)
        u = cycle_propagator(seq, system6)
        free = unitary_distance(expm_unitary(hz, tau), np.eye(64))
        assert unitary_distance(u, np.eye(64)) < free


def test_symbolic_frame_errors():
    seq = build_sequence("P8", 0.3, 10e-6, "F", ErrorModel(pulse_width=1e-6))
    with pytest.raises(SymbolicFrameError, match="symbolic frame undefined"):
        symbolic_average(seq)
    bad = PulseSequence((Delay(1.0), Pulse("x", 0.3), Delay(1.0)), 0.0, "F", 1.0, "P8")
    with pytest.raises(SymbolicFrameError, match="symbolic frame undefined"):
        symbolic_average(bad)


def test_numeric_average_rejects_finite_width(system4):
    seq = build_sequence("P8", 0.3, 10e-6, "F", ErrorModel(pulse_width=1e-6))
    with pytest.raises(ValueError, match="use cycle_propagator comparison instead"):
        numeric_average_hamiltonian(seq, system4, 0)


def test_search_nonempty_and_sorted():
    for direction, sign in (("F", 1), ("B", -1)):
        hits = search_phase_patterns(slot_delays(Fraction(1, 5), Fraction(1), direction), (sign * Fraction(1, 5), 0))
        assert hits and hits == sorted(hits)
        assert registry_patterns(direction)
        assert default_pattern(direction) == registry_patterns(direction)[0]


def test_search_unattainable_is_empty():
    # nine equal delays make every weight a multiple of 1/9, so c_y = 0.3 is unreachable
    assert search_phase_patterns([1] * 9, (0.3, 0.1)) == []


def test_search_limit():
    with pytest.raises(SequenceError, match="limited to 8"):
        search_phase_patterns([1] * 10)


def test_search_hits_verify_numerically(system4):
    hy = dipolar_secular(system4, "y")
    for pat in registry_patterns("F")[:5]:
        seq = build_sequence("P8", 0.2, 10e-6, "F", phases=pat)
        h0 = numeric_average_hamiltonian(seq, system4, 0)
        assert np.linalg.norm(h0 - 0.2 * hy) < 1e-12 * np.linalg.norm(hy)


def test_ideal_error_model_is_noop():
    seq = build_sequence("P8", 0.3, 10e-6, "F")
    assert apply_errors(seq, ErrorModel()) is seq
    assert build_sequence("P8", 0.3, 10e-6, "F", IDEAL) == seq


def test_finite_width_keeps_cycle_time():
    seq = build_sequence("P8", 0.3, 10e-6, "F", ErrorModel(pulse_width=2e-6))
    assert seq.cycle_time == pytest.approx(120e-6, rel=1e-12)
    assert all(p.duration == 2e-6 for p in seq.pulses)
    assert seq.pulses[0].rf_amplitude == pytest.approx(math.pi / 2 / 2e-6)


def test_finite_width_16p_suppresses_error(system6):
    hy = dipolar_secular(system6, "y")
    err = {}
    for kind in ("P8", "P16"):
        seq = build_sequence(kind, 0.3, 10e-6, "F", ErrorModel(pulse_width=2e-6))
        u = cycle_propagator(seq, system6)
        if kind == "P8":
            u = u @ u
        err[kind] = unitary_distance(u, expm_unitary(0.3 * hy, 240e-6))
    assert err["P16"] < 0.5 * err["P8"]


def test_finite_width_error_grows_with_width(system6):
    hy = dipolar_secular(system6, "y")
    errs = []
    for w in (0.5e-6, 1e-6, 2e-6):
        seq = build_sequence("P8", 0.3, 10e-6, "F", ErrorModel(pulse_width=w))
        errs.append(unitary_distance(cycle_propagator(seq, system6), expm_unitary(0.3 * hy, 120e-6)))
    assert errs[0] < errs[1] < errs[2]


def test_magic_echo_entries(system4):
    seq = build_sequence("magic_echo", tau=50e-6)
    assert seq.delta == -0.5
    hy = dipolar_secular(system4, "y")
    np.testing.assert_allclose(cycle_propagator(seq, system4), expm_unitary(-0.5 * hy, 50e-6), atol=1e-12)


def test_magic_echo_spinlock_model(system4):
    hy = dipolar_secular(system4, "y")
    t = 200e-6
    seq = magic_echo_microscopic(t, 2 * np.pi * 200e3)
    u = cycle_propagator(seq, system4)
    target = expm_unitary(-0.5 * hy, t)
    assert unitary_distance(u, target) < 0.05 * unitary_distance(expm_unitary(hy, t), target)


def test_free_evolution(system4):
    seq = build_sequence("free", tau=20e-6)
    assert seq.delta == 1.0 and seq.cycle_time == pytest.approx(40e-6)
    h0 = numeric_average_hamiltonian(seq, system4.with_offsets([300.0, -20.0, 5.0, 60.0]), 0)
    np.testing.assert_allclose(h0, dipolar_secular(system4, "y"), atol=1e-9)


def test_registry_append_only(tmp_path):
    reg = SequenceRegistry(tmp_path / "reg.json")
    rec = registry_record(build_sequence("P8", 0.3, 10e-6, "F"))
    reg.publish(rec)
    reg.publish(registry_record(build_sequence("P16", 0.2, 10e-6, "B")))
    data = json.loads((tmp_path / "reg.json").read_text())
    assert data["version"] == 1 and len(data["records"]) == 2
    found = reg.lookup("P8", "F")
    assert found[0]["phases"] == [PHASES[p] for p in default_pattern("F")]
    assert len(found[0]["verification"]["sequence_sha256"]) == 64
    assert not list(tmp_path.glob("*.tmp"))


def test_patterns_table():
    rows = all_patterns_table()
    assert sum(r["default"] for r in rows) == 2
    assert {r["direction"] for r in rows} == {"F", "B"}
