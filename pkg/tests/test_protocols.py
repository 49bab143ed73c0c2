import numpy as np
import pytest

from scaledspin.hamiltonians import dipolar_secular
from scaledspin.protocols import (
    AliasingError,
    Dynamics,
    SequenceConfig,
    SignalCurve,
    direct_oto_commutator,
    loschmidt_echo,
    magnetization_decay,
    mqc_series,
    mqc_spectrum,
    normalized_echo,
    otoc_second_moment,
    phase_curvature,
    self_time_collapse,
    spin_count,
    stroboscopic_times,
)
from scaledspin.sequences import ErrorModel, SequenceError
from scaledspin.spin_core import make_system

KHZ = 2 * np.pi * 1e3


@pytest.fixture(scope="module")
def sys6():
    return make_system("random", 6, KHZ, seed=1)


@pytest.fixture(scope="module")
def pair():
    return make_system("pair", 2, KHZ)


def test_decay_starts_at_one(sys6):
    cfg = SequenceConfig("P8", 0.3, 5e-6)
    c = magnetization_decay(sys6, cfg, stroboscopic_times(cfg, 20, 4))
    assert c.values[0] == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(c.self_times, 0.3 * c.times)
    assert c.metadata["kind"] == "P8" and c.metadata["n_spins"] == 6


def test_pair_cosine_ideal(pair):
    d = pair.couplings[0, 1]
    cfg = SequenceConfig("P8", 0.35, 10e-6, "ideal")
    t = np.linspace(0, 3e-3, 40)
    np.testing.assert_allclose(magnetization_decay(pair, cfg, t).values, np.cos(1.5 * 0.35 * d * t), atol=1e-12)


def test_forward_backward_same_decay(sys6):
    cfg = SequenceConfig("P8", 0.3, 10e-6, "ideal")
    t = np.linspace(0, 2e-3, 25)
    f = magnetization_decay(sys6, cfg, t, "F").values
    b = magnetization_decay(sys6, cfg, t, "B").values
    np.testing.assert_allclose(f, b, atol=1e-10)


def test_delta_zero_deviation_shrinks_with_tau(sys6):
    dev = []
    for tau in (8e-6, 4e-6, 2e-6):
        cfg = SequenceConfig("P8", 0.0, tau)
        times = np.linspace(0, 2e-3, 5)
        times = np.rint(times / cfg.cycle_time()) * cfg.cycle_time()
        dev.append(np.abs(magnetization_decay(sys6, cfg, times).values - 1).max())
    assert dev[0] > dev[1] > dev[2]


def test_flip_error_at_delta_zero_decays(sys6):
    cfg = SequenceConfig("P8", 0.0, 5e-6, errors=ErrorModel(flip_error=0.05))
    c = magnetization_decay(sys6, cfg, stroboscopic_times(cfg, 400, 40))
    assert c.values[-1] < 0.95
    assert np.polyfit(c.times, c.values, 1)[0] < 0


def test_non_stroboscopic_time_rejected(sys6):
    dyn = Dynamics(sys6, SequenceConfig("P8", 0.3, 10e-6), "F")
    with pytest.raises(ValueError, match="multiple of the cycle time"):
        dyn.unitary(50e-6)


@pytest.mark.parametrize("kind,delta", [("P8", 0.3), ("P16", 0.5), ("magic_echo", 0.0), ("free", 0.0)])
def test_perfect_echo(sys6, kind, delta):
    cfg = SequenceConfig(kind, delta, 10e-6, "ideal")
    m = loschmidt_echo(sys6, cfg, np.linspace(0, 5e-3, 30)).values
    assert np.abs(m - 1).max() < 1e-10


def test_echo_with_errors_decays(sys6):
    cfg = SequenceConfig("P8", 0.2, 10e-6, errors=ErrorModel(flip_error=0.1, pulse_width=1e-6))
    m = loschmidt_echo(sys6, cfg, stroboscopic_times(cfg, 300, 30)).values
    assert m[0] == pytest.approx(1.0)
    assert m[-1] < 0.9
    assert np.polyfit(np.arange(m.size), m, 1)[0] < 0


def test_echo_backward_bound(sys6):
    with pytest.raises(SequenceError, match="backward scaling exceeds 1/2"):
        loschmidt_echo(sys6, SequenceConfig("P8", 0.6, 10e-6, "ideal"), [0.0])


def test_normalized_echo(sys6):
    errs = ErrorModel(flip_error=0.05)
    c1 = SequenceConfig("P8", 0.25, 10e-6, errors=errs)
    c0 = SequenceConfig("P8", 0.0, 10e-6, errors=errs)
    t = stroboscopic_times(c1, 40, 10)
    m1, m0 = loschmidt_echo(sys6, c1, t), loschmidt_echo(sys6, c0, t)
    n = normalized_echo(m1, m0)
    np.testing.assert_allclose(n.values, m1.values / m0.values)
    with pytest.raises(ValueError, match="different times"):
        normalized_echo(m1, SignalCurve(t[:-1] * 2, m0.values[:-1]))


def test_mqc_t0(sys6):
    spec = mqc_spectrum(sys6, SequenceConfig("P8", 0.3, 10e-6, "ideal"), 0.0, Q=16)
    assert spec.intensity(0) == pytest.approx(1.0, abs=1e-14)
    assert np.abs(np.delete(spec.S_q, np.flatnonzero(spec.orders == 0))).max() < 1e-14
    assert otoc_second_moment(spec) == pytest.approx(0.0, abs=1e-12)
    assert direct_oto_commutator(sys6, dipolar_secular(sys6, "y"), 0.0) == pytest.approx(0.0, abs=1e-14)


def test_pair_mqc_orders_and_otoc(pair):
    cfg = SequenceConfig("P8", 0.4, 10e-6, "ideal")
    h = 0.4 * dipolar_secular(pair, "y")
    for t in np.linspace(1e-4, 3e-3, 7):
        spec = mqc_spectrum(pair, cfg, t, Q=8)
        outside = [spec.intensity(q) for q in spec.orders if q not in (0, 2, -2)]
        assert np.abs(outside).max() < 1e-12
        assert spec.second_moment == pytest.approx(direct_oto_commutator(pair, h, t), abs=1e-8)


def test_mqc_invariants(sys6):
    cfg = SequenceConfig("P16", 0.3, 5e-6)
    t = cfg.cycle_time() * 30
    spec = mqc_spectrum(sys6, cfg, t, Q=32)
    m = loschmidt_echo(sys6, cfg, [t]).values[0]
    assert spec.total == pytest.approx(m, abs=1e-10)
    for q in range(1, 16):
        assert spec.intensity(q) == pytest.approx(spec.intensity(-q), abs=1e-10)
    assert np.abs(spec.S_q[spec.orders % 2 == 1]).max() < 1e-12
    assert spec.S_q.min() > -1e-12
    assert spec.max_imag < 1e-10


def test_phase_curvature_cross_check(sys6):
    cfg = SequenceConfig("P8", 0.3, 10e-6, "ideal")
    spec = mqc_spectrum(sys6, cfg, 1e-3, Q=32)
    assert phase_curvature(sys6, cfg, 1e-3) == pytest.approx(spec.second_moment, rel=1e-5)


def test_aliasing_guard(sys6):
    cfg = SequenceConfig("P8", 0.3, 10e-6, "ideal")
    with pytest.raises(AliasingError) as exc:
        mqc_spectrum(sys6, cfg, 1e-3, Q=8)
    assert exc.value.max_order == 6
    with pytest.raises(ValueError, match="even"):
        mqc_spectrum(sys6, cfg, 1e-3, Q=7)


def test_spin_count_n10_growth_and_bound():
    system = make_system("random", 10, KHZ, seed=2)
    cfg = SequenceConfig("P16", 0.5, 10e-6, "ideal")
    d_bar = system.local_coupling_rms()
    st = np.linspace(0.25, 12.0, 14) / d_bar
    n = np.array([spin_count(spec) for spec in mqc_series(system, cfg, st / 0.5, Q=32)])
    early = n[:5]
    assert np.all(np.diff(early) > 0)
    assert n.max() <= 10.0
    # saturation: late values vary much less than the early rise
    assert np.ptp(n[-5:]) < 0.5 * (n[4] - n[0])


def test_ideal_collapse_exact(sys6):
    d_bar = sys6.local_coupling_rms()
    st = np.linspace(0, 5 / d_bar, 50)
    curves = [magnetization_decay(sys6, SequenceConfig("P8", d, 10e-6, "ideal"), st / d)
              for d in (0.1, 0.2, 0.5, 0.9)]
    assert self_time_collapse(curves).max_spread < 1e-10


def test_collapse_spread_grows_with_flip_error(sys6):
    d_bar = sys6.local_coupling_rms()
    spreads = []
    for eps in (0.0, 0.03, 0.08):
        curves = []
        for d in (0.2, 0.4):
            cfg = SequenceConfig("P8", d, 2e-6, errors=ErrorModel(flip_error=eps))
            tc = cfg.cycle_time()
            curves.append(magnetization_decay(sys6, cfg, tc * np.arange(int(4 / d_bar / d / tc) + 2)))
        spreads.append(self_time_collapse(curves, 4 / d_bar).max_spread)
    assert spreads[0] < spreads[1] < spreads[2]


def test_collapse_errors():
    a = SignalCurve([0, 1], [1, 0.5], {"delta": 0.1})
    with pytest.raises(ValueError, match="at least two"):
        self_time_collapse([a])
    b = SignalCurve([20, 30], [1, 0.5], {"delta": 0.1})
    with pytest.raises(ValueError, match="no overlapping"):
        self_time_collapse([a, b])


def test_signal_curve_csv_round_trip():
    c = SignalCurve(np.array([0.0, 1e-4, 2.5e-4]), np.array([1.0, 0.7, 1 / 3]), {"delta": 0.3})
    text = c.to_csv()
    assert text.splitlines()[0] == "time_s,self_time_s,value"
    back = SignalCurve.from_csv(text, {"delta": 0.3})
    np.testing.assert_array_equal(back.times, c.times)
    np.testing.assert_array_equal(back.values, c.values)
