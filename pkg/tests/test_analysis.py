import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.exceptions import NotFittedError

from scaledspin.analysis import (
    AbragamFit,
    BoltzmannFit,
    FitError,
    FlambaumIzrailevFit,
    GaussianMQCFit,
    LinearFit,
    PowerLawFit,
    SaturationFit,
    abragam,
    abragam_t2,
    boltzmann,
    fgr_rate,
    fit_abragam,
    fit_gaussian_mqc,
    fit_power_law,
    fit_saturation,
    flambaum_izrailev,
    half_max_time,
    linear_fit,
    t_star,
)
from scaledspin.protocols import SequenceConfig, magnetization_decay, mqc_spectrum
from scaledspin.spin_core import make_system

W, H = 2 * np.pi * 10e3, 2 * np.pi * 6e3


def test_abragam_noiseless_recovery():
    t = np.linspace(0, 200e-6, 201)
    r = AbragamFit().fit(t, abragam(t, W, H)).result()
    assert r.params["w"] == pytest.approx(W, rel=1e-3)
    assert r.params["h"] == pytest.approx(H, rel=1e-3)
    assert r.derived["T2"] == pytest.approx(1 / math.sqrt(H**2 + W**2 / 3), rel=1e-3)


def test_abragam_w_zero_limit():
    assert abragam_t2(0.0, H) == pytest.approx(1 / H)
    t = np.linspace(0, 5e-4, 50)
    np.testing.assert_allclose(abragam(t, 0.0, H), np.exp(-0.5 * (H * t) ** 2))


def test_abragam_rescaled_rate_constant_across_delta():
    system = make_system("random", 6, 2 * np.pi * 1e3, seed=1)
    rates = []
    for d in (0.2, 0.4, 0.8):
        cfg = SequenceConfig("P8", d, 10e-6, "ideal")
        curve = magnetization_decay(system, cfg, np.linspace(0, 1.5e-3 / d, 120))
        rates.append(fit_abragam(curve).derived["rescaled_rate"])
    np.testing.assert_allclose(rates, rates[0], rtol=1e-4)


def test_abragam_requires_unit_start():
    t = np.linspace(0, 1e-4, 20)
    with pytest.raises(ValueError, match="start at 1"):
        AbragamFit().fit(t, 0.5 * abragam(t, W, H))


def test_fi_recovery():
    t = np.linspace(0, 6, 121)
    r = FlambaumIzrailevFit().fit(t, flambaum_izrailev(t, 2.08, 0.708)).result()
    assert r.params["Gamma"] == pytest.approx(2.08, rel=1e-2)
    assert r.params["sigma"] == pytest.approx(0.708, rel=1e-2)
    assert r.derived["T_star"] == pytest.approx(math.sqrt(2) / r.params["sigma"])
    assert r.derived["N_1"] == pytest.approx(1 / r.derived["sigma_1"])


def test_fi_large_sigma_limit():
    t = np.linspace(0, 3, 30)
    np.testing.assert_allclose(flambaum_izrailev(t, 0.7, 1e6), np.exp(-2 * 0.7 * t), rtol=1e-6)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_fi_starts_at_one(gamma, sigma):
    assert flambaum_izrailev(0.0, gamma, sigma) == 1.0


def test_fgr_rate_and_t_star():
    assert fgr_rate(math.pi, 1.0)["sigma_1"] == pytest.approx(1.0)
    assert fgr_rate(2.08, 0.708)["sigma_1"] == pytest.approx(0.757, abs=1e-3)
    assert t_star(0.708) == pytest.approx(1.9975, abs=1e-3)
    with pytest.raises(ValueError, match="positive"):
        fgr_rate(0.0, 1.0)
    with pytest.raises(ValueError):
        fgr_rate(-1.0, 1.0)


def test_boltzmann_half_max_on_grid():
    x = np.linspace(0, 3e-3, 31)
    y = boltzmann(x, 1.0, 0.0, 1e-3, 0.2e-3)
    fit = BoltzmannFit(delta=0.3).fit(x, y)
    r = fit.result()
    # data half maximum, not the fitted midpoint: within one grid step of x0
    assert abs(r.derived["T3"] - 1e-3) < x[1] - x[0]
    assert r.derived["T3_scaled"] == pytest.approx(0.3 * r.derived["T3"])
    assert r.params["x0"] == pytest.approx(1e-3, rel=1e-6)
    assert not r.flags


def test_boltzmann_constant_curve_censored():
    x = np.linspace(0, 1, 10)
    r = BoltzmannFit().fit(x, np.ones(10) + 1e-9 * x).result()
    assert r.derived["censored"] is True
    assert r.derived["T3"] == pytest.approx(1.0)
    assert "right-censored" in r.flags


def test_half_max_interpolates():
    hm = half_max_time([0, 1, 2], [1.0, 0.8, 0.2])
    assert hm.time == pytest.approx(1.5) and not hm.censored


@settings(max_examples=50)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_half_max_scale_invariance(a, b):
    t = np.linspace(0, 4, 41)
    v = boltzmann(t, 1.0, 0.05, 1.7, 0.3)
    base = half_max_time(t, v).time
    assert half_max_time(b * t, a * v).time == pytest.approx(b * base, rel=1e-9)


def test_gaussian_mqc_recovery():
    q = np.arange(-20, 20)
    s = np.exp(-(q**2) / 25.0)
    s /= s.sum()
    r = GaussianMQCFit().fit(q, s).result()
    assert r.params["N"] == pytest.approx(5.0, rel=2e-2)
    assert not r.flags


def test_gaussian_two_spin_fallback():
    pair = make_system("pair", 2, 2 * np.pi * 1e3)
    spec = mqc_spectrum(pair, SequenceConfig("P8", 0.4, 10e-6, "ideal"), 1e-3, Q=8)
    r = fit_gaussian_mqc(spec)
    assert "fallback_sqrt_Q2" in r.flags
    assert r.params["N"] == pytest.approx(math.sqrt(spec.second_moment))


def test_gaussian_nondecaying_raises():
    q = np.arange(-4, 4)
    with pytest.raises(FitError):
        GaussianMQCFit().fit(q, 1.0 + 0.01 * q**2)


def test_power_law_recovery():
    x = np.linspace(1, 20, 15)
    r = fit_power_law(x, 2.3 * x**1.5)
    assert r.params["b"] == pytest.approx(1.5, abs=0.02)
    assert r.params["A"] == pytest.approx(2.3, rel=1e-6)
    with pytest.raises(ValueError, match="positive"):
        PowerLawFit().fit([0, 1, 2, 3], [1, 2, 3, 4])


def test_saturation_identity_line():
    x = np.linspace(0.05, 1, 20)
    r = fit_saturation(x, x)
    # the residual is quadratic in R near zero, so R is only weakly pinned
    assert r.params["R"] < 0.01
    r = fit_saturation(x, np.sqrt(0.3**2 + x**2), noise=0.01)
    assert r.params["R"] == pytest.approx(0.3, rel=1e-6)
    with pytest.raises(ValueError, match="degenerate"):
        SaturationFit().fit(np.ones(5), np.ones(5))


def test_linear_fit_exact():
    x = np.linspace(0, 1, 11)
    r = linear_fit(x, 26.77 * x - 0.71)
    assert r.params["slope"] == pytest.approx(26.77, abs=1e-10)
    assert r.params["intercept"] == pytest.approx(-0.71, abs=1e-10)
    with pytest.raises(ValueError, match="degenerate"):
        linear_fit(np.ones(4), np.arange(4.0))
    est = LinearFit().fit(x, 2 * x + 1)
    np.testing.assert_allclose(est.predict([3.0]), [7.0])


def test_estimator_api():
    est = AbragamFit(delta=0.5)
    assert est.get_params() == {"delta": 0.5}
    with pytest.raises(NotFittedError):
        est.predict([0.0])
    t = np.linspace(0, 200e-6, 101)
    est.fit(t.reshape(-1, 1), abragam(t, W, H))
    assert est.score(t, abragam(t, W, H)) > 0.999999
    with pytest.raises(ValueError, match="single column"):
        est.fit(np.zeros((5, 2)), np.zeros(5))


def test_fit_result_json_round_trip():
    t = np.linspace(0, 200e-6, 101)
    r = AbragamFit(delta=0.5).fit(t, abragam(t, W, H)).result()
    d = json.loads(r.to_json())
    assert d["model"] == "abragam"
    assert set(d["params"]) == {"w", "h"}
    assert d["derived"]["T2"] == pytest.approx(r.derived["T2"])
