"""Acceptance checks shared by ``scaledspin verify`` and the test suite.

Each ``criterion_*`` function returns a :class:`CriterionResult`; thresholds
live here, not in the library modules.
"""

from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.linalg as la

from . import analysis
from .hamiltonians import dipolar_all_axes, dipolar_secular
from .protocols import (
    SequenceConfig,
    direct_oto_commutator,
    loschmidt_echo,
    magnetization_decay,
    mqc_spectrum,
    self_time_collapse,
)
from .sequences import (
    build_sequence,
    cycle_propagator,
    numeric_average_hamiltonian,
    search_phase_patterns,
    slot_delays,
    symbolic_average,
)
from .spin_core import expm_unitary, make_system, unitary_distance

N_TRIALS = 100
KHZ = 2 * np.pi * 1e3


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f} s)"


def _timed(number: int, name: str, budget: float | None = None):
    def deco(fn):
        def wrapper() -> CriterionResult:
            t0 = time.perf_counter()
            ok, detail = fn()
            dt = time.perf_counter() - t0
            if budget is not None and dt > budget:
                ok, detail = False, f"{detail}; runtime {dt:.1f} s exceeds {budget:g} s"
            return CriterionResult(number, name, bool(ok), detail, dt)

        wrapper.__name__ = fn.__name__
        wrapper.number = number
        return wrapper

    return deco


@_timed(1, "average-Hamiltonian correctness", budget=10)
def criterion_average_hamiltonian():
    system = make_system("random", 6, 0.2 * KHZ, seed=3)
    hy = dipolar_secular(system, "y")
    ny = np.linalg.norm(hy)
    worst_num, worst_sym = 0.0, 0.0
    for direction, s in (("F", 1), ("B", -1)):
        for delta in (0.0, 0.1, 0.2, 0.3, 0.42):
            seq = build_sequence("P8", delta, 10e-6, direction)
            h0 = numeric_average_hamiltonian(seq, system, 0)
            worst_num = max(worst_num, np.linalg.norm(h0 - s * delta * hy) / ny)
            w = symbolic_average(seq).frame.weights
            expect = np.array([1 - s * delta, 1 + 2 * s * delta, 1 - s * delta]) / 3
            worst_sym = max(worst_sym, np.abs(w - expect).max())
    ok = worst_num < 1e-10 and worst_sym < 1e-12
    return ok, f"max rel. error {worst_num:.2e} (< 1e-10), weight error {worst_sym:.1e}"


@_timed(2, "Magnus-order scaling", budget=60)
def criterion_magnus_scaling():
    system = make_system("random", 6, 0.2 * KHZ, seed=3)
    hy = dipolar_secular(system, "y")
    taus = np.array([1e-6, 2e-6, 4e-6, 8e-6])
    delta = 0.4
    slopes = {}
    for kind in ("P8", "P16"):
        errs = []
        for tau in taus:
            seq = build_sequence(kind, delta, tau, "F")
            u = cycle_propagator(seq, system)
            errs.append(unitary_distance(u, expm_unitary(delta * hy, seq.cycle_time)))
        slopes[kind] = analysis.linear_fit(np.log(taus), np.log(errs)).params["slope"]
    ok = slopes["P8"] >= 1.7 and slopes["P16"] - slopes["P8"] >= 0.7
    return ok, f"slope 8P {slopes['P8']:.3f} (>= 1.7), 16P {slopes['P16']:.3f} (gain >= 0.7)"


def _collapse_curves(system, deltas, mode, tau, self_time_max, n_points=60):
    curves = []
    for d in deltas:
        cfg = SequenceConfig("P8", d, tau, mode)
        if mode == "ideal":
            times = np.linspace(0, self_time_max, n_points) / d
        else:
            tc = cfg.cycle_time()
            times = tc * np.arange(int(math.ceil(self_time_max / d / tc)) + 2)
        curves.append(magnetization_decay(system, cfg, times))
    return curves


@_timed(3, "self-time collapse", budget=300)
def criterion_self_time_collapse():
    system = make_system("random", 8, 1.0 * KHZ, seed=1)
    horizon = 5.0 / system.local_coupling_rms()
    ideal = self_time_collapse(_collapse_curves(system, (0.1, 0.3, 0.5, 0.7, 0.9), "ideal", 10e-6, horizon))
    pulsed = self_time_collapse(_collapse_curves(system, (0.2, 0.3, 0.4), "pulsed", 2e-6, horizon), horizon)
    ok = ideal.max_spread < 1e-10 and pulsed.max_spread < 0.02
    return ok, f"idealized spread {ideal.max_spread:.1e} (< 1e-10), pulsed 8P spread {pulsed.max_spread:.2e} (< 0.02)"


@_timed(4, "perfect-reversal echo")
def criterion_perfect_echo():
    system = make_system("random", 6, 1.0 * KHZ, seed=2)
    grids = [np.linspace(0, 2e-3, 41), np.geomspace(1e-6, 1e-2, 30), np.array([0.0, 3.3e-4, 7.7e-3])]
    worst = 0.0
    for kind, delta in (("P8", 0.1), ("P8", 0.3), ("P8", 0.5), ("P16", 0.25), ("magic_echo", 0.0), ("free", 0.0)):
        cfg = SequenceConfig(kind, delta, 10e-6, "ideal")
        for g in grids:
            worst = max(worst, np.abs(loschmidt_echo(system, cfg, g).values - 1).max())
    return worst < 1e-10, f"max |M - 1| = {worst:.1e} (< 1e-10)"


@_timed(5, "MQC identities", budget=300)
def criterion_mqc():
    worst = {"sum": 0.0, "sym": 0.0, "odd": 0.0, "otoc": 0.0}
    for n, seed in ((4, 0), (6, 1), (8, 1)):
        system = make_system("random", n, 1.0 * KHZ, seed=seed)
        for cfg in (SequenceConfig("P16", 0.3, 10e-6, "ideal"), SequenceConfig("P8", 0.2, 5e-6, "pulsed")):
            times = [0.0, 3e-4, 1.2e-3] if cfg.mode == "ideal" else [cfg.cycle_time() * k for k in (0, 5, 20)]
            echo = loschmidt_echo(system, cfg, times)
            for t, m in zip(times, echo.values):
                spec = mqc_spectrum(system, cfg, t, Q=4 * n)
                s = spec.S_q
                mirror = np.array([spec.intensity(-q) for q in spec.orders[1:]])
                worst["sum"] = max(worst["sum"], abs(spec.total - m))
                worst["sym"] = max(worst["sym"], np.abs(s[1:] - mirror).max())
                worst["odd"] = max(worst["odd"], np.abs(s[spec.orders % 2 == 1]).max())
                if cfg.mode == "ideal":
                    cz = direct_oto_commutator(system, cfg.delta * dipolar_secular(system, "y"), t)
                    worst["otoc"] = max(worst["otoc"], abs(spec.second_moment - cz))
    ok = worst["sum"] < 1e-10 and worst["sym"] < 1e-10 and worst["odd"] < 1e-12 and worst["otoc"] < 1e-8
    return ok, ("sum rule {sum:.1e}, symmetry {sym:.1e}, odd orders {odd:.1e}, "
                "Q2 - C_zz {otoc:.1e}").format(**worst)


def _pauli_pair_oracle(d: float):
    """Two-spin H_d^y, I^z and magnetisation built from explicit 2x2 matrices."""
    sx = np.array([[0, 1], [1, 0]]) / 2
    sy = np.array([[0, -1j], [1j, 0]]) / 2
    sz = np.array([[1, 0], [0, -1]]) / 2
    e = np.eye(2)
    ops = [(np.kron(s, e), np.kron(e, s)) for s in (sx, sy, sz)]
    dot = sum(a @ b for a, b in ops)
    hy = d * (3 * ops[1][0] @ ops[1][1] - dot)
    iz = ops[2][0] + ops[2][1]
    m = np.real(np.diag(iz))
    return hy, iz, m


@_timed(6, "two-spin analytics")
def criterion_two_spin():
    system = make_system("pair", 2, 1.0 * KHZ)
    d = float(system.couplings[0, 1])
    delta = 0.3
    cfg = SequenceConfig("P8", delta, 10e-6, "ideal")
    times = np.linspace(0, 4e-3, 50)
    pz = magnetization_decay(system, cfg, times).values
    err_pz = np.abs(pz - np.cos(1.5 * delta * d * times)).max()
    hy, iz, m = _pauli_pair_oracle(d)
    norm = np.trace(iz @ iz).real
    err_sq, stray = 0.0, 0.0
    dm = m[:, None] - m[None, :]
    for t in times[::7]:
        u = la.expm(-1j * delta * hy * t)
        rho = u @ iz @ u.conj().T
        spec = mqc_spectrum(system, cfg, t, Q=8)
        for q, s in zip(spec.orders, spec.S_q):
            oracle = float(np.sum(np.abs(rho[np.isclose(dm, q)]) ** 2)) / norm
            err_sq = max(err_sq, abs(s - oracle))
            if q not in (0, 2, -2):
                stray = max(stray, abs(s))
    ok = err_pz < 1e-10 and err_sq < 1e-10 and stray < 1e-10
    return ok, f"P_z error {err_pz:.1e}, S_q vs 4x4 oracle {err_sq:.1e}, outside {{0, +-2}} {stray:.1e}"


@_timed(7, "appendix numeric reproduction")
def criterion_appendix():
    s1 = analysis.fgr_rate(2.08, 0.708)["sigma_1"]
    ts = analysis.t_star(0.708)
    ok = abs(s1 - 0.759) <= 0.232 and abs(s1 - 0.757) < 5e-4 and abs(ts - 1.998) <= 0.001
    return ok, f"sigma_1R = {s1:.4f} per ms (0.759 +- 0.232), T* = {ts:.4f} ms (1.998 +- 0.001)"


# ----------------------------------------------------------------------------
# fit round trips; fixed seeds 0..99 and fixed noise levels


def _trial_abragam(rng):
    w, h = 2 * np.pi * 10e3, 2 * np.pi * 6e3
    t = np.linspace(0, 150e-6, 100)
    y = analysis.abragam(t, w, h) + 1e-3 * rng.standard_normal(t.size)
    y[0] = 1.0
    p = analysis.AbragamFit().fit(t, y).params_
    return abs(p["w"] / w - 1) < 0.01 and abs(p["h"] / h - 1) < 0.01


def _trial_fi(rng):
    g, s = 2.08, 0.708
    t = np.linspace(0, 6, 120)
    y = analysis.flambaum_izrailev(t, g, s) + 2e-4 * rng.standard_normal(t.size)
    p = analysis.FlambaumIzrailevFit().fit(t, y).params_
    return abs(p["Gamma"] / g - 1) < 0.01 and abs(p["sigma"] / s - 1) < 0.01


def _trial_boltzmann(rng):
    x = np.linspace(0, 3, 60)
    y = analysis.boltzmann(x, 1.0, 0.0, 1.0, 0.2) + 1e-2 * rng.standard_normal(x.size)
    m = analysis.BoltzmannFit().fit(x, y)
    grid = x[1] - x[0]
    return abs(m.params_["x0"] - 1.0) < 0.01 and abs(m.half_max_.time - 1.0) < grid


def _trial_gaussian(rng):
    q = np.arange(-16, 16)
    s = np.exp(-(q**2) / 25.0)
    s = s / s.sum()
    s = s + 1e-4 * s.max() * rng.standard_normal(q.size)
    n = analysis.GaussianMQCFit().fit(q, s).params_["N"]
    return abs(n / 5.0 - 1) < 0.02


def _trial_power(rng):
    x = np.geomspace(1, 10, 10)
    n = 3.0 * x**1.5 * (1 + 0.01 * rng.standard_normal(x.size))
    return abs(analysis.PowerLawFit().fit(x, n).params_["b"] - 1.5) < 0.02


def _trial_saturation(rng):
    x = np.linspace(0.05, 1.0, 20)
    y = analysis.saturation_law(x, 0.15) + 0.01 * rng.standard_normal(x.size)
    m = analysis.SaturationFit(noise=0.01).fit(x, y)
    return abs(m.params_["R"] - 0.15) <= 2 * m.errors_["R"]


ROUND_TRIPS = {
    "abragam": _trial_abragam,
    "flambaum_izrailev": _trial_fi,
    "boltzmann": _trial_boltzmann,
    "gaussian_mqc": _trial_gaussian,
    "power_law": _trial_power,
    "saturation": _trial_saturation,
}


def round_trip_counts(n_trials: int = N_TRIALS) -> dict:
    counts = {}
    for name, trial in ROUND_TRIPS.items():
        hits = 0
        for seed in range(n_trials):
            try:
                hits += bool(trial(np.random.default_rng(seed)))
            except analysis.FitError:
                pass
        counts[name] = hits
    return counts


@_timed(8, "fit round-trips", budget=120)
def criterion_round_trips():
    counts = round_trip_counts()
    ok = all(c >= 95 for c in counts.values())
    return ok, ", ".join(f"{k} {v}/100" for k, v in counts.items())


@_timed(9, "sequence synthesis")
def criterion_synthesis():
    system = make_system("random", 4, 1.0 * KHZ, seed=0)
    axes = dipolar_all_axes(system)
    delta = Fraction(3, 10)
    parts = []
    ok = True
    for direction, sign in (("F", 1), ("B", -1)):
        hits = search_phase_patterns(slot_delays(delta, Fraction(1), direction), (sign * delta, 0))
        worst = 0.0
        for pat in hits:
            seq = build_sequence("P8", float(delta), 10e-6, direction, phases=pat)
            avg = symbolic_average(seq)
            predicted = avg.c_y * axes["y"] + avg.c_z * axes["z"]
            h0 = numeric_average_hamiltonian(seq, system, 0)
            worst = max(worst, np.linalg.norm(h0 - predicted) / np.linalg.norm(axes["y"]))
        ok = ok and bool(hits) and worst < 1e-12
        parts.append(f"{direction}: {len(hits)} patterns, max deviation {worst:.1e}")
    return ok, "; ".join(parts)


DETERMINISM_CONFIG = {
    "system": {"geometry": "random", "n_spins": 5, "scale": 1.0 * KHZ, "seed": 4},
    "sequence": {"kind": "P8", "deltas": [0.2, 0.3, 0.4], "taus": [5e-6], "direction": "F"},
    "protocol": "decay",
    "time_grid": {"self_time_max": 4.0, "n_points": 30},
}


@_timed(10, "determinism")
def criterion_determinism():
    from .runner import run

    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "w1", Path(tmp) / "w2"
        run(json.loads(json.dumps(DETERMINISM_CONFIG)), a, workers=1)
        run(json.loads(json.dumps(DETERMINISM_CONFIG)), b, workers=2)
        files = sorted(p.name for p in a.glob("*.csv"))
        same = files == sorted(p.name for p in b.glob("*.csv")) and all(
            (a / f).read_bytes() == (b / f).read_bytes() for f in files)
    return same and bool(files), f"{len(files)} CSV files byte-identical across 1 and 2 workers: {same}"


CRITERIA = (
    criterion_average_hamiltonian,
    criterion_magnus_scaling,
    criterion_self_time_collapse,
    criterion_perfect_echo,
    criterion_mqc,
    criterion_two_spin,
    criterion_appendix,
    criterion_round_trips,
    criterion_synthesis,
    criterion_determinism,
)


def run_all(selected=None, echo=print) -> list[CriterionResult]:
    out = []
    for crit in CRITERIA:
        if selected and crit.number not in selected:
            continue
        res = crit()
        if echo:
            echo(res.line())
        out.append(res)
    return out
