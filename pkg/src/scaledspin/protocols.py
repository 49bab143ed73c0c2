"""Magnetisation decay, Loschmidt echo and MQC/OTOC measurement protocols.

All signals are normalised correlators (value 1 at t = 0). Pulsed runs are
sampled stroboscopically at multiples of the cycle time; idealised runs
evolve under the average Hamiltonian directly and accept any time.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .hamiltonians import dipolar_secular
from .sequences import (
    IDEAL,
    ErrorModel,
    SequenceError,
    build_sequence,
    cycle_propagator,
)
from .spin_core import (
    FloquetPropagator,
    SpinSystem,
    collective_operator,
    magnetization_diagonal,
    norm_factor,
    propagator,
)

KINDS = ("P8", "P16", "magic_echo", "free")


class AliasingError(ValueError):
    def __init__(self, message: str, max_order: int):
        super().__init__(message)
        self.max_order = max_order


@dataclass(frozen=True)
class SequenceConfig:
    """How the scaled evolution is realised.

    ``mode="ideal"`` evolves under the target average Hamiltonian
    (``+-delta H_d^y``, ``-H_d^y/2`` for the magic echo, ``H_d^y`` for free
    evolution). ``mode="pulsed"`` uses exact cycle propagators of the pulse
    sequence, including ``errors``.
    """

    kind: str = "P8"
    delta: float = 0.0
    tau: float = 10e-6
    mode: str = "pulsed"
    errors: ErrorModel = IDEAL
    min_separation: float = 1e-6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sequence kind {self.kind!r}")
        if self.mode not in ("ideal", "pulsed"):
            raise ValueError("mode must be 'ideal' or 'pulsed'")

    @property
    def scaling(self) -> float:
        """Signed scaling of the forward block."""
        if self.kind == "magic_echo":
            return -0.5
        if self.kind == "free":
            return 1.0
        return float(self.delta)

    def sequence(self, direction: str):
        return build_sequence(self.kind, self.delta, self.tau, direction, self.errors,
                              min_separation=self.min_separation)

    def cycle_time(self) -> float:
        return self.sequence("F").cycle_time

    def to_dict(self) -> dict:
        return {"kind": self.kind, "delta": self.delta, "tau": self.tau, "mode": self.mode,
                "errors": self.errors.to_dict(), "min_separation": self.min_separation}


class Dynamics:
    """Unitaries ``U(t)`` for one direction of a sequence configuration."""

    def __init__(self, system: SpinSystem, config: SequenceConfig, direction: str = "F"):
        self.system = system
        self.config = config
        self.direction = direction
        if config.mode == "ideal":
            if direction == "B" and config.kind in ("P8", "P16") and config.delta > 0.5:
                raise SequenceError("backward scaling exceeds 1/2")
            sign = -1.0 if direction == "B" else 1.0
            if config.kind in ("magic_echo", "free"):
                sign = 1.0
            coef = sign * config.scaling
            self.generator = coef * dipolar_secular(system, "y")
            self._prop = propagator(self.generator)
            self.cycle_time = None
        else:
            seq = config.sequence(direction)
            self.sequence = seq
            self.cycle_time = seq.cycle_time
            self._floquet = FloquetPropagator(cycle_propagator(seq, system))

    def cycles(self, t: float) -> int:
        k = t / self.cycle_time
        n = int(round(k))
        if abs(k - n) > 1e-6:
            raise ValueError(f"t={t!r} is not a multiple of the cycle time {self.cycle_time!r}")
        if n < 0:
            raise ValueError("negative time")
        return n

    def unitary(self, t: float) -> np.ndarray:
        if self.config.mode == "ideal":
            return self._prop.unitary(t)
        return self._floquet.power(self.cycles(t))


def stroboscopic_times(config: SequenceConfig, n_cycles: int, every: int = 1) -> np.ndarray:
    """``k t_c`` for ``k = 0, every, 2 every, ... <= n_cycles``."""
    t_c = config.cycle_time()
    return t_c * np.arange(0, n_cycles + 1, every)


# ----------------------------------------------------------------------------
# signal containers


@dataclass
class SignalCurve:
    times: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")

    @property
    def delta(self) -> float:
        return float(self.metadata.get("delta", 1.0))

    @property
    def self_times(self) -> np.ndarray:
        return abs(self.delta) * self.times

    def normalized_by(self, reference: "SignalCurve") -> "SignalCurve":
        """Pointwise ratio to a reference curve sampled at the same times."""
        if self.times.shape != reference.times.shape or not np.allclose(
                self.times, reference.times, rtol=1e-12, atol=0):
            raise ValueError("curves are sampled at different times")
        meta = dict(self.metadata, normalized_by=reference.metadata.get("label", "reference"))
        return SignalCurve(self.times, self.values / reference.values, meta)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_s", "self_time_s", "value"])
        for t, st, v in zip(self.times, self.self_times, self.values):
            w.writerow([repr(float(t)), repr(float(st)), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, metadata: Optional[dict] = None) -> "SignalCurve":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(x) for x in r] for r in rows[1:]]) if len(rows) > 1 else np.zeros((0, 3))
        return cls(data[:, 0], data[:, 2], dict(metadata or {}))


@dataclass
class MQCSpectrum:
    t: float
    Q: int
    phases: np.ndarray
    S_phi: np.ndarray
    orders: np.ndarray
    S_q: np.ndarray
    max_imag: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def second_moment(self) -> float:
        return otoc_second_moment(self)

    @property
    def total(self) -> float:
        return float(self.S_q.sum())

    def intensity(self, q: int) -> float:
        idx = np.flatnonzero(self.orders == q)
        return float(self.S_q[idx[0]]) if idx.size else 0.0


# ----------------------------------------------------------------------------
# protocols


def _initial(system: SpinSystem) -> np.ndarray:
    return collective_operator(system, "z")


def _signal(a: np.ndarray, b: np.ndarray, n: int) -> float:
    return float(np.einsum("ij,ji->", a, b).real) / norm_factor(n)


def magnetization_decay(system: SpinSystem, config: SequenceConfig, times: Sequence[float],
                        direction: str = "F") -> SignalCurve:
    """``P(t) = Tr[I^z(t) I^z] / Tr[(I^z)^2]`` under one sequence direction."""
    dyn = Dynamics(system, config, direction)
    iz = _initial(system)
    vals = []
    for t in times:
        u = dyn.unitary(t)
        vals.append(_signal(u.conj().T @ iz @ u, iz, system.n_spins))
    meta = _meta(system, config, "decay", direction)
    return SignalCurve(np.asarray(times, dtype=float), np.array(vals), meta)


def loschmidt_echo(system: SpinSystem, config: SequenceConfig, times: Sequence[float]) -> SignalCurve:
    """Forward block then backward block of equal length and scaling."""
    if config.kind in ("P8", "P16") and config.delta > 0.5:
        raise SequenceError("backward scaling exceeds 1/2")
    fwd = Dynamics(system, config, "F")
    bwd = _backward(system, config)
    iz = _initial(system)
    vals = []
    for t in times:
        u = bwd.unitary(t) @ fwd.unitary(t)
        vals.append(_signal(u.conj().T @ iz @ u, iz, system.n_spins))
    meta = _meta(system, config, "echo", "FB")
    return SignalCurve(np.asarray(times, dtype=float), np.array(vals), meta)


def _backward(system: SpinSystem, config: SequenceConfig) -> Dynamics:
    if config.kind in ("P8", "P16"):
        return Dynamics(system, config, "B")
    # magic echo and free evolution are reversed by an exactly inverted generator
    if config.mode != "ideal":
        raise SequenceError(f"no pulsed backward block for {config.kind}")
    dyn = Dynamics(system, config, "F")
    dyn.generator = -dyn.generator
    dyn._prop = propagator(dyn.generator)
    return dyn


def normalized_echo(echo: SignalCurve, reference: SignalCurve) -> SignalCurve:
    """``M^delta(t) / M^{delta=0}(t)``."""
    return echo.normalized_by(reference)


def _meta(system: SpinSystem, config: SequenceConfig, protocol: str, direction: str) -> dict:
    return {
        "protocol": protocol,
        "direction": direction,
        "delta": abs(config.scaling),
        "signed_delta": config.scaling if direction != "B" else -config.scaling,
        "tau": config.tau,
        "kind": config.kind,
        "mode": config.mode,
        "errors": config.errors.to_dict(),
        "n_spins": system.n_spins,
        "label": f"{protocol}-{config.kind}-{direction}-d{config.delta:g}",
    }


def mqc_spectrum(system: SpinSystem, config: SequenceConfig, t: float, Q: int = 64,
                 alias_guard: float = 1e-6) -> MQCSpectrum:
    """Phase-encoded echo ``S_phi`` and its discrete Fourier transform ``S_q``.

    A collective rotation ``exp(-i phi I^z)`` with ``phi_n = 2 pi n / Q``
    (n = 1..Q) is inserted between the forward and backward blocks and
    ``S_q = (1/Q) sum_n exp(i q phi_n) S_phi_n`` for ``q = -Q/2 .. Q/2 - 1``.
    """
    return mqc_series(system, config, [t], Q, alias_guard)[0]


def mqc_series(system: SpinSystem, config: SequenceConfig, times: Sequence[float], Q: int = 64,
               alias_guard: float = 1e-6) -> list[MQCSpectrum]:
    """:func:`mqc_spectrum` at several times, sharing the propagators."""
    if Q % 2 or Q < 2:
        raise ValueError("Q must be an even integer >= 2")
    fwd = Dynamics(system, config, "F")
    bwd = _backward(system, config)
    return [_mqc_at(system, config, fwd, bwd, float(t), Q, alias_guard) for t in times]


def _mqc_at(system, config, fwd, bwd, t, Q, alias_guard) -> MQCSpectrum:
    n = system.n_spins
    iz = _initial(system)
    uf = fwd.unitary(t)
    ub = bwd.unitary(t)
    rho = uf @ iz @ uf.conj().T
    obs = ub.conj().T @ iz @ ub
    m = magnetization_diagonal(n)
    dm = m[:, None] - m[None, :]
    support = np.abs(rho) > 1e-12 * max(np.abs(rho).max(), 1e-300)
    max_order = int(round(np.abs(dm[support]).max())) if support.any() else 0
    if Q <= 2 * max_order:
        raise AliasingError(
            f"Q={Q} aliases coherence orders up to {max_order}; need Q > {2 * max_order}",
            max_order,
        )
    phases = 2 * np.pi * np.arange(1, Q + 1) / Q
    # Tr[obs R rho R^dag] = sum_ij obs_ji rho_ij exp(-i phi dm_ij); sum per order first
    k = np.rint(dm).astype(int).ravel() + n
    prod = (rho * obs.T).ravel()
    w = (np.bincount(k, prod.real, 2 * n + 1) + 1j * np.bincount(k, prod.imag, 2 * n + 1)) / norm_factor(n)
    ks = np.arange(-n, n + 1)
    s_phi = (np.exp(-1j * phases[:, None] * ks[None, :]) @ w).real
    orders = np.arange(-Q // 2, Q // 2)
    kernel = np.exp(1j * orders[:, None] * phases[None, :])
    s_q_c = kernel @ s_phi / Q
    max_imag = float(np.abs(s_q_c.imag).max())
    s_q = s_q_c.real
    half = abs(s_q[0])
    if half > alias_guard:
        raise AliasingError(f"|S_(Q/2)| = {half:.3g} exceeds the aliasing guard", max_order)
    meta = _meta(system, config, "mqc", "FB")
    meta["max_order"] = max_order
    return MQCSpectrum(float(t), Q, phases, s_phi, orders, s_q, max_imag, meta)


def otoc_second_moment(spec: MQCSpectrum) -> float:
    """``sum_q q^2 S_q``."""
    return float(np.sum(spec.orders.astype(float) ** 2 * spec.S_q))


def direct_oto_commutator(system: SpinSystem, hamiltonian: np.ndarray, t: float) -> float:
    """``Tr[C^dag C] / Tr[(I^z)^2]`` with ``C = [I^z, I^z(t)]``, built directly."""
    iz = _initial(system)
    izt = propagator(hamiltonian).heisenberg(iz, t)
    c = iz @ izt - izt @ iz
    return float(np.einsum("ij,ij->", c.conj(), c).real) / norm_factor(system.n_spins)


def phase_curvature(system: SpinSystem, config: SequenceConfig, t: float, step: float = 1e-3) -> float:
    """``-d^2 S_phi / d phi^2`` at ``phi = 0`` by central differences."""
    n = system.n_spins
    fwd = Dynamics(system, config, "F")
    bwd = _backward(system, config)
    iz = _initial(system)
    uf, ub = fwd.unitary(t), bwd.unitary(t)
    rho = uf @ iz @ uf.conj().T
    obs = ub.conj().T @ iz @ ub

    def s(phi):
        rot = collective_rotation_z(n, phi)
        return _signal(rot @ rho @ rot.conj().T, obs, n)

    return -(s(step) - 2 * s(0.0) + s(-step)) / step**2


def collective_rotation_z(n_spins: int, phi: float) -> np.ndarray:
    return np.diag(np.exp(-1j * phi * magnetization_diagonal(n_spins)))


def spin_count(spec: MQCSpectrum) -> float:
    """``N(t) = sqrt(Q^2)``."""
    return math.sqrt(max(otoc_second_moment(spec), 0.0))


# ----------------------------------------------------------------------------
# self-time collapse


@dataclass(frozen=True)
class CollapseReport:
    grid: np.ndarray
    spread: np.ndarray
    max_spread: float
    mean_spread: float
    deltas: tuple

    def to_dict(self) -> dict:
        return {"max_spread": self.max_spread, "mean_spread": self.mean_spread,
                "deltas": list(self.deltas), "n_grid": int(self.grid.size),
                "self_time_max_s": float(self.grid[-1]) if self.grid.size else 0.0}


def self_time_collapse(curves: Sequence[SignalCurve], self_time_max: Optional[float] = None) -> CollapseReport:
    """Spread of several curves once plotted against self-time.

    The shared grid is the first curve's self-time nodes inside the common
    range; other curves are linearly interpolated onto it.
    """
    if len(curves) < 2:
        raise ValueError("need at least two curves")
    lo = max(c.self_times.min() for c in curves)
    hi = min(c.self_times.max() for c in curves)
    if self_time_max is not None:
        hi = min(hi, self_time_max)
    if hi <= lo:
        raise ValueError("curves have no overlapping self-time range")
    base = curves[0].self_times
    grid = base[(base >= lo) & (base <= hi * (1 + 1e-12))]
    stack = np.array([np.interp(grid, c.self_times, c.values) for c in curves])
    spread = stack.max(axis=0) - stack.min(axis=0)
    return CollapseReport(grid, spread, float(spread.max()), float(spread.mean()),
                          tuple(c.delta for c in curves))
