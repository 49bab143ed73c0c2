"""Pulse sequences that scale (and invert) the dipolar Hamiltonian.

An 8-pulse cycle ``8P`` is nine delay slots separated by eight pi/2 pulses.
Each slot is an integer combination of two delays ``D1`` and ``D2``::

    forward:  D1 = tau (1 - delta),  D2 = tau (1 + 2 delta)
    backward: D1 = tau (1 + delta),  D2 = tau (1 - 2 delta)

and the cycle lasts ``12 tau``. Pulse phases are not transcribed by hand;
they are found by exhaustive search over {+x, +y, -x, -y} against the
target average Hamiltonian (``+delta H_d^y`` forward, ``-delta H_d^y``
backward, Zeeman term zero). The 16-pulse cycle appends the pi-shifted
copy of the 8P cycle in reverse order, which makes the toggling-frame
Hamiltonian time-symmetric and removes every odd Magnus order.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import threading
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg as la

from . import __version__
from .hamiltonians import commutator, dipolar_all_axes, internal_hamiltonian
from .spin_core import (
    AXES,
    SpinSystem,
    collective_operator,
    propagator,
    rotation_operator,
    single_spin_rotation,
)

PHASES = ("x", "y", "-x", "-y")
HALF_PI = math.pi / 2
DEFAULT_MIN_SEPARATION = 1e-6

# (count of D1, count of D2) for each of the nine slots of one 8P cycle
P8_SLOTS = ((1, 0), (0, 1), (2, 0), (0, 1), (2, 0), (0, 1), (2, 0), (0, 1), (1, 0))

# Generic rational scaling used to synthesise the registry patterns; any
# value away from the degenerate points 0, 1/4 and 1/2 selects the same set.
_REFERENCE_DELTA = Fraction(1, 7)


class SequenceError(ValueError):
    """Invalid sequence parameters (scaling range, delays, targets)."""


class SymbolicFrameError(ValueError):
    pass


# ----------------------------------------------------------------------------
# elements


@dataclass(frozen=True)
class Pulse:
    """A hard r.f. pulse.

    ``phase`` is one of ``x, y, -x, -y`` (rotation axis in the transverse
    plane) or ``z`` for an ideal virtual z rotation. ``duration == 0`` is a
    delta pulse.
    """

    phase: str
    flip_angle: float = HALF_PI
    duration: float = 0.0
    phase_error: float = 0.0

    def __post_init__(self):
        if self.phase not in PHASES + ("z",):
            raise ValueError(f"unknown pulse phase {self.phase!r}")
        if self.duration < 0:
            raise ValueError("pulse duration must be >= 0")
        if self.phase == "z" and self.duration != 0:
            raise ValueError("z rotations are virtual and must be ideal")

    @property
    def axis_vector(self) -> np.ndarray:
        if self.phase == "z":
            return np.array([0.0, 0.0, 1.0])
        base = {"x": 0.0, "y": HALF_PI, "-x": math.pi, "-y": 3 * HALF_PI}[self.phase]
        ang = base + self.phase_error
        return np.array([math.cos(ang), math.sin(ang), 0.0])

    @property
    def rf_amplitude(self) -> float:
        if self.duration == 0:
            return math.inf
        return self.flip_angle / self.duration

    def shifted(self) -> "Pulse":
        """The same pulse with its phase advanced by pi."""
        if self.phase == "z":
            return self
        flip = {"x": "-x", "-x": "x", "y": "-y", "-y": "y"}[self.phase]
        return replace(self, phase=flip)


@dataclass(frozen=True)
class Delay:
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise SequenceError(f"negative delay {self.duration!r}")


@dataclass(frozen=True)
class ScaledBlock:
    """Exact evolution under ``coefficient * H_d^axis`` for ``duration``."""

    duration: float
    coefficient: float
    axis: str = "y"


Element = Union[Pulse, Delay, ScaledBlock]


@dataclass(frozen=True)
class ErrorModel:
    """Control imperfections applied to every pulse of a sequence.

    ``pulse_width`` is the length of a pi/2 pulse; other flip angles scale
    it proportionally. ``zeeman_offsets`` (rad/s, one per spin) replace the
    system offsets during simulation.
    """

    flip_error: float = 0.0
    phase_error: float = 0.0
    pulse_width: float = 0.0
    zeeman_offsets: Optional[tuple] = None

    @property
    def is_ideal(self) -> bool:
        return (
            self.flip_error == 0
            and self.phase_error == 0
            and self.pulse_width == 0
            and self.zeeman_offsets is None
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.zeeman_offsets is not None:
            out["zeeman_offsets"] = list(self.zeeman_offsets)
        return out


IDEAL = ErrorModel()


@dataclass(frozen=True)
class PulseSequence:
    elements: tuple
    delta: float
    direction: str
    tau: float
    kind: str
    phases: tuple = ()
    error_model: ErrorModel = IDEAL
    min_separation: float = DEFAULT_MIN_SEPARATION

    @property
    def cycle_time(self) -> float:
        return float(sum(e.duration for e in self.elements))

    @property
    def pulses(self) -> list[Pulse]:
        return [e for e in self.elements if isinstance(e, Pulse)]

    @property
    def delays(self) -> list[float]:
        return [e.duration for e in self.elements if isinstance(e, Delay)]

    @property
    def target(self) -> tuple[float, float]:
        """Expected (c_y, c_z) of the zeroth-order average Hamiltonian."""
        return (self.delta, 0.0)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "delta": self.delta,
            "direction": self.direction,
            "tau": self.tau,
            "cycle_time": self.cycle_time,
            "phases": [PHASES[p] for p in self.phases],
            "elements": [_element_dict(e) for e in self.elements],
            "error_model": self.error_model.to_dict(),
        }


def _element_dict(e: Element) -> dict:
    if isinstance(e, Pulse):
        return {"type": "pulse", "phase": e.phase, "flip_angle": e.flip_angle,
                "duration": e.duration, "phase_error": e.phase_error}
    if isinstance(e, Delay):
        return {"type": "delay", "duration": e.duration}
    return {"type": "scaled", "duration": e.duration, "coefficient": e.coefficient,
            "axis": e.axis}


# ----------------------------------------------------------------------------
# toggling frames


def _frame_matrix(u2: np.ndarray) -> np.ndarray:
    """Real 3x3 M with ``U^dag I^b U = sum_a M[a, b] I^a`` for a 2x2 U."""
    half = {a: 0.5 * m for a, m in _PAULI_2.items()}
    m = np.empty((3, 3))
    for b, ab in enumerate(AXES):
        rotated = u2.conj().T @ half[ab] @ u2
        for a, aa in enumerate(AXES):
            m[a, b] = 2.0 * np.trace(half[aa] @ rotated).real
    return m


_PAULI_2 = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pulse_frame(pulse: Pulse) -> np.ndarray:
    """Signed-permutation frame matrix of an ideal multiple-of-pi/2 pulse."""
    if pulse.duration != 0:
        raise SymbolicFrameError("symbolic frame undefined: finite-width pulse")
    m = _frame_matrix(single_spin_rotation(pulse.axis_vector, pulse.flip_angle))
    r = np.rint(m)
    if np.abs(m - r).max() > 1e-9:
        raise SymbolicFrameError(
            "symbolic frame undefined: flip angle or phase not a multiple of pi/2"
        )
    return r.astype(int)


@lru_cache(maxsize=None)
def _phase_frames() -> tuple:
    return tuple(pulse_frame(Pulse(p)) for p in PHASES)


@dataclass(frozen=True)
class TogglingFrame:
    """Accumulated toggling-frame data of a cycle.

    ``rotation`` maps lab operator axes to toggling-frame axes (column b is
    the toggled image of ``I^b``); ``weights`` are dwell fractions of the
    dipolar Hamiltonian along x, y, z and ``zeeman`` is the signed dwell of
    the offset term.
    """

    rotation: np.ndarray
    weights: np.ndarray
    zeeman: np.ndarray


@dataclass(frozen=True)
class AverageHamiltonian:
    c_y: float
    c_z: float
    zeeman: np.ndarray
    frame: TogglingFrame

    @property
    def coefficients(self) -> tuple[float, float]:
        return (self.c_y, self.c_z)

    @property
    def closed(self) -> bool:
        """True when the net pulse rotation is the identity."""
        return bool(np.array_equal(self.frame.rotation, np.eye(3, dtype=int)))


def symbolic_average(seq: PulseSequence) -> AverageHamiltonian:
    """Zeroth-order average Hamiltonian from per-axis dwell weights.

    Uses ``H_d^x = -H_d^y - H_d^z`` so that ``H^0 = c_y H_d^y + c_z H_d^z``
    with ``c_y = w_y - w_x`` and ``c_z = w_z - w_x``. Scaled blocks add
    their coefficient times their dwell to the toggled axis.
    """
    rot = np.eye(3, dtype=int)
    w = np.zeros(3)
    z = np.zeros(3)
    total = 0.0
    for e in seq.elements:
        if isinstance(e, Pulse):
            rot = rot @ pulse_frame(e)
            continue
        if isinstance(e, Delay):
            a = rot[:, 2]
            w += np.abs(a) * e.duration
            z += a * e.duration
        else:
            w += np.abs(rot[:, AXES.index(e.axis)]) * e.coefficient * e.duration
        total += e.duration
    if total <= 0:
        raise SequenceError("sequence has zero duration")
    w = w / total
    z = z / total
    return AverageHamiltonian(float(w[1] - w[0]), float(w[2] - w[0]), z,
                              TogglingFrame(rot, w, z))


# ----------------------------------------------------------------------------
# phase-pattern synthesis


def _rationalize(values: Sequence[float]) -> list[Fraction]:
    total = sum(Fraction(v) for v in values)
    if total <= 0:
        raise SequenceError("delay pattern must have positive total duration")
    return [Fraction(Fraction(v) / total).limit_denominator(10**9) for v in values]


def search_phase_patterns(delay_pattern: Sequence, target=(0.0, 0.0), zeeman: bool = True,
                          closed: bool = True) -> list[tuple[int, ...]]:
    """All pulse-phase assignments reproducing a target average Hamiltonian.

    ``delay_pattern`` lists the ``n_pulses + 1`` delays (leading delay, the
    gaps, trailing delay). Every pulse is an ideal pi/2 rotation with phase
    index into ``PHASES``. A pattern matches when its exact (rational)
    coefficients equal ``target = (c_y, c_z)``, its Zeeman dwell vanishes
    (if ``zeeman``) and the net rotation is the identity (if ``closed``).
    Results are sorted lexicographically by phase indices; an empty list
    means no pattern exists.
    """
    fr = _rationalize(delay_pattern)
    n_pulses = len(fr) - 1
    if n_pulses < 1:
        raise SequenceError("need at least one pulse")
    if n_pulses > 8:
        raise SequenceError("exhaustive search limited to 8 pulses")
    total = sum(fr)
    ty = Fraction(target[0]).limit_denominator(10**9)
    tz = Fraction(target[1]).limit_denominator(10**9)
    frames = _phase_frames()
    hits: list[tuple[int, ...]] = []

    def axis_of(rot):
        col = rot[:, 2]
        k = int(np.flatnonzero(col)[0])
        return k, int(col[k])

    def recurse(k, rot, w, z, path):
        ax, sign = axis_of(rot)
        w = list(w)
        z = list(z)
        w[ax] += fr[k]
        z[ax] += sign * fr[k]
        if k == n_pulses:
            if closed and not np.array_equal(rot, np.eye(3, dtype=int)):
                return
            if zeeman and any(v != 0 for v in z):
                return
            if (w[1] - w[0]) / total == ty and (w[2] - w[0]) / total == tz:
                hits.append(tuple(path))
            return
        for p, f in enumerate(frames):
            recurse(k + 1, rot @ f, w, z, path + [p])

    zero = Fraction(0)
    recurse(0, np.eye(3, dtype=int), [zero] * 3, [zero] * 3, [])
    return sorted(hits)


def slot_delays(delta, tau, direction: str, slots=P8_SLOTS) -> list:
    d1, d2 = base_delays(delta, tau, direction)
    return [n1 * d1 + n2 * d2 for n1, n2 in slots]


def base_delays(delta, tau, direction: str):
    """(D1, D2) for the forward or backward cycle."""
    if direction == "F":
        return tau * (1 - delta), tau * (1 + 2 * delta)
    if direction == "B":
        return tau * (1 + delta), tau * (1 - 2 * delta)
    raise SequenceError(f"direction must be 'F' or 'B', got {direction!r}")


@lru_cache(maxsize=None)
def registry_patterns(direction: str) -> tuple[tuple[int, ...], ...]:
    """Every valid 8P phase pattern for a direction (reference delta)."""
    sign = 1 if direction == "F" else -1
    delays = slot_delays(_REFERENCE_DELTA, Fraction(1), direction)
    return tuple(search_phase_patterns(delays, (sign * _REFERENCE_DELTA, 0)))


def default_pattern(direction: str) -> tuple[int, ...]:
    pats = registry_patterns(direction)
    if not pats:
        raise SequenceError("no phase pattern satisfies the target")
    return pats[0]


# ----------------------------------------------------------------------------
# construction


def _check_delta(kind: str, delta: float, direction: str) -> None:
    if direction == "F":
        if not 0 <= delta < 1:
            raise SequenceError("forward scaling must satisfy 0 <= delta < 1")
    elif direction == "B":
        if delta < 0:
            raise SequenceError("backward scaling must be >= 0")
        if delta > 0.5:
            raise SequenceError("backward scaling exceeds 1/2")
    else:
        raise SequenceError(f"direction must be 'F' or 'B' for {kind}")


def build_sequence(kind: str, delta: float = 0.0, tau: float = 10e-6, direction: str = "F",
                   error_model: Optional[ErrorModel] = None, phases: Optional[Sequence[int]] = None,
                   min_separation: float = DEFAULT_MIN_SEPARATION,
                   p16_construction: str = "mirror") -> PulseSequence:
    """Construct and verify a sequence.

    Parameters
    ----------
    kind : {"P8", "P16", "magic_echo", "free"}
    delta : float
        Scaling factor. Forward cycles accept ``0 <= delta < 1``, backward
        cycles ``0 <= delta <= 1/2``. Ignored for ``magic_echo`` (-1/2) and
        ``free`` (1).
    tau : float
        Base delay in seconds. ``P8`` lasts ``12 tau``, ``P16`` ``24 tau``,
        ``free`` ``2 tau`` and ``magic_echo`` ``tau``.
    direction : {"F", "B"}
    error_model : ErrorModel, optional
        Applied after the ideal cycle has been verified.
    phases : sequence of int, optional
        Explicit 8P phase indices; defaults to the registry pattern.
    p16_construction : {"mirror", "repeat"}
        ``mirror`` appends the pi-shifted cycle in reverse order (odd Magnus
        orders vanish); ``repeat`` appends it in the same order.
    """
    if tau <= 0:
        raise SequenceError("tau must be positive")
    if kind in ("P8", "P16"):
        _check_delta(kind, delta, direction)
        pattern = tuple(phases) if phases is not None else default_pattern(direction)
        if len(pattern) != 8:
            raise SequenceError("8P patterns need eight phases")
        delays = slot_delays(delta, tau, direction)
        if min(delays) < 0:
            raise SequenceError("negative delay")
        elements: list[Element] = [Delay(delays[0])]
        for p, d in zip(pattern, delays[1:]):
            elements += [Pulse(PHASES[p]), Delay(d)]
        if kind == "P16":
            elements = elements + _second_half(elements, p16_construction)
        sign = 1.0 if direction == "F" else -1.0
        seq = PulseSequence(tuple(elements), sign * float(delta), direction, float(tau), kind,
                            pattern, IDEAL, min_separation)
    elif kind == "magic_echo":
        seq = PulseSequence((ScaledBlock(float(tau), -0.5, "y"),), -0.5, "none", float(tau),
                            kind, (), IDEAL, min_separation)
    elif kind == "free":
        elements = [Pulse("x"), Delay(tau), Pulse("x", math.pi), Delay(tau), Pulse("x")]
        seq = PulseSequence(tuple(elements), 1.0, "none", float(tau), kind, (), IDEAL,
                            min_separation)
    else:
        raise SequenceError(f"unknown sequence kind {kind!r}")
    verify_sequence(seq)
    if error_model is not None and not error_model.is_ideal:
        seq = apply_errors(seq, error_model)
    check_separation(seq)
    return seq


def _second_half(first: list, construction: str) -> list:
    if construction == "mirror":
        return [e.shifted() if isinstance(e, Pulse) else e for e in reversed(first)]
    if construction == "repeat":
        return [e.shifted() if isinstance(e, Pulse) else e for e in first]
    raise SequenceError(f"unknown 16P construction {construction!r}")


def verify_sequence(seq: PulseSequence, atol: float = 1e-12) -> AverageHamiltonian:
    """Check the zeroth-order average against the sequence's declared target."""
    avg = symbolic_average(seq)
    ty, tz = seq.target
    if not avg.closed:
        raise SequenceError("net pulse rotation is not the identity")
    if abs(avg.c_y - ty) > atol or abs(avg.c_z - tz) > atol:
        raise SequenceError(
            f"no phase pattern satisfies the target: got ({avg.c_y:.3g}, {avg.c_z:.3g})"
        )
    if np.abs(avg.zeeman).max() > atol:
        raise SequenceError("Zeeman term is not refocused")
    return avg


def check_separation(seq: PulseSequence) -> None:
    """Edge-to-edge pulse gaps must reach ``min_separation``.

    Gaps wrap around the cycle boundary, except for the free-evolution block
    whose closing and opening pi/2 pulses merge into a single pi pulse.
    """
    pulses = [i for i, e in enumerate(seq.elements) if isinstance(e, Pulse) and e.phase != "z"]
    if len(pulses) < 2:
        return
    n = len(seq.elements)
    wrap = [] if seq.kind == "free" else [pulses[0] + n]
    for a, b in zip(pulses, pulses[1:] + wrap):
        gap = sum(seq.elements[k % n].duration for k in range(a + 1, b)
                  if isinstance(seq.elements[k % n], Delay))
        if gap < seq.min_separation * (1 - 1e-9):
            raise SequenceError(
                f"minimum pulse separation violated: gap {gap:.3g} s < {seq.min_separation:.3g} s"
            )


def apply_errors(seq: PulseSequence, model: ErrorModel) -> PulseSequence:
    """Perturb every pulse of ``seq`` identically.

    Finite widths are centred on the ideal pulse instants: each pulse takes
    half its length from the neighbouring delays, keeping the cycle time.
    """
    if model.is_ideal:
        return seq
    elems = list(seq.elements)
    out: list = []
    for e in elems:
        if isinstance(e, Pulse) and e.phase != "z":
            width = model.pulse_width * abs(e.flip_angle) / HALF_PI
            out.append(replace(e, flip_angle=e.flip_angle * (1 + model.flip_error),
                               duration=width, phase_error=e.phase_error + model.phase_error))
        else:
            out.append(e)
    # shave half widths off neighbouring delays
    shave = [0.0] * len(out)
    for i, e in enumerate(out):
        if isinstance(e, Pulse) and e.duration > 0:
            for j in (i - 1, i + 1):
                if 0 <= j < len(out) and isinstance(out[j], Delay):
                    shave[j] += e.duration / 2
    for j, s in enumerate(shave):
        if s:
            remaining = out[j].duration - s
            if remaining < -1e-15:
                raise SequenceError("negative delay: pulse width exceeds the available delay")
            out[j] = Delay(max(remaining, 0.0))
    return replace(seq, elements=tuple(out), error_model=model)


def magic_echo_microscopic(duration: float, rf_amplitude: float) -> PulseSequence:
    """Spin-lock model of the magic echo.

    A strong on-resonance drive along x for ``duration`` (rounded up to whole
    2 pi nutations) averages ``H_d^z`` to ``-H_d^x / 2``; a virtual z
    rotation sandwich maps the x axis onto y.
    """
    turns = max(1, math.ceil(rf_amplitude * duration / (2 * math.pi)))
    drive = Pulse("x", 2 * math.pi * turns, duration)
    elements = (Pulse("z", HALF_PI), drive, Pulse("z", -HALF_PI))
    return PulseSequence(elements, -0.5, "none", duration, "magic_echo_spinlock")


# ----------------------------------------------------------------------------
# numerics


def _pulse_unitary(p: Pulse, n_spins: int, h_int: Optional[np.ndarray]) -> np.ndarray:
    if p.duration == 0:
        return rotation_operator(n_spins, p.axis_vector, p.flip_angle)
    n = p.axis_vector
    drive = sum(c * collective_operator(n_spins, a) for c, a in zip(n, AXES) if c != 0)
    return la.expm(-1j * (h_int + p.rf_amplitude * drive) * p.duration)


def cycle_propagator(seq: PulseSequence, system: SpinSystem) -> np.ndarray:
    """Exact one-cycle unitary (latest element on the left)."""
    sys_ = _effective_system(seq, system)
    h_int = internal_hamiltonian(sys_)
    prop = propagator(h_int)
    dip = None
    cache: dict = {}
    u = np.eye(sys_.dim, dtype=complex)
    for e in seq.elements:
        if isinstance(e, Delay):
            if e.duration == 0:
                continue
            step = prop.unitary(e.duration)
        elif isinstance(e, Pulse):
            key = (e.phase, e.flip_angle, e.duration, e.phase_error)
            if key not in cache:
                cache[key] = _pulse_unitary(e, sys_.n_spins, h_int)
            step = cache[key]
        else:
            if dip is None:
                dip = dipolar_all_axes(sys_)
            step = propagator(e.coefficient * dip[e.axis]).unitary(e.duration)
        u = step @ u
    return u


def _effective_system(seq: PulseSequence, system: SpinSystem) -> SpinSystem:
    if seq.error_model.zeeman_offsets is not None:
        return system.with_offsets(seq.error_model.zeeman_offsets)
    return system


def toggled_intervals(seq: PulseSequence, system: SpinSystem):
    """Yield ``(duration, toggled Hamiltonian)`` for every evolution interval."""
    sys_ = _effective_system(seq, system)
    h_int = internal_hamiltonian(sys_)
    dip = None
    frame = np.eye(sys_.dim, dtype=complex)
    out = []
    for e in seq.elements:
        if isinstance(e, Pulse):
            if e.duration != 0:
                raise ValueError(
                    "finite-width pulses: use cycle_propagator comparison instead"
                )
            frame = rotation_operator(sys_.n_spins, e.axis_vector, e.flip_angle) @ frame
        elif e.duration > 0:
            if isinstance(e, Delay):
                h = h_int
            else:
                if dip is None:
                    dip = dipolar_all_axes(sys_)
                h = e.coefficient * dip[e.axis]
            out.append((e.duration, frame.conj().T @ h @ frame))
    return out


def numeric_average_hamiltonian(seq: PulseSequence, system: SpinSystem, order: int = 0):
    """Zeroth- or first-order Magnus term from the piecewise toggling frame.

    ``H^0 = (1/t_c) sum_k D_k H_k`` and
    ``H^1 = (-i / 2 t_c) sum_{k<l} D_k D_l [H_l, H_k]``.
    """
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    parts = toggled_intervals(seq, system)
    t_c = seq.cycle_time
    if order == 0:
        return sum(d * h for d, h in parts) / t_c
    acc = np.zeros_like(parts[0][1])
    h1 = np.zeros_like(acc)
    for d, h in parts:
        h1 += d * commutator(h, acc)
        acc = acc + d * h
    return (-0.5j / t_c) * h1


def project_average(h0: np.ndarray, system: SpinSystem) -> tuple[float, float]:
    """Least-squares (c_y, c_z) of ``h0`` on span{H_d^y, H_d^z}."""
    dip = dipolar_all_axes(system)
    basis = np.stack([dip["y"].ravel(), dip["z"].ravel()], axis=1)
    coef, *_ = np.linalg.lstsq(basis, h0.ravel(), rcond=None)
    return float(coef[0].real), float(coef[1].real)


def reversed_sequence(seq: PulseSequence) -> PulseSequence:
    """The cycle run backwards in time (pulses inverted, order reversed)."""
    elems = []
    for e in reversed(seq.elements):
        if isinstance(e, Pulse):
            elems.append(replace(e, flip_angle=-e.flip_angle))
        else:
            elems.append(e)
    return replace(seq, elements=tuple(elems))


# ----------------------------------------------------------------------------
# registry


REGISTRY_VERSION = 1


@dataclass(frozen=True)
class RegistryRecord:
    kind: str
    direction: str
    delta: float
    tau: float
    phases: tuple
    delays: tuple
    verification: dict = field(default_factory=dict)
    version: int = REGISTRY_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phases"] = [PHASES[p] for p in self.phases]
        d["delays"] = list(self.delays)
        return d


def registry_record(seq: PulseSequence, system: Optional[SpinSystem] = None) -> RegistryRecord:
    """Describe a sequence plus hashes of its verification artefacts."""
    import hashlib

    avg = symbolic_average(seq)
    ver = {
        "c_y": avg.c_y,
        "c_z": avg.c_z,
        "zeeman_max": float(np.abs(avg.zeeman).max()),
        "n_valid_patterns": len(registry_patterns(seq.direction)) if seq.kind in ("P8", "P16") else 1,
        "tool_version": __version__,
    }
    blob = json.dumps(seq.describe(), sort_keys=True).encode()
    ver["sequence_sha256"] = hashlib.sha256(blob).hexdigest()
    if system is not None:
        h0 = numeric_average_hamiltonian(seq, system, 0)
        ver["numeric_c"] = project_average(h0, system)
    return RegistryRecord(seq.kind, seq.direction, seq.delta, seq.tau, seq.phases,
                          tuple(seq.delays), ver)


class SequenceRegistry:
    """Append-only JSON registry with atomic publication."""

    def __init__(self, path):
        self.path = os.fspath(path)
        self._lock = threading.Lock()

    def records(self) -> list[dict]:
        if not os.path.exists(self.path):
            return []
        with open(self.path) as fh:
            data = json.load(fh)
        return data.get("records", [])

    def publish(self, record: RegistryRecord) -> None:
        with self._lock:
            records = self.records() + [record.to_dict()]
            payload = {"version": REGISTRY_VERSION, "records": records}
            d = os.path.dirname(os.path.abspath(self.path))
            fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
            with os.fdopen(fd, "w") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
            os.replace(tmp, self.path)

    def lookup(self, kind: str, direction: str) -> list[dict]:
        return [r for r in self.records() if r["kind"] == kind and r["direction"] == direction]


def all_patterns_table() -> list[dict]:
    """Every synthesised 8P pattern for both directions."""
    rows = []
    for direction in ("F", "B"):
        for i, pat in enumerate(registry_patterns(direction)):
            rows.append({"direction": direction, "index": i, "default": i == 0,
                         "phases": [PHASES[p] for p in pat]})
    return rows
