"""Dipolar, Zeeman and double-quantum generators on a :class:`SpinSystem`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .spin_core import AXES, SpinSystem, single_spin_operator


def _bilinear_sums(system: SpinSystem) -> dict[str, sp.csr_matrix]:
    """``S_aa = sum_{i<j} d_ij I_i^a I_j^a`` for a in x, y, z."""
    n = system.n_spins
    d = system.couplings
    ops = {a: [single_spin_operator(n, i, a) for i in range(n)] for a in AXES}
    dim = system.dim
    sums = {a: sp.csr_matrix((dim, dim), dtype=complex) for a in AXES}
    for i in range(n):
        for j in range(i + 1, n):
            if d[i, j] == 0.0:
                continue
            for a in AXES:
                sums[a] = sums[a] + d[i, j] * (ops[a][i] @ ops[a][j])
    return sums


def dipolar_secular(system: SpinSystem, axis: str = "z") -> np.ndarray:
    """``sum_{i<j} d_ij (3 I_i^a I_j^a - I_i . I_j)`` for ``a = axis``."""
    if system.couplings is None:
        raise ValueError("missing couplings")
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    s = _bilinear_sums(system)
    h = 3.0 * s[axis] - (s["x"] + s["y"] + s["z"])
    return h.toarray()


def dipolar_all_axes(system: SpinSystem) -> dict[str, np.ndarray]:
    s = _bilinear_sums(system)
    dot = s["x"] + s["y"] + s["z"]
    return {a: (3.0 * s[a] - dot).toarray() for a in AXES}


def zeeman(system: SpinSystem) -> np.ndarray:
    """``-sum_i omega_i I_i^z`` (diagonal)."""
    idx = np.arange(system.dim)
    diag = np.zeros(system.dim)
    for i, w in enumerate(system.zeeman_offsets):
        if w != 0.0:
            diag -= w * (0.5 - ((idx >> i) & 1))
    return np.diag(diag).astype(complex)


def double_quantum(system: SpinSystem) -> np.ndarray:
    """``sum_{i<j} d_ij (I_i^x I_j^x - I_i^y I_j^y)``.

    Connects Zeeman states whose magnetisation differs by 2.
    """
    s = _bilinear_sums(system)
    return (s["x"] - s["y"]).toarray()


def internal_hamiltonian(system: SpinSystem) -> np.ndarray:
    """Rotating-frame Hamiltonian: Zeeman offsets plus secular dipolar along z."""
    return zeeman(system) + dipolar_secular(system, "z")


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


KINDS = ("dipolar_secular", "zeeman", "double_quantum", "composite")


@dataclass(frozen=True)
class HamiltonianSpec:
    """Serializable recipe for a generator.

    ``composite`` sums its ``terms``, each already carrying its own scale.
    """

    kind: str
    axis: str = "z"
    scale: float = 1.0
    terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown Hamiltonian kind {self.kind!r}")
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")

    def build(self, system: SpinSystem) -> np.ndarray:
        if self.kind == "dipolar_secular":
            h = dipolar_secular(system, self.axis)
        elif self.kind == "zeeman":
            h = zeeman(system)
        elif self.kind == "double_quantum":
            h = double_quantum(system)
        else:
            h = np.zeros((system.dim, system.dim), dtype=complex)
            for term in self.terms:
                h = h + term.build(system)
        return self.scale * h

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "axis": self.axis, "scale": self.scale}
        if self.terms:
            out["terms"] = [t.to_dict() for t in self.terms]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "HamiltonianSpec":
        terms = tuple(cls.from_dict(t) for t in data.get("terms", ()))
        return cls(data["kind"], data.get("axis", "z"), float(data.get("scale", 1.0)), terms)


def scaled_dipolar(delta: float, axis: str = "y") -> HamiltonianSpec:
    return HamiltonianSpec("dipolar_secular", axis, delta)
