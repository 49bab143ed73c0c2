"""Hilbert-space bookkeeping for N spin-1/2 particles.

Basis states are N-bit integers, spin ``i`` lives on bit ``i`` and a cleared
bit is spin-up (m = +1/2). Only the traceless deviation of the
high-temperature density matrix is ever represented, so every correlator is
normalised by ``Tr[(I^z)^2] = N 2^N / 4``.

Units: hbar = 1, times in seconds, couplings and offsets in rad/s.
"""

from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

MAX_SPINS = 14
AXES = ("x", "y", "z")


class CapacityError(ValueError):
    """Raised when a dense 2^N representation would exceed ``MAX_SPINS``."""


class GeometryError(ValueError):
    pass


def check_capacity(n_spins: int) -> None:
    if n_spins < 1:
        raise ValueError("n_spins must be >= 1")
    if n_spins > MAX_SPINS:
        raise CapacityError(
            f"capacity exceeded: N={n_spins} > {MAX_SPINS} (dense 2^N matrices)"
        )


# ----------------------------------------------------------------------------
# basis encoding


def encode_basis(spins_down: Sequence[int]) -> int:
    """Map a configuration (1 = spin down per site) to a basis index."""
    index = 0
    for i, bit in enumerate(spins_down):
        if bit not in (0, 1):
            raise ValueError("configuration entries must be 0 or 1")
        index |= bit << i
    return index


def decode_basis(index: int, n_spins: int) -> tuple[int, ...]:
    if not 0 <= index < 2**n_spins:
        raise ValueError("basis index out of range")
    return tuple((index >> i) & 1 for i in range(n_spins))


def magnetization_diagonal(n_spins: int) -> np.ndarray:
    """Total m_z of every computational basis state."""
    idx = np.arange(2**n_spins)
    down = np.zeros_like(idx)
    for i in range(n_spins):
        down += (idx >> i) & 1
    return 0.5 * n_spins - down


# ----------------------------------------------------------------------------
# systems and geometry


@dataclass(frozen=True, eq=False)
class SpinSystem:
    """A cluster of dipolar-coupled spins.

    Parameters
    ----------
    n_spins : int
        Number of spins N.
    couplings : (N, N) array
        Symmetric coupling matrix d_ij in rad/s with zero diagonal.
    zeeman_offsets : (N,) array, optional
        Resonance offsets omega_i in rad/s.
    positions : (N, 3) array, optional
        Lattice positions the couplings were derived from.
    """

    n_spins: int
    couplings: np.ndarray
    zeeman_offsets: np.ndarray = None
    positions: Optional[np.ndarray] = None
    label: str = ""

    def __post_init__(self):
        check_capacity(self.n_spins)
        n = self.n_spins
        d = np.array(self.couplings, dtype=float)
        if d.shape != (n, n):
            raise ValueError(f"couplings must be {n}x{n}, got {d.shape}")
        if not np.allclose(d, d.T, atol=1e-12 * max(1.0, np.abs(d).max())):
            raise ValueError("couplings must be symmetric")
        if np.any(np.diag(d) != 0):
            raise ValueError("couplings must have a zero diagonal")
        d.setflags(write=False)
        object.__setattr__(self, "couplings", d)
        if self.zeeman_offsets is None:
            w = np.zeros(n)
        else:
            w = np.array(self.zeeman_offsets, dtype=float)
            if w.shape != (n,):
                raise ValueError(f"zeeman_offsets must have length {n}")
        w.setflags(write=False)
        object.__setattr__(self, "zeeman_offsets", w)
        if self.positions is not None:
            p = np.array(self.positions, dtype=float)
            p.setflags(write=False)
            object.__setattr__(self, "positions", p)

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    def with_offsets(self, offsets) -> "SpinSystem":
        return SpinSystem(
            self.n_spins, self.couplings, offsets, self.positions, self.label
        )

    def local_coupling_rms(self) -> float:
        """sqrt of the site-averaged sum of squared couplings, in rad/s.

        Used as the reference coupling scale ``d_bar`` of a cluster.
        """
        return float(np.sqrt(np.mean(np.sum(self.couplings**2, axis=1))))


def couplings_from_geometry(positions, scale: float, rule: str = "dipolar_angular"):
    """Pairwise couplings from positions.

    ``isotropic_r3`` gives ``scale / r^3``; ``dipolar_angular`` gives
    ``scale (1 - 3 cos^2 theta) / r^3`` with theta the angle between the
    pair vector and the field (z) axis.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError("positions must be an (N, 3) array")
    diff = pos[:, None, :] - pos[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    n = len(pos)
    off = ~np.eye(n, dtype=bool)
    if np.any(r[off] <= 1e-12):
        raise GeometryError("degenerate geometry: coincident positions")
    rr = np.where(off, r, 1.0)
    if rule == "isotropic_r3":
        d = scale / rr**3
    elif rule == "dipolar_angular":
        cos = diff[..., 2] / rr
        d = scale * (1.0 - 3.0 * cos**2) / rr**3
    else:
        raise ValueError(f"unknown geometry rule {rule!r}")
    d[~off] = 0.0
    return d


def pair_positions(distance: float = 1.0, axis=(0.0, 0.0, 1.0)):
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    return np.array([np.zeros(3), distance * a])


def chain_positions(n: int, spacing: float = 1.0, axis=(1.0, 0.0, 0.0)):
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    return spacing * np.arange(n)[:, None] * a[None, :]


def cubic_positions(shape=(2, 2, 2), spacing: float = 1.0):
    """Sites of an ``nx x ny x nz`` simple-cubic block."""
    grid = np.indices(shape).reshape(3, -1).T
    return spacing * grid.astype(float)


def random_positions(n: int, seed: int = 0, box: float = None, min_distance: float = 0.8):
    """Uniform random sites in a cube of volume ~n with a hard-core radius."""
    rng = np.random.default_rng(seed)
    box = float(box) if box is not None else float(n) ** (1.0 / 3.0) * 1.2
    pts: list[np.ndarray] = []
    attempts = 0
    while len(pts) < n:
        attempts += 1
        if attempts > 100000:
            raise GeometryError("could not place spins; enlarge the box")
        p = rng.uniform(0.0, box, size=3)
        if all(np.linalg.norm(p - q) >= min_distance for q in pts):
            pts.append(p)
    return np.array(pts)


def make_system(geometry: str, n_spins: int, scale: float, rule: str = "dipolar_angular",
                seed: int = 0, offsets=None) -> SpinSystem:
    """Build a :class:`SpinSystem` from a named geometry."""
    if geometry == "pair":
        if n_spins != 2:
            raise ValueError("pair geometry needs n_spins=2")
        pos = pair_positions()
    elif geometry == "chain":
        pos = chain_positions(n_spins)
    elif geometry == "cubic":
        shape = _cubic_shape(n_spins)
        pos = cubic_positions(shape)
    elif geometry == "random":
        pos = random_positions(n_spins, seed=seed)
    else:
        raise ValueError(f"unknown geometry {geometry!r}")
    check_capacity(len(pos))
    d = couplings_from_geometry(pos, scale, rule)
    return SpinSystem(len(pos), d, offsets, pos, label=f"{geometry}-{n_spins}")


def _cubic_shape(n: int) -> tuple[int, int, int]:
    for shape in [(2, 2, 2), (2, 2, 1), (2, 2, 3), (3, 2, 2), (2, 1, 1), (3, 3, 1)]:
        if int(np.prod(shape)) == n:
            return shape
    raise ValueError(f"no cubic block with {n} sites")


# ----------------------------------------------------------------------------
# operators


def single_spin_operator(n_spins: int, site: int, axis: str) -> sp.csr_matrix:
    """Sparse I_site^axis in the 2^N computational basis."""
    check_capacity(n_spins)
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    if not 0 <= site < n_spins:
        raise IndexError("site out of range")
    dim = 2**n_spins
    idx = np.arange(dim)
    bit = (idx >> site) & 1
    if axis == "z":
        return sp.csr_matrix((0.5 - bit, (idx, idx)), shape=(dim, dim), dtype=complex)
    flipped = idx ^ (1 << site)
    if axis == "x":
        vals = np.full(dim, 0.5, dtype=complex)
    else:
        # I^y|up> = (i/2)|down>, I^y|down> = (-i/2)|up>
        vals = np.where(bit == 0, 0.5j, -0.5j)
    return sp.csr_matrix((vals, (flipped, idx)), shape=(dim, dim))


def collective_operator(system_or_n, axis: str) -> np.ndarray:
    """Dense collective spin ``I^axis = sum_i I_i^axis``."""
    n = system_or_n.n_spins if isinstance(system_or_n, SpinSystem) else int(system_or_n)
    check_capacity(n)
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    if axis == "z":
        return np.diag(magnetization_diagonal(n)).astype(complex)
    total = single_spin_operator(n, 0, axis)
    for i in range(1, n):
        total = total + single_spin_operator(n, i, axis)
    return total.toarray()


def is_hermitian(a: np.ndarray, rtol: float = 1e-12) -> bool:
    scale = max(np.abs(a).max(), 1e-300)
    return bool(np.abs(a - a.conj().T).max() <= rtol * scale)


def norm_factor(n_spins: int) -> float:
    """``Tr[(I^z)^2]``."""
    return n_spins * 2**n_spins / 4.0


def correlator(a: np.ndarray, b: np.ndarray, n_spins: Optional[int] = None) -> float:
    """Normalised trace correlator ``Tr[A B] / Tr[(I^z)^2]`` (real part)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if n_spins is None:
        n_spins = int(round(np.log2(a.shape[0])))
        if 2**n_spins != a.shape[0]:
            raise ValueError("operator dimension is not a power of two")
    # Tr[AB] = sum_ij A_ij B_ji
    value = np.einsum("ij,ji->", a, b)
    return float(value.real) / norm_factor(n_spins)


def rotation_operator(n_spins: int, axis, angle: float) -> np.ndarray:
    """Global rotation ``exp(-i angle n.I)`` as a dense matrix.

    ``axis`` is a label in {x, y, z} or a 3-vector.
    """
    check_capacity(n_spins)
    single = single_spin_rotation(axis, angle)
    out = np.ones((1, 1), dtype=complex)
    for _ in range(n_spins):
        out = np.kron(out, single)
    return out


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def single_spin_rotation(axis, angle: float) -> np.ndarray:
    if isinstance(axis, str):
        n = np.array([1.0 if a == axis else 0.0 for a in AXES])
        if not n.any():
            raise ValueError(f"unknown axis {axis!r}")
    else:
        n = np.asarray(axis, dtype=float)
        n = n / np.linalg.norm(n)
    gen = 0.5 * sum(c * _PAULI[a] for c, a in zip(n, AXES))
    # exp(-i angle n.sigma/2)
    return np.cos(angle / 2) * np.eye(2) - 2j * np.sin(angle / 2) * gen


# ----------------------------------------------------------------------------
# propagation


@dataclass(frozen=True, eq=False)
class Propagator:
    """Cached eigendecomposition of a Hermitian generator.

    ``U(t) = exp(-i H t)`` is assembled from the stored eigenpairs, so a single
    decomposition serves every time of a sweep.
    """

    hamiltonian: np.ndarray
    eigenvalues: np.ndarray = field(init=False)
    eigenvectors: np.ndarray = field(init=False)

    def __post_init__(self):
        h = np.asarray(self.hamiltonian)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("Hamiltonian must be square")
        if not is_hermitian(h):
            raise ValueError("Hamiltonian is not Hermitian")
        h = 0.5 * (h + h.conj().T)
        if np.iscomplexobj(h) and not np.any(h.imag):
            h = h.real  # real symmetric solver is several times faster
        w, v = np.linalg.eigh(h)
        object.__setattr__(self, "eigenvalues", w)
        object.__setattr__(self, "eigenvectors", v)

    @property
    def cached(self) -> bool:
        return True

    def unitary(self, t: float) -> np.ndarray:
        v = self.eigenvectors
        return (v * np.exp(-1j * self.eigenvalues * t)) @ v.conj().T

    def heisenberg(self, a: np.ndarray, t: float) -> np.ndarray:
        """``exp(iHt) A exp(-iHt)``."""
        v = self.eigenvectors
        a_eig = v.conj().T @ a @ v
        phase = np.exp(1j * t * (self.eigenvalues[:, None] - self.eigenvalues[None, :]))
        return v @ (a_eig * phase) @ v.conj().T


class _PropagatorCache:
    """Small LRU of propagators keyed by matrix content; thread safe."""

    def __init__(self, maxsize: int = 8):
        self.maxsize = maxsize
        self._data: OrderedDict[str, Propagator] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, h: np.ndarray) -> Propagator:
        h = np.ascontiguousarray(h)
        key = hashlib.sha1(h.view(np.uint8)).hexdigest() + str(h.shape) + str(h.dtype)
        with self._lock:
            hit = self._data.get(key)
            if hit is not None:
                self._data.move_to_end(key)
                return hit
        prop = Propagator(h)
        with self._lock:
            self._data[key] = prop
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)
        return prop


_CACHE = _PropagatorCache()


def propagator(h: np.ndarray) -> Propagator:
    return _CACHE.get(h)


def evolve(h: np.ndarray, t: float, a: np.ndarray) -> np.ndarray:
    """Heisenberg-evolved operator ``exp(iHt) A exp(-iHt)``."""
    return propagator(h).heisenberg(a, t)


def expm_unitary(h: np.ndarray, t: float) -> np.ndarray:
    """One-shot ``exp(-iHt)`` through scipy's Pade approximant."""
    return la.expm(-1j * t * np.asarray(h))


def unitary_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Spectral-norm distance between unitaries with the global phase removed."""
    overlap = np.trace(v.conj().T @ u)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return float(np.linalg.norm(u - phase * v, 2))


def unitarity_error(u: np.ndarray) -> float:
    return float(np.abs(u @ u.conj().T - np.eye(u.shape[0])).max())


class FloquetPropagator:
    """Powers of a one-cycle unitary via its (unitary) Schur form."""

    def __init__(self, cycle_unitary: np.ndarray):
        t, q = la.schur(np.asarray(cycle_unitary, dtype=complex), output="complex")
        self.phases = np.diag(t).copy()
        self.vectors = q

    def power(self, k: int) -> np.ndarray:
        q = self.vectors
        return (q * self.phases**k) @ q.conj().T
