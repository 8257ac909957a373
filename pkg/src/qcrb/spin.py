"""Collective spin algebra on fixed-j sectors.

Every sector is labelled by ``twice_j = 2j`` so half-integer spins stay exact.
Basis vectors are ordered by ascending magnetic number, index ``i`` holding
``m = i - j``.  All matrices returned here follow that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

AXES = ("x", "y", "z")

# residue allowed on the imaginary part of exp(-i beta J_y) before we call it a fault
WIGNER_IMAG_TOL = 1e-10


@dataclass(frozen=True, order=True)
class Sector:
    twice_j: int

    def __post_init__(self):
        if int(self.twice_j) != self.twice_j or self.twice_j < 0:
            raise ValueError(f"twice_j must be a non-negative integer, got {self.twice_j!r}")
        object.__setattr__(self, "twice_j", int(self.twice_j))

    @property
    def dim(self) -> int:
        return self.twice_j + 1

    @property
    def j(self) -> float:
        return self.twice_j / 2

    @property
    def twice_m(self) -> np.ndarray:
        return 2 * np.arange(self.dim) - self.twice_j

    @property
    def m(self) -> np.ndarray:
        return self.twice_m / 2

    def index(self, m: float) -> int:
        """Basis index of magnetic number ``m``."""
        twice_m = round(2 * m)
        if abs(twice_m) > self.twice_j or (twice_m - self.twice_j) % 2:
            raise ValueError(f"m={m} is not in sector j={self.j}")
        return (twice_m + self.twice_j) // 2


def make_sector(twice_j: int) -> Sector:
    return Sector(twice_j)


def _as_sector(sector) -> Sector:
    return sector if isinstance(sector, Sector) else Sector(sector)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@lru_cache(maxsize=None)
def _raising(twice_j: int) -> np.ndarray:
    j = twice_j / 2
    m = np.arange(twice_j) - j
    jp = np.zeros((twice_j + 1, twice_j + 1))
    # <j, m+1| J_+ |j, m>
    jp[np.arange(1, twice_j + 1), np.arange(twice_j)] = np.sqrt(j * (j + 1) - m * (m + 1))
    return _frozen(jp)


@lru_cache(maxsize=None)
def _angular_momentum(twice_j: int, axis: str) -> np.ndarray:
    if axis == "z":
        return _frozen(np.diag(Sector(twice_j).m).astype(complex))
    jp = _raising(twice_j)
    if axis == "x":
        return _frozen((0.5 * (jp + jp.T)).astype(complex))
    if axis == "y":
        return _frozen(-0.5j * (jp - jp.T))
    raise ValueError(f"axis must be one of {AXES}, got {axis!r}")


def angular_momentum(sector, axis: str) -> np.ndarray:
    """Matrix of J_axis on ``sector`` (read-only, complex)."""
    return _angular_momentum(_as_sector(sector).twice_j, axis)


def raising(sector) -> np.ndarray:
    return _raising(_as_sector(sector).twice_j)


def lowering(sector) -> np.ndarray:
    return _raising(_as_sector(sector).twice_j).T


@lru_cache(maxsize=None)
def _eigh_axis(twice_j: int, axis: str):
    if axis == "z":
        m = Sector(twice_j).m
        return _frozen(m.copy()), _frozen(np.eye(twice_j + 1, dtype=complex))
    w, v = np.linalg.eigh(_angular_momentum(twice_j, axis))
    return _frozen(w), _frozen(v)


def _expm_from_eigh(w: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
    return (v * np.exp(-1j * t * w)) @ v.conj().T


def rotation(sector, axis: str, angle: float) -> np.ndarray:
    """exp(-i angle J_axis) on ``sector``."""
    if not np.isfinite(angle):
        raise ValueError("rotation angle must be finite")
    sector = _as_sector(sector)
    if axis == "z":
        return np.diag(np.exp(-1j * angle * sector.m))
    w, v = _eigh_axis(sector.twice_j, axis)
    return _expm_from_eigh(w, v, angle)


def expm_hermitian(generator: np.ndarray, t: float) -> np.ndarray:
    """exp(-i t H) for Hermitian ``H`` via its eigendecomposition."""
    w, v = np.linalg.eigh(generator)
    return _expm_from_eigh(w, v, t)


def evolve(vector: np.ndarray, generator: np.ndarray, t: float) -> np.ndarray:
    """Apply exp(-i t H) to a state vector living in the same sector as ``H``."""
    vector = np.asarray(vector, dtype=complex)
    generator = np.asarray(generator)
    if generator.shape != (vector.shape[0], vector.shape[0]):
        raise ValueError(
            f"sector mismatch: generator {generator.shape} vs state of length {vector.shape[0]}"
        )
    if t == 0:
        return vector.copy()
    return expm_hermitian(generator, t) @ vector


@lru_cache(maxsize=256)
def _wigner_small_d(twice_j: int, beta: float) -> np.ndarray:
    d = rotation(twice_j, "y", beta)
    residue = np.abs(d.imag).max()
    if residue > WIGNER_IMAG_TOL:
        raise FloatingPointError(
            f"exp(-i beta J_y) has imaginary residue {residue:.3e} (j={twice_j / 2}, beta={beta})"
        )
    return _frozen(np.ascontiguousarray(d.real))


def wigner_small_d(sector, beta: float) -> np.ndarray:
    """Real matrix d[nu, mu] = <j, nu| exp(-i beta J_y) |j, mu> in ascending-m order."""
    return _wigner_small_d(_as_sector(sector).twice_j, float(beta))


def beam_splitter(sector) -> np.ndarray:
    """Balanced beam splitter exp(-i pi J_y / 2), returned as a real matrix."""
    return wigner_small_d(sector, np.pi / 2)
