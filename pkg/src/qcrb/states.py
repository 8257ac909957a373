"""Probe states over one or several particle-number sectors.

A pure state is stored as a block of Dicke amplitudes per sector; a phase
averaged state is a weighted list of single-sector pure states.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy import optimize

from .spin import Sector, angular_momentum, beam_splitter, evolve, rotation

NORM_TOL = 1e-10


def _check_norm(total: float, what: str):
    if abs(total - 1.0) > NORM_TOL:
        raise ValueError(f"{what} is not normalized (total={total!r})")


@dataclass(frozen=True)
class SectoredState:
    """Pure two-mode state, ``blocks`` holding (twice_j, amplitudes) in ascending twice_j."""

    blocks: tuple

    def __post_init__(self):
        cleaned = []
        seen = set()
        for twice_j, amps in self.blocks:
            sector = Sector(twice_j)
            if sector.twice_j in seen:
                raise ValueError(f"duplicate sector twice_j={sector.twice_j}")
            seen.add(sector.twice_j)
            amps = np.array(amps, dtype=complex).reshape(-1)
            if amps.shape[0] != sector.dim:
                raise ValueError(
                    f"sector twice_j={sector.twice_j} needs {sector.dim} amplitudes, got {amps.shape[0]}"
                )
            amps.flags.writeable = False
            cleaned.append((sector.twice_j, amps))
        if not cleaned:
            raise ValueError("a state needs at least one sector")
        cleaned.sort(key=lambda b: b[0])
        object.__setattr__(self, "blocks", tuple(cleaned))
        _check_norm(sum(float(np.vdot(a, a).real) for _, a in cleaned), "state")

    @classmethod
    def single(cls, twice_j: int, amplitudes) -> "SectoredState":
        return cls(((twice_j, amplitudes),))

    @property
    def sectors(self) -> list[Sector]:
        return [Sector(tj) for tj, _ in self.blocks]

    @property
    def is_single_sector(self) -> bool:
        return len(self.blocks) == 1

    def _require_single(self):
        if not self.is_single_sector:
            raise ValueError("operation needs a single-sector state")

    @property
    def sector(self) -> Sector:
        self._require_single()
        return Sector(self.blocks[0][0])

    @property
    def vector(self) -> np.ndarray:
        self._require_single()
        return self.blocks[0][1]

    def block(self, twice_j: int) -> np.ndarray:
        for tj, amps in self.blocks:
            if tj == twice_j:
                return amps
        raise KeyError(twice_j)

    def weights(self) -> dict[int, float]:
        return {tj: float(np.vdot(a, a).real) for tj, a in self.blocks}

    def map_blocks(self, fn) -> "SectoredState":
        """New state with each block replaced by ``fn(sector, amplitudes)``."""
        return SectoredState(tuple((tj, fn(Sector(tj), a)) for tj, a in self.blocks))

    def to_dict(self) -> dict:
        return {
            "sectors": [
                {"twice_j": tj, "re": a.real.tolist(), "im": a.imag.tolist()} for tj, a in self.blocks
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SectoredState":
        blocks = []
        for entry in data["sectors"]:
            re = np.asarray(entry["re"], dtype=float)
            im = np.asarray(entry.get("im", np.zeros_like(re)), dtype=float)
            blocks.append((int(entry["twice_j"]), re + 1j * im))
        return cls(tuple(blocks))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SectoredState":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class MixedSectorState:
    """Incoherent mixture of single-sector pure states, one per sector."""

    components: tuple

    def __post_init__(self):
        comps = []
        seen = set()
        for weight, state in self.components:
            weight = float(weight)
            if not 0.0 <= weight <= 1.0 + NORM_TOL:
                raise ValueError(f"component weight {weight} outside [0, 1]")
            if not isinstance(state, SectoredState) or not state.is_single_sector:
                raise ValueError("components must be single-sector SectoredState objects")
            if state.sector.twice_j in seen:
                raise ValueError(f"duplicate sector twice_j={state.sector.twice_j}")
            seen.add(state.sector.twice_j)
            comps.append((weight, state))
        if not comps:
            raise ValueError("a mixture needs at least one component")
        comps.sort(key=lambda c: c[1].sector.twice_j)
        object.__setattr__(self, "components", tuple(comps))
        _check_norm(sum(w for w, _ in comps), "mixture weights")

    @property
    def sectors(self) -> list[Sector]:
        return [s.sector for _, s in self.components]

    @property
    def is_single_sector(self) -> bool:
        return len(self.components) == 1

    def weights(self) -> dict[int, float]:
        return {s.sector.twice_j: w for w, s in self.components}

    def map_blocks(self, fn) -> "MixedSectorState":
        return MixedSectorState(tuple((w, s.map_blocks(fn)) for w, s in self.components))


class Symmetry(enum.Enum):
    REAL_SYMMETRIC = "RealSymmetric"
    COMPLEX_SYMMETRIC = "ComplexSymmetric"
    ASYMMETRIC = "Asymmetric"


@dataclass(frozen=True)
class SymmetryClass:
    tag: Symmetry
    tolerance: float

    @property
    def symmetric(self) -> bool:
        return self.tag is not Symmetry.ASYMMETRIC


def _sector_blocks(state) -> list[tuple[int, np.ndarray]]:
    """(twice_j, amplitudes) per sector; mixture components come back normalized."""
    if isinstance(state, MixedSectorState):
        return [c.blocks[0] for _, c in state.components]
    return list(state.blocks)


def classify_symmetry(state, tol: float = 1e-10) -> SymmetryClass:
    """Sort a state into real-symmetric, complex-symmetric or asymmetric.

    Symmetry means C[j, m] == C[j, -m] for every sector.  Reality is tested
    after removing one phase per sector, taken from that sector's largest
    amplitude.
    """
    real = True
    for _, amps in _sector_blocks(state):
        if np.abs(amps - amps[::-1]).max() > tol:
            return SymmetryClass(Symmetry.ASYMMETRIC, tol)
        pivot = amps[np.argmax(np.abs(amps))]
        if abs(pivot) == 0:
            continue
        rephased = amps * (abs(pivot) / pivot)
        if np.abs(rephased.imag).max() > tol:
            real = False
    tag = Symmetry.REAL_SYMMETRIC if real else Symmetry.COMPLEX_SYMMETRIC
    return SymmetryClass(tag, tol)


def phase_average(state) -> MixedSectorState:
    """Drop coherences between particle-number sectors."""
    if isinstance(state, MixedSectorState):
        return state
    comps = []
    for tj, amps in state.blocks:
        w = float(np.vdot(amps, amps).real)
        if w == 0:
            continue
        comps.append((w, SectoredState.single(tj, amps / np.sqrt(w))))
    return MixedSectorState(tuple(comps))


# --------------------------------------------------------------------------
# constructors


def dicke_state(twice_j: int, m: float) -> SectoredState:
    sector = Sector(twice_j)
    amps = np.zeros(sector.dim, dtype=complex)
    amps[sector.index(m)] = 1.0
    return SectoredState.single(twice_j, amps)


def _top_vector(sector: Sector) -> np.ndarray:
    v = np.zeros(sector.dim, dtype=complex)
    v[-1] = 1.0
    return v


def coherent_spin_state(sector, polar: float, azimuth: float = 0.0) -> SectoredState:
    """|j, j> rotated to point along (polar, azimuth)."""
    sector = sector if isinstance(sector, Sector) else Sector(sector)
    v = rotation(sector, "y", polar)[:, -1]
    v = np.exp(-1j * azimuth * sector.m) * v
    return SectoredState.single(sector.twice_j, v)


def _particles(N) -> Sector:
    if int(N) != N or N < 1:
        raise ValueError(f"particle number must be a positive integer, got {N!r}")
    return Sector(int(N))


def tact_hamiltonian(sector) -> np.ndarray:
    jx = angular_momentum(sector, "x")
    jy = angular_momentum(sector, "y")
    return jx @ jx - jy @ jy


def tact_state(N: int, chi_t: float) -> SectoredState:
    """Two-axis counter-twisted state, re-oriented by R_z(pi/4), in the z frame."""
    sector = _particles(N)
    v = evolve(_top_vector(sector), tact_hamiltonian(sector), chi_t)
    v = np.exp(-1j * (np.pi / 4) * sector.m) * v
    return SectoredState.single(sector.twice_j, v)


def tact_optimal_time(N: int) -> float:
    return np.log(2 * np.pi * N) / (2 * N)


def _jx_variance(sector: Sector, vectors: np.ndarray) -> np.ndarray:
    jx = angular_momentum(sector, "x")
    jv = jx @ vectors
    mean = np.einsum("i...,i...->...", vectors.conj(), jv).real
    second = np.einsum("i...,i...->...", jv.conj(), jv).real
    return second - mean**2


def oat_orientation(sector: Sector, twisted: np.ndarray, n_grid: int = 720) -> float:
    """Angle phi in [0, pi) maximizing Var(J_x) of exp(-i phi J_z)|twisted>."""
    m = sector.m
    phis = np.linspace(0.0, np.pi, n_grid, endpoint=False)
    grid_vals = _jx_variance(sector, np.exp(-1j * np.outer(m, phis)) * twisted[:, None])
    k = int(np.argmax(grid_vals))
    best_phi, best_val = phis[k], grid_vals[k]

    def neg_var(phi):
        return -_jx_variance(sector, np.exp(-1j * phi * m) * twisted)

    step = np.pi / n_grid
    try:
        res = optimize.minimize_scalar(
            neg_var, bracket=(best_phi - step, best_phi, best_phi + step), method="golden"
        )
    except ValueError:
        # flat neighbourhood on the grid; the grid point is already the max
        return float(best_phi % np.pi)
    if -res.fun >= best_val:
        best_phi = res.x
    return float(best_phi % np.pi)


def oat_state(N: int, chi_t: float, phi="auto") -> SectoredState:
    """One-axis twisted state exp(-i phi J_z) exp(-i chi_t J_x^2)|j, j>.

    ``phi="auto"`` picks the orientation with the largest J_x variance.
    """
    sector = _particles(N)
    jx = angular_momentum(sector, "x")
    twisted = evolve(_top_vector(sector), jx @ jx, chi_t)
    if isinstance(phi, str):
        if phi.lower() != "auto":
            raise ValueError(f"phi must be a number or 'auto', got {phi!r}")
        phi = oat_orientation(sector, twisted)
    return SectoredState.single(sector.twice_j, np.exp(-1j * phi * sector.m) * twisted)


def noon_state(N: int) -> SectoredState:
    sector = _particles(N)
    v = np.zeros(sector.dim, dtype=complex)
    v[0] = v[-1] = 1 / np.sqrt(2)
    return SectoredState.single(sector.twice_j, v)


def twin_fock_probe(N: int) -> SectoredState:
    """Beam-splitter image of the twin-Fock input |N/2, N/2>."""
    sector = _particles(N)
    if sector.twice_j % 2:
        raise ValueError(f"twin-Fock state needs an even particle number, got {N}")
    v = beam_splitter(sector)[:, sector.index(0)]
    return SectoredState.single(sector.twice_j, v.astype(complex))


def multi_sector_superposition(blocks: Iterable, weights=None) -> SectoredState:
    """Coherent superposition over several sectors.

    ``blocks`` is a sequence of (twice_j, amplitudes); each amplitude vector is
    normalized and then scaled so sector ``k`` carries probability
    ``weights[k] / sum(weights)`` (equal weights by default).
    """
    blocks = [(int(tj), np.asarray(a, dtype=complex)) for tj, a in blocks]
    if not blocks:
        raise ValueError("multi-sector superposition needs at least one block")
    weights = np.ones(len(blocks)) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != (len(blocks),) or np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("weights must be non-negative, one per block, with a positive sum")
    weights = weights / weights.sum()
    out = []
    for (tj, a), w in zip(blocks, weights):
        norm = np.linalg.norm(a)
        if norm == 0:
            raise ValueError(f"block twice_j={tj} has zero amplitude")
        out.append((tj, np.sqrt(w) * a / norm))
    return SectoredState(tuple(out))


def symmetrize(half: np.ndarray, twice_j: int) -> np.ndarray:
    """Extend amplitudes for m <= 0 (ascending) to a symmetric vector of the sector."""
    dim = twice_j + 1
    half = np.asarray(half, dtype=complex)
    if half.shape[0] != dim // 2 + dim % 2:
        raise ValueError(f"need {dim // 2 + dim % 2} amplitudes for twice_j={twice_j}")
    idx = np.minimum(np.arange(dim), dim - 1 - np.arange(dim))
    return half[idx]
