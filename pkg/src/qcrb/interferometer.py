"""Mach-Zehnder and Ramsey transformations, applied sector by sector."""

from __future__ import annotations

import numpy as np

from .spin import beam_splitter, rotation
from .states import MixedSectorState, SectoredState


def reduce_phase(theta: float) -> tuple[float, bool]:
    """Map ``theta`` onto [0, pi] using 2 pi periodicity and theta -> -theta.

    Returns the reduced value and whether it differed from the input.  The
    reflection is only meaningful for quantities even in theta, such as the
    Fisher information of symmetric probes.
    """
    if not np.isfinite(theta):
        raise ValueError("phase must be finite")
    if 0.0 <= theta <= np.pi:
        return float(theta), False
    t = float(np.mod(theta, 2 * np.pi))
    if t > np.pi:
        t = 2 * np.pi - t
    return t, True


def _apply(state, fn):
    if isinstance(state, (SectoredState, MixedSectorState)):
        return state.map_blocks(fn)
    raise TypeError(f"expected a sectored state, got {type(state).__name__}")


def probe_from_input(state):
    """First beam splitter B = exp(-i pi J_y / 2)."""
    return _apply(state, lambda s, v: beam_splitter(s) @ v)


def phase_shift(state, theta: float):
    """U_theta = exp(-i theta J_z)."""
    return _apply(state, lambda s, v: np.exp(-1j * theta * s.m) * v)


def output_from_probe(state, theta: float):
    """B^dagger U_theta applied to a probe state."""
    return _apply(state, lambda s, v: beam_splitter(s).T @ (np.exp(-1j * theta * s.m) * v))


def mzi_output(state, theta: float):
    """Full interferometer B^dagger U_theta B acting on the input state."""
    return output_from_probe(probe_from_input(state), theta)


def ramsey_rotate(state, theta: float):
    """R_x(theta) = exp(+i theta J_x)."""
    return _apply(state, lambda s, v: rotation(s, "x", -theta) @ v)


def frame_to_x(state):
    """exp(-i pi J_y / 2): maps a z-frame Ramsey state onto its interferometer probe."""
    return probe_from_input(state)
