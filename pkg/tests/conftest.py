import math

import numpy as np
import pytest
from scipy.linalg import expm

from qcrb.states import SectoredState, multi_sector_superposition, symmetrize


def dense_ops(twice_j):
    """J_x, J_y, J_z built element by element from <m'|J|m>, independent of the library."""
    j = twice_j / 2
    ms = [-j + k for k in range(twice_j + 1)]
    dim = len(ms)
    jx = np.zeros((dim, dim), dtype=complex)
    jy = np.zeros((dim, dim), dtype=complex)
    for a, mp in enumerate(ms):
        for b, m in enumerate(ms):
            if abs(mp - (m + 1)) < 1e-12:
                c = math.sqrt(j * (j + 1) - m * (m + 1))
                jx[a, b] += c / 2
                jy[a, b] += -1j * c / 2
            if abs(mp - (m - 1)) < 1e-12:
                c = math.sqrt(j * (j + 1) - m * (m - 1))
                jx[a, b] += c / 2
                jy[a, b] += 1j * c / 2
    jz = np.diag(ms).astype(complex)
    return jx, jy, jz


def dense_rotation(twice_j, axis, angle):
    jx, jy, jz = dense_ops(twice_j)
    gen = {"x": jx, "y": jy, "z": jz}[axis]
    return expm(-1j * angle * gen)


def wigner_d_factorial(j, mp, m, beta):
    """Textbook sum formula for d^j_{m', m}(beta)."""
    f = math.factorial
    pre = math.sqrt(f(round(j + mp)) * f(round(j - mp)) * f(round(j + m)) * f(round(j - m)))
    total = 0.0
    c, s = math.cos(beta / 2), math.sin(beta / 2)
    for k in range(0, round(2 * j) + 1):
        a, b, cc, d = round(j + m - k), k, round(j - k - mp), round(mp - m + k)
        if min(a, b, cc, d) < 0:
            continue
        total += (-1) ** (mp - m + k) * c ** round(2 * j + m - mp - 2 * k) * s ** round(mp - m + 2 * k) / (
            f(a) * f(b) * f(cc) * f(d)
        )
    return pre * total


def random_symmetric_vector(rng, twice_j, real=True):
    half = rng.normal(size=twice_j // 2 + 1 if twice_j % 2 == 0 else (twice_j + 1) // 2)
    if not real:
        half = half + 1j * rng.normal(size=half.size)
    v = symmetrize(half, twice_j)
    return v / np.linalg.norm(v)


def random_symmetric_state(rng, max_twice_j=30, real=True):
    twice_j = int(rng.integers(1, max_twice_j + 1))
    return SectoredState.single(twice_j, random_symmetric_vector(rng, twice_j, real))


def random_multi_sector(rng, n_sectors=3, max_twice_j=12, real=True, same_parity=False):
    parity = int(rng.integers(0, 2))
    pool = [t for t in range(1, max_twice_j + 1) if not same_parity or t % 2 == parity]
    sectors = sorted(rng.choice(pool, size=n_sectors, replace=False))
    blocks = []
    for tj in sectors:
        v = random_symmetric_vector(rng, int(tj), real)
        if not real:
            # independent per-sector phase keeps the state symmetric
            v = v * np.exp(1j * rng.uniform(0, 2 * np.pi))
        blocks.append((int(tj), v))
    return multi_sector_superposition(blocks, rng.uniform(0.2, 1.0, size=n_sectors))


def sop_fixture():
    """Real symmetric superposition over twice_j = 2 and 4 (same particle-number parity)."""
    return multi_sector_superposition(
        [(2, symmetrize([1.0, 0.5], 2)), (4, symmetrize([0.3, 1.0, 0.2], 4))]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion; returns the verdict."""

    def record(number, ok, detail, elapsed=None, budget=None):
        timing = "" if elapsed is None else f" [{elapsed:.2f}s / budget {budget:g}s]"
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}{timing}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
