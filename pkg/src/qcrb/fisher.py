"""Outcome statistics and Fisher information for conventional measurements.

Probabilities are computed from the probe state by applying B^dagger U_theta
sector by sector; derivatives come from the same amplitudes and are exact.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import trapezoid

from .spin import Sector, beam_splitter, rotation
from .states import (
    MixedSectorState,
    SectoredState,
    Symmetry,
    classify_symmetry,
)

P_FLOOR = 1e-14
MEASUREMENT_KINDS = ("TOP", "SOP", "PD", "NoisyPD")

WHOLE_INTERVAL = "0<=theta<=pi"
ENDPOINTS = "theta->0,pi"
NOT_OPTIMAL = "none"
INAPPLICABLE = "inapplicable"


class SingularPhaseError(ValueError):
    """Derivative weight found on a zero-probability outcome."""


@dataclass(frozen=True)
class Measurement:
    kind: str
    sigma: float = 0.0

    def __post_init__(self):
        kind = {k.lower(): k for k in MEASUREMENT_KINDS}.get(str(self.kind).lower())
        if kind is None:
            raise ValueError(f"unknown measurement {self.kind!r}; expected one of {MEASUREMENT_KINDS}")
        object.__setattr__(self, "kind", kind)
        sigma = float(self.sigma)
        if kind == "NoisyPD" and not sigma > 0:
            raise ValueError("NoisyPD needs sigma > 0")
        if kind != "NoisyPD" and sigma != 0:
            raise ValueError(f"{kind} takes no sigma")
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def parse(cls, spec) -> "Measurement":
        """Accepts 'TOP', 'SOP', 'PD', 'NoisyPD:0.7', or an existing Measurement."""
        if isinstance(spec, Measurement):
            return spec
        text = str(spec).strip()
        if ":" in text:
            kind, sigma = text.split(":", 1)
            return cls(kind.strip(), float(sigma))
        return cls(text)

    @classmethod
    def pd_with_noise(cls, sigma: float) -> "Measurement":
        """PD for sigma == 0, NoisyPD otherwise."""
        return cls("PD") if sigma == 0 else cls("NoisyPD", sigma)

    @property
    def uses_population_difference(self) -> bool:
        return self.kind in ("PD", "NoisyPD")

    def __str__(self):
        return f"NoisyPD:{self.sigma:g}" if self.kind == "NoisyPD" else self.kind


TOP = Measurement("TOP")
SOP = Measurement("SOP")
PD = Measurement("PD")


@dataclass(frozen=True)
class OutcomeDistribution:
    labels: tuple
    probs: np.ndarray
    dprobs: np.ndarray
    theta: float
    measurement: Measurement

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.min(initial=0.0) < -1e-14:
            raise ValueError(f"negative probability {probs.min():.3e}")
        probs = np.clip(probs, 0.0, None)
        if abs(probs.sum() - 1.0) > 1e-10:
            raise ValueError(f"outcome probabilities sum to {probs.sum()!r}")
        dprobs = np.asarray(self.dprobs, dtype=float)
        if abs(dprobs.sum()) > 1e-8:
            raise ValueError(f"outcome derivatives sum to {dprobs.sum()!r}")
        probs.flags.writeable = False
        dprobs.flags.writeable = False
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "dprobs", dprobs)

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class FisherReport:
    qfi: float
    cfi: float
    measurement: Measurement
    theta: float


@dataclass(frozen=True)
class CauchySchwarzReport:
    sop_cfi: float
    top_cfi: float
    equality_gap: float
    residuals: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OptimalityRow:
    measurement: str
    phase_condition: str
    attains_qcrb: bool
    table1_condition: str
    remark: str = ""


@dataclass(frozen=True)
class Sensitivity:
    delta_theta: float
    gain_db: float


# --------------------------------------------------------------------------
# helpers


def sector_terms(state) -> list[tuple[Sector, np.ndarray]]:
    """Per-sector amplitude vectors, each scaled so |v|^2 is the sector weight."""
    if isinstance(state, MixedSectorState):
        return [(c.sector, math.sqrt(w) * c.vector) for w, c in state.components if w > 0]
    if isinstance(state, SectoredState):
        return [(Sector(tj), a) for tj, a in state.blocks]
    raise TypeError(f"expected a sectored state, got {type(state).__name__}")


def _n_sectors(state) -> int:
    return len(sector_terms(state))


def _output_amplitudes(sector: Sector, v: np.ndarray, thetas: np.ndarray):
    """Amplitudes of B^dagger U_theta v and their theta derivatives, shape (n_theta, dim)."""
    m = sector.m
    phased = np.exp(-1j * np.outer(thetas, m)) * v  # (n_theta, dim)
    b = beam_splitter(sector)
    # row-vector form of B^T v; B is real so B^dagger = B^T
    amps = phased @ b
    damps = (phased * (-1j * m)) @ b
    return amps, damps


@lru_cache(maxsize=64)
def _noise_kernel(twice_j: int, sigma: float):
    pad = math.ceil(6 * sigma)
    src = Sector(twice_j).twice_m  # 2 mu'
    out = np.arange(-twice_j - 2 * pad, twice_j + 2 * pad + 1, 2)  # 2 mu on the padded lattice
    diff = (out[:, None] - src[None, :]) / 2
    kernel = np.exp(-(diff**2) / (2 * sigma**2))
    kernel /= kernel.sum(axis=0, keepdims=True)
    kernel.flags.writeable = False
    return out / 2, kernel


def _check_pd(state):
    if _n_sectors(state) != 1:
        raise ValueError("PD cannot distinguish particle-number sectors; use TOP or SOP")


def outcome_table(state, thetas, measurement):
    """Outcome labels plus probability and derivative arrays of shape (n_theta, n_outcomes)."""
    measurement = Measurement.parse(measurement)
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    terms = sector_terms(state)
    if measurement.uses_population_difference:
        _check_pd(state)

    labels, probs, dprobs = [], [], []
    for sector, v in terms:
        a, da = _output_amplitudes(sector, v, thetas)
        p = np.abs(a) ** 2
        dp = 2 * np.real(a.conj() * da)
        mu2 = sector.twice_m
        if measurement.kind == "NoisyPD":
            mus, kernel = _noise_kernel(sector.twice_j, measurement.sigma)
            labels.extend(float(x) for x in mus)
            probs.append(p @ kernel.T)
            dprobs.append(dp @ kernel.T)
        elif measurement.kind == "PD":
            labels.extend(float(x) / 2 for x in mu2)
            probs.append(p)
            dprobs.append(dp)
        else:
            n_c = (sector.twice_j + mu2) // 2
            n_d = (sector.twice_j - mu2) // 2
            labels.extend((int(c), int(d)) for c, d in zip(n_c, n_d))
            probs.append(p)
            dprobs.append(dp)

    probs = np.concatenate(probs, axis=1)
    dprobs = np.concatenate(dprobs, axis=1)
    if measurement.kind == "SOP":
        groups = defaultdict(list)
        for k, (n_c, _) in enumerate(labels):
            groups[n_c].append(k)
        keys = sorted(groups)
        probs = np.stack([probs[:, groups[c]].sum(axis=1) for c in keys], axis=1)
        dprobs = np.stack([dprobs[:, groups[c]].sum(axis=1) for c in keys], axis=1)
        labels = keys
    return tuple(labels), probs, dprobs


def outcome_distribution(state, theta: float, measurement) -> OutcomeDistribution:
    measurement = Measurement.parse(measurement)
    labels, p, dp = outcome_table(state, [theta], measurement)
    return OutcomeDistribution(labels, p[0], dp[0], float(theta), measurement)


def fisher_sum(probs, dprobs, p_floor: float = P_FLOOR) -> float:
    """sum (dp)^2 / p, skipping dead outcomes that carry no derivative."""
    probs = np.asarray(probs)
    dprobs = np.asarray(dprobs)
    live = probs > p_floor
    dead_slope = np.abs(dprobs[~live])
    if dead_slope.size and dead_slope.max() > 10 * math.sqrt(p_floor):
        raise SingularPhaseError(
            f"outcome with p <= {p_floor:g} has |dp/dtheta| = {dead_slope.max():.3e}; "
            "evaluate the endpoint with cfi_limit"
        )
    return float(np.sum(dprobs[live] ** 2 / probs[live]))


# --------------------------------------------------------------------------
# Fisher information


def qfi(state, variance: bool = False) -> float:
    """Quantum Fisher information for the phase imprinted by exp(-i theta J_z).

    Symmetric states use 8 * sum_j sum_{m >= 0} |C_{j,m}|^2 m^2.  With
    ``variance=True`` any state is accepted and 4 Var(J_z) is returned
    (per-sector variance for phase-averaged mixtures).
    """
    terms = sector_terms(state)
    if not variance:
        if not classify_symmetry(state).symmetric:
            raise ValueError("state is not symmetric; pass variance=True for 4 Var(J_z)")
        total = 0.0
        for sector, v in terms:
            m = sector.m
            upper = m >= 0
            total += 8 * float(np.sum(np.abs(v[upper]) ** 2 * m[upper] ** 2))
        return total

    if isinstance(state, MixedSectorState):
        total = 0.0
        for sector, v in terms:
            w = float(np.vdot(v, v).real)
            pm = np.abs(v) ** 2 / w
            mean = np.dot(pm, sector.m)
            total += w * 4 * (np.dot(pm, sector.m**2) - mean**2)
        return float(total)
    first = sum(float(np.dot(np.abs(v) ** 2, s.m)) for s, v in terms)
    second = sum(float(np.dot(np.abs(v) ** 2, s.m**2)) for s, v in terms)
    return 4 * (second - first**2)


def cfi(state, theta: float, measurement, p_floor: float = P_FLOOR) -> FisherReport:
    measurement = Measurement.parse(measurement)
    dist = outcome_distribution(state, theta, measurement)
    return FisherReport(
        qfi=qfi(state, variance=True),
        cfi=fisher_sum(dist.probs, dist.dprobs, p_floor),
        measurement=measurement,
        theta=float(theta),
    )


def cfi_scan(state, thetas, measurement, p_floor: float = P_FLOOR) -> np.ndarray:
    """Classical Fisher information on a grid of phases (no endpoint handling)."""
    _, p, dp = outcome_table(state, thetas, measurement)
    return np.array([fisher_sum(p[k], dp[k], p_floor) for k in range(p.shape[0])])


def _endpoint_value(endpoint) -> float:
    if isinstance(endpoint, str):
        key = endpoint.strip().lower()
        if key in ("0", "zero"):
            return 0.0
        if key == "pi":
            return float(np.pi)
        raise ValueError(f"endpoint must be 0 or pi, got {endpoint!r}")
    if endpoint == 0:
        return 0.0
    if abs(endpoint - np.pi) < 1e-12:
        return float(np.pi)
    raise ValueError(f"endpoint must be 0 or pi, got {endpoint!r}")


def cfi_limit_numeric(state, endpoint, measurement, steps=(1e-2, 5e-3, 2.5e-3)) -> float:
    """Richardson extrapolation of the CFI towards 0 or pi.

    The CFI of a symmetric probe is even about both endpoints, so the samples
    are fitted by a polynomial in h^2 and evaluated at h = 0.
    """
    end = _endpoint_value(endpoint)
    steps = np.asarray(steps, dtype=float)
    thetas = steps if end == 0 else np.pi - steps
    values = cfi_scan(state, thetas, measurement)
    coeffs = P.polyfit(steps**2, values, len(steps) - 1)
    return float(coeffs[0])


def _same_number_parity(state) -> bool:
    return len({s.twice_j % 2 for s, _ in sector_terms(state)}) == 1


def cfi_limit(state, endpoint, measurement) -> float:
    """CFI in the limit theta -> 0 or theta -> pi for symmetric probes.

    TOP, and PD on a single sector, reach 8 sum |C_{j,nu}|^2 nu^2.  SOP shares
    that value when every sector has the same particle-number parity; otherwise
    the limit is extrapolated numerically.  Detection noise removes the 0/0
    form, so NoisyPD is evaluated directly at the endpoint.
    """
    measurement = Measurement.parse(measurement)
    end = _endpoint_value(endpoint)
    if not classify_symmetry(state).symmetric:
        raise ValueError("cfi_limit needs a symmetric state")
    if measurement.kind == "NoisyPD":
        return cfi(state, end, measurement).cfi
    if measurement.kind == "PD":
        _check_pd(state)
    if measurement.kind == "SOP" and not _same_number_parity(state):
        return cfi_limit_numeric(state, end, measurement)
    return qfi(state)


def check_cauchy_schwarz(state, theta: float) -> CauchySchwarzReport:
    """Compare SOP and TOP Fisher information at one phase.

    Within each single-port count n_c, SOP equals TOP only if (dp/dtheta)/p is
    the same for every TOP outcome sharing that n_c.  The gap is accumulated as
    sum_k p_k (r_k - rbar)^2 per group, which equals F_TOP - F_SOP.
    """
    dist = outcome_distribution(state, theta, TOP)
    top = fisher_sum(dist.probs, dist.dprobs)
    groups = defaultdict(list)
    for k, (n_c, _) in enumerate(dist.labels):
        if dist.probs[k] > P_FLOOR:
            groups[n_c].append(k)
    residuals = {}
    for n_c, idx in sorted(groups.items()):
        p = dist.probs[idx]
        r = dist.dprobs[idx] / p
        rbar = np.dot(p, r) / p.sum()
        residuals[n_c] = float(np.dot(p, (r - rbar) ** 2))
    sop = cfi(state, theta, SOP).cfi
    return CauchySchwarzReport(sop, top, float(sum(residuals.values())), residuals)


def _table1_condition(tag: Symmetry, measurement: str, fixed_number: bool) -> str:
    if measurement == "PD" and not fixed_number:
        return INAPPLICABLE
    if tag is Symmetry.REAL_SYMMETRIC:
        return ENDPOINTS if measurement == "SOP" else WHOLE_INTERVAL
    if tag is Symmetry.COMPLEX_SYMMETRIC:
        return ENDPOINTS
    return NOT_OPTIMAL


def optimality_table(state, n_theta: int = 181, rtol: float = 1e-6) -> list[OptimalityRow]:
    """Check where each conventional measurement reaches the QFI.

    Interior grid points use the CFI directly, endpoints use ``cfi_limit``.
    ``table1_condition`` is the guarantee for the state's symmetry class;
    ``phase_condition`` is what the numbers show for this particular state.
    """
    symmetry = classify_symmetry(state)
    fixed_number = _n_sectors(state) == 1
    quantum = qfi(state, variance=True)
    interior = np.linspace(0.0, np.pi, n_theta)[1:-1]
    rows = []
    for name in ("SOP", "TOP", "PD"):
        table1 = _table1_condition(symmetry.tag, name, fixed_number)
        remark = "<dN^2>=0 required" if name == "PD" else ""
        if name == "PD" and not fixed_number:
            rows.append(OptimalityRow(name, INAPPLICABLE, False, table1, "state has fluctuating particle number"))
            continue
        values = cfi_scan(state, interior, name)
        if symmetry.symmetric:
            ends = [cfi_limit(state, 0.0, name), cfi_limit(state, np.pi, name)]
        else:
            ends = [cfi_limit_numeric(state, 0.0, name), cfi_limit_numeric(state, np.pi, name)]
        tol = rtol * max(quantum, 1e-300)
        ends_ok = all(abs(e - quantum) <= tol for e in ends)
        inner_ok = bool(np.all(np.abs(values - quantum) <= tol))
        if ends_ok and inner_ok:
            cond = WHOLE_INTERVAL
        elif ends_ok:
            cond = ENDPOINTS
        else:
            cond = NOT_OPTIMAL
        rows.append(OptimalityRow(name, cond, cond != NOT_OPTIMAL, table1, remark))
    return rows


def sensitivity(fisher: float, nu: float, N: float) -> Sensitivity:
    """Cramer-Rao phase uncertainty and its gain over the shot-noise limit in dB."""
    if not fisher > 0:
        raise ValueError(f"Fisher information must be positive, got {fisher!r}")
    if nu < 1:
        raise ValueError(f"need at least one measurement, got nu={nu!r}")
    delta = 1.0 / math.sqrt(nu * fisher)
    return Sensitivity(delta, -10 * math.log10(delta * math.sqrt(nu * N)))


# --------------------------------------------------------------------------
# Husimi distribution


def husimi(state, polar, azimuth) -> np.ndarray:
    """Q(polar, azimuth) = |<CSS|psi>|^2 on the lattice polar x azimuth."""
    if isinstance(state, MixedSectorState) or not state.is_single_sector:
        raise ValueError("husimi needs a single-sector pure state")
    sector, psi = state.sector, state.vector
    polar = np.atleast_1d(np.asarray(polar, dtype=float))
    azimuth = np.atleast_1d(np.asarray(azimuth, dtype=float))
    # coherent-state columns exp(-i polar J_y)|j, j>, one row per polar angle
    css = np.stack([rotation(sector, "y", t)[:, -1] for t in polar])
    # azimuth enters as exp(-i phi m) on the CSS, conjugated in the overlap
    weighted = np.exp(1j * np.outer(sector.m, azimuth)) * psi[:, None]
    return np.abs(css.conj() @ weighted) ** 2


def husimi_normalization(q: np.ndarray, polar, azimuth, dim: int) -> float:
    """(2j+1)/(4 pi) * integral of Q over the sphere by tensor trapezoid rule; 1 for any state."""
    polar = np.asarray(polar, dtype=float)
    azimuth = np.asarray(azimuth, dtype=float)
    inner = trapezoid(q * np.sin(polar)[:, None], polar, axis=0)
    # periodic azimuth: close the loop if the endpoint was left out
    if np.isclose(azimuth[-1] - azimuth[0] + (azimuth[1] - azimuth[0]), 2 * np.pi):
        integral = inner.sum() * (azimuth[1] - azimuth[0])
    else:
        integral = trapezoid(inner, azimuth)
    return float(dim / (4 * np.pi) * integral)


def husimi_anisotropy(q: np.ndarray, polar, azimuth) -> float:
    """Ratio of the principal widths of Q in the plane tangent to its mean direction."""
    polar = np.asarray(polar, dtype=float)
    azimuth = np.asarray(azimuth, dtype=float)
    t, f = np.meshgrid(polar, azimuth, indexing="ij")
    n = np.stack([np.sin(t) * np.cos(f), np.sin(t) * np.sin(f), np.cos(t)], axis=-1)
    w = q * np.sin(t)
    w = w / w.sum()
    mean = np.einsum("ij,ijk->k", w, n)
    axis = mean / np.linalg.norm(mean)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    u = np.stack([n @ e1, n @ e2], axis=-1)
    cov = np.einsum("ij,ijk,ijl->kl", w, u, u)
    lo, hi = np.linalg.eigvalsh(cov)
    return float(np.sqrt(hi / lo))
