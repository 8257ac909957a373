"""Bayesian phase estimation with a uniform prior on a discrete phase grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fisher import Measurement, OutcomeDistribution, outcome_distribution, outcome_table

DEFAULT_GRID_POINTS = 2048


@dataclass(frozen=True)
class PhaseGrid:
    lo: float = 0.0
    hi: float = math.pi
    count: int = DEFAULT_GRID_POINTS

    def __post_init__(self):
        if self.count < 64:
            raise ValueError(f"phase grid needs at least 64 points, got {self.count}")
        if not (0.0 <= self.lo < self.hi <= math.pi + 1e-12):
            raise ValueError(f"grid range [{self.lo}, {self.hi}] must lie inside [0, pi]")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.count - 1)


@dataclass(frozen=True)
class EstimationRun:
    theta_true: float
    nu: int
    map_estimate: float
    ci68: tuple
    posterior: np.ndarray


@dataclass(frozen=True)
class SequenceStats:
    theta_true: float
    runs: int
    mean_estimate: float
    std_estimate: float  # NaN when runs == 1
    mean_ci_halfwidth: float
    estimates: tuple = ()


def cell_rng(seed: int, *indices: int) -> np.random.Generator:
    """Independent PCG64 stream for one work cell, hashed from the base seed and indices."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, indices)])))


def sample_outcomes(distribution: OutcomeDistribution, count: int, seed) -> np.ndarray:
    """Indices into ``distribution.labels`` drawn i.i.d. from its probabilities.

    ``seed`` may be an integer or an existing ``numpy.random.Generator``.
    """
    if count < 1:
        raise ValueError("need at least one sample")
    probs = np.asarray(distribution.probs, dtype=float)
    if abs(probs.sum() - 1.0) > 1e-10 or probs.min() < 0:
        raise ValueError("distribution is not normalized")
    rng = seed if isinstance(seed, np.random.Generator) else cell_rng(seed)
    return rng.choice(probs.size, size=count, p=probs / probs.sum())


def likelihood_table(grid: PhaseGrid, likelihood) -> np.ndarray:
    """Outcome probabilities at every grid point, shape (grid.count, n_outcomes).

    ``likelihood`` is either a callable theta -> OutcomeDistribution or a
    precomputed table.
    """
    if callable(likelihood):
        return np.stack([np.asarray(likelihood(t).probs) for t in grid.points])
    table = np.asarray(likelihood, dtype=float)
    if table.ndim != 2 or table.shape[0] != grid.count:
        raise ValueError(f"likelihood table shape {table.shape} does not match grid of {grid.count}")
    return table


def posterior(grid: PhaseGrid, outcomes, likelihood) -> np.ndarray:
    """Normalized posterior on ``grid`` for outcome indices under a flat prior."""
    outcomes = np.asarray(outcomes, dtype=int).reshape(-1)
    if outcomes.size == 0:
        raise ValueError("need at least one outcome")
    table = likelihood_table(grid, likelihood)
    counts = np.bincount(outcomes, minlength=table.shape[1])
    used = counts > 0
    with np.errstate(divide="ignore"):
        log_like = np.log(table[:, used]) @ counts[used]
    top = log_like.max()
    if not np.isfinite(top):
        raise ValueError("outcomes have zero likelihood everywhere on the grid")
    post = np.exp(log_like - top)
    return post / post.sum()


def map_and_ci(post, grid: PhaseGrid, mass: float = 0.68):
    """MAP point and the credible interval grown outward from it.

    Ties for the maximum go to the lower phase.  The interval is built from
    grid cells: half of the MAP cell counts toward each side and cells are
    added on each side until that side holds ``mass / 2``.  If a side runs into
    the grid edge, the other side keeps growing until the total reaches
    ``mass``.  The returned bounds are cell edges clipped to the grid range.
    """
    post = np.asarray(post, dtype=float)
    theta = grid.points
    k = int(np.argmax(post))  # first maximum, i.e. lowest theta
    half = mass / 2
    lo = hi = k
    left = right = post[k] / 2
    while left < half and lo > 0:
        lo -= 1
        left += post[lo]
    while right < half and hi < post.size - 1:
        hi += 1
        right += post[hi]
    while left + right < mass and (lo > 0 or hi < post.size - 1):
        if hi < post.size - 1:
            hi += 1
            right += post[hi]
        else:
            lo -= 1
            left += post[lo]
    h = grid.step / 2
    ci = (max(theta[lo] - h, grid.lo), min(theta[hi] + h, grid.hi))
    return float(theta[k]), ci


def estimate(state, theta_true: float, measurement, nu: int, rng, grid: PhaseGrid, table=None) -> EstimationRun:
    """One sequence: draw ``nu`` outcomes at ``theta_true`` and locate the posterior peak."""
    measurement = Measurement.parse(measurement)
    if table is None:
        _, table, _ = outcome_table(state, grid.points, measurement)
    dist = outcome_distribution(state, theta_true, measurement)
    draws = sample_outcomes(dist, nu, rng)
    post = posterior(grid, draws, table)
    theta_map, ci = map_and_ci(post, grid)
    return EstimationRun(float(theta_true), int(nu), theta_map, ci, post)


def run_sequences(
    state,
    theta_true: float,
    measurement,
    nu: int,
    sequences: int,
    seed: int,
    grid: PhaseGrid | None = None,
    cell: int = 0,
) -> SequenceStats:
    """Repeat ``sequences`` independent estimations of length ``nu`` and aggregate.

    Sequence ``s`` draws from the stream hashed from (seed, cell, s), so cells
    can run in any order or in parallel and still give identical numbers.
    """
    if nu < 1 or sequences < 1:
        raise ValueError("nu and sequences must both be >= 1")
    measurement = Measurement.parse(measurement)
    grid = grid or PhaseGrid()
    _, table, _ = outcome_table(state, grid.points, measurement)
    dist = outcome_distribution(state, theta_true, measurement)

    estimates = np.empty(sequences)
    halfwidths = np.empty(sequences)
    for s in range(sequences):
        draws = sample_outcomes(dist, nu, cell_rng(seed, cell, s))
        post = posterior(grid, draws, table)
        estimates[s], (lo, hi) = map_and_ci(post, grid)
        halfwidths[s] = (hi - lo) / 2

    std = float(np.std(estimates, ddof=1)) if sequences > 1 else math.nan
    return SequenceStats(
        theta_true=float(theta_true),
        runs=sequences,
        mean_estimate=float(np.mean(estimates)),
        std_estimate=std,
        mean_ci_halfwidth=float(np.mean(halfwidths)),
        estimates=tuple(float(e) for e in estimates),
    )
