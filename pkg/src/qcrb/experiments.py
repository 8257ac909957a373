"""Declarative experiment runners behind the ``qcrb`` command.

Each runner takes a resolved config dict and returns a :class:`Table`; the
CLI owns file handling.  Work is split into independent cells that may run
in a process pool; rows are always assembled in cell order.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import PhaseGrid, run_sequences
from .fisher import (
    INAPPLICABLE,
    Measurement,
    cfi_limit,
    cfi_scan,
    optimality_table,
    qfi,
    husimi,
    sector_terms,
)
from .interferometer import frame_to_x, ramsey_rotate
from .spin import Sector
from .states import (
    MixedSectorState,
    SectoredState,
    classify_symmetry,
    coherent_spin_state,
    dicke_state,
    multi_sector_superposition,
    noon_state,
    oat_state,
    phase_average,
    symmetrize,
    tact_optimal_time,
    tact_state,
    twin_fock_probe,
)

EXPERIMENTS = ("table1", "fisher-scan", "noise-scan", "gain-vs-n", "bayes-sim", "husimi")

DEFAULTS = {
    "seed": 0,
    "nu": 1,
    "sequences": 50,
    "theta": {"points": 181, "lo": 0.0, "hi": math.pi},
    "sigmas": [0.0, 0.3, 0.7, 1.5],
    "N": [20, 60, 100, 200],
    "measurements": ["SOP", "TOP", "PD"],
    "measurement": "PD",
    "thetas_true": [k * math.pi / 20 for k in range(1, 10)],
    "grid_points": 2048,
    "husimi": {"n_polar": 61, "n_azimuth": 120, "theta": math.pi / 4},
}

# per-experiment overrides of DEFAULTS
EXPERIMENT_DEFAULTS = {
    "bayes-sim": {"nu": 100},
}

STATE_DEFAULTS = {
    "table1": {"kind": "tact", "N": 10},
    "fisher-scan": {"kind": "tact", "N": 10},
    "bayes-sim": {"kind": "tact", "N": 10},
    "husimi": {"kind": "tact", "N": 60},
}

# relative slack when checking cfi <= qfi
QCRB_RTOL = 1e-8


class ConfigError(ValueError):
    pass


class ContractViolation(RuntimeError):
    pass


@dataclass
class Table:
    columns: list
    rows: list
    comments: list = field(default_factory=list)


# --------------------------------------------------------------------------
# config handling


_PI_EXPR = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)?)\*?pi(?:/(\d+\.?\d*))?$")


def _as_float(value, what: str) -> float:
    """Number from config; strings like 'pi/4', '3pi/4' or '0.5*pi' are accepted."""
    if isinstance(value, str):
        match = _PI_EXPR.match(value.strip().lower().replace(" ", ""))
        if match:
            coeff, denom = match.groups()
            coeff = {"": 1.0, "+": 1.0, "-": -1.0}[coeff] if coeff in ("", "+", "-") else float(coeff)
            return coeff * math.pi / (float(denom) if denom else 1.0)
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse {what}={value!r}") from exc


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def resolve_config(experiment: str, config: dict | None = None) -> dict:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    cfg = _merge(DEFAULTS, EXPERIMENT_DEFAULTS.get(experiment, {}))
    cfg = _merge(cfg, {"state": STATE_DEFAULTS.get(experiment, {})})
    cfg = _merge(cfg, config or {})
    cfg["experiment"] = experiment
    return cfg


def config_hash(cfg: dict) -> str:
    payload = {k: v for k, v in cfg.items() if k not in ("output", "workers")}
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def header(cfg: dict) -> list[str]:
    return [
        f"qcrb {__version__}",
        f"experiment={cfg['experiment']} config_sha256={config_hash(cfg)} seed={cfg['seed']}",
    ]


def theta_grid(cfg: dict) -> np.ndarray:
    spec = cfg["theta"]
    if isinstance(spec, (list, tuple)):
        return np.array([_as_float(t, "theta") for t in spec])
    points = int(spec.get("points", 181))
    if points < 2:
        raise ConfigError("theta grid needs at least 2 points")
    lo = _as_float(spec.get("lo", 0.0), "theta.lo")
    hi = _as_float(spec.get("hi", math.pi), "theta.hi")
    if not 0 <= lo < hi <= math.pi + 1e-12:
        raise ConfigError(f"theta range [{lo}, {hi}] must lie in [0, pi]")
    return np.linspace(lo, hi, points)


def build_state(spec: dict):
    """State from a config entry such as ``{"kind": "tact", "N": 10}``.

    Squeezed and coherent Ramsey states are moved to the interferometer
    (x) frame unless ``frame: z`` is given; ``phase_average: true`` returns
    the sector mixture.
    """
    spec = dict(spec)
    kind = str(spec.pop("kind", "")).lower().replace("-", "_")
    frame = spec.pop("frame", None)
    averaged = bool(spec.pop("phase_average", False))
    try:
        if kind == "tact":
            N = int(spec["N"])
            chi_t = spec.get("chi_t", "auto")
            chi_t = tact_optimal_time(N) if chi_t == "auto" else _as_float(chi_t, "chi_t")
            state, default_frame = tact_state(N, chi_t), "x"
        elif kind == "oat":
            N = int(spec["N"])
            chi_t = spec.get("chi_t", "auto")
            chi_t = 1 / math.sqrt(N) if chi_t == "auto" else _as_float(chi_t, "chi_t")
            phi = spec.get("phi", "auto")
            phi = phi if phi == "auto" else _as_float(phi, "phi")
            state, default_frame = oat_state(N, chi_t, phi), "x"
        elif kind in ("css", "coherent"):
            state = coherent_spin_state(
                Sector(int(spec["N"])),
                _as_float(spec.get("polar", 0.0), "polar"),
                _as_float(spec.get("azimuth", 0.0), "azimuth"),
            )
            default_frame = "x"
        elif kind == "noon":
            state, default_frame = noon_state(int(spec["N"])), "z"
        elif kind in ("twin_fock", "twinfock"):
            state, default_frame = twin_fock_probe(int(spec["N"])), "z"
        elif kind == "dicke":
            state, default_frame = dicke_state(int(spec["N"]), _as_float(spec.get("m", 0), "m")), "z"
        elif kind == "multi_sector":
            blocks = []
            for entry in spec["blocks"]:
                twice_j = int(entry["twice_j"])
                if "half" in entry:
                    # amplitudes for m <= 0, mirrored onto m > 0
                    blocks.append((twice_j, symmetrize(entry["half"], twice_j)))
                    continue
                real = np.asarray(entry["re"], dtype=float)
                imag = np.asarray(entry.get("im", np.zeros_like(real)), dtype=float)
                blocks.append((twice_j, real + 1j * imag))
            state, default_frame = multi_sector_superposition(blocks, spec.get("weights")), "z"
        elif kind == "json":
            state = SectoredState.from_json(Path(spec["path"]).read_text())
            default_frame = "z"
        else:
            raise ConfigError(f"unknown state constructor {kind!r}")
    except KeyError as exc:
        raise ConfigError(f"state {kind!r} is missing parameter {exc.args[0]!r}") from exc
    except (OSError, TypeError) as exc:
        raise ConfigError(f"bad state spec: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad state spec: {exc}") from exc

    frame = frame or default_frame
    if frame not in ("x", "z"):
        raise ConfigError(f"frame must be 'x' or 'z', got {frame!r}")
    if frame == "x":
        state = frame_to_x(state)
    return phase_average(state) if averaged else state


def mean_particle_number(state):
    n = float(sum(np.vdot(v, v).real * s.twice_j for s, v in sector_terms(state)))
    # fixed-N states give an exact integer up to rounding
    return int(round(n)) if abs(n - round(n)) < 1e-9 else n


def _parallel_map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _check_qcrb(cfi_value: float, qfi_value: float, cell: str):
    if cfi_value > qfi_value * (1 + QCRB_RTOL) + QCRB_RTOL:
        raise ContractViolation(f"CFI {cfi_value!r} exceeds QFI {qfi_value!r} at {cell}")


def _fisher_curve(state, thetas: np.ndarray, measurement: Measurement) -> np.ndarray:
    """CFI on ``thetas``, using endpoint limits at exactly 0 and pi."""
    values = np.empty(thetas.size)
    ends = (thetas == 0.0) | np.isclose(thetas, math.pi, rtol=0, atol=1e-12)
    if np.any(~ends):
        values[~ends] = cfi_scan(state, thetas[~ends], measurement)
    for k in np.flatnonzero(ends):
        values[k] = cfi_limit(state, float(thetas[k]), measurement)
    return values


def _sensitivity_row(theta, measurement: Measurement, n_particles, qfi_value, cfi_value):
    if cfi_value > 0:
        normalized = math.sqrt(n_particles / cfi_value)
        gain = -10 * math.log10(normalized)
    else:
        normalized, gain = math.inf, -math.inf
    return [float(theta), measurement.kind, measurement.sigma, n_particles, qfi_value, cfi_value, normalized, gain]


FISHER_COLUMNS = ["theta", "measurement", "sigma", "N", "qfi", "cfi", "delta_theta_normalized", "gain_db"]


# --------------------------------------------------------------------------
# runners


def run_table1(cfg: dict) -> Table:
    state = build_state(cfg["state"])
    symmetry = classify_symmetry(state)
    if not symmetry.symmetric:
        raise ConfigError("table1 needs a symmetric state")
    rows = []
    n_theta = int(cfg["theta"].get("points", 181)) if isinstance(cfg["theta"], dict) else 181
    fixed = len(state.sectors) == 1
    for row in optimality_table(state, n_theta=n_theta):
        remark = row.remark
        if row.measurement == "PD":
            remark = "<dN^2>=0 holds" if fixed else "<dN^2>!=0: PD inapplicable"
        rows.append([row.measurement, symmetry.tag.value, row.phase_condition, row.table1_condition,
                     row.attains_qcrb if row.phase_condition != INAPPLICABLE else False, remark])
    columns = ["measurement", "symmetry", "phase_condition", "table1_condition", "attains_qcrb", "remark"]
    return Table(columns, rows, [f"qfi={qfi(state, variance=True)!r}"])


def _fisher_scan_cell(state, thetas, n_particles, qfi_value, mspec):
    measurement = Measurement.parse(mspec)
    values = _fisher_curve(state, thetas, measurement)
    rows = []
    for theta, value in zip(thetas, values):
        _check_qcrb(value, qfi_value, f"theta={theta!r} measurement={measurement}")
        rows.append(_sensitivity_row(theta, measurement, n_particles, qfi_value, float(value)))
    return rows


def run_fisher_scan(cfg: dict) -> Table:
    state = build_state(cfg["state"])
    thetas = theta_grid(cfg)
    n_particles = mean_particle_number(state)
    qfi_value = qfi(state, variance=True)
    try:
        measurements = [Measurement.parse(m) for m in cfg["measurements"]]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if len(state.sectors) > 1:
        measurements = [m for m in measurements if not m.uses_population_difference]
    cell = partial(_fisher_scan_cell, state, thetas, n_particles, qfi_value)
    chunks = _parallel_map(cell, [str(m) for m in measurements], int(cfg.get("workers", 1)))
    return Table(FISHER_COLUMNS, [row for chunk in chunks for row in chunk])


def _noise_cell(thetas, item):
    N, sigma = item
    state = frame_to_x(tact_state(N, tact_optimal_time(N)))
    measurement = Measurement.pd_with_noise(sigma)
    qfi_value = qfi(state)
    values = _fisher_curve(state, thetas, measurement)
    rows = []
    for theta, value in zip(thetas, values):
        _check_qcrb(value, qfi_value, f"N={N} sigma={sigma!r} theta={theta!r}")
        rows.append(_sensitivity_row(theta, measurement, N, qfi_value, float(value)))
    return rows


def _particle_list(cfg) -> list[int]:
    Ns = cfg["N"] if isinstance(cfg["N"], (list, tuple)) else [cfg["N"]]
    try:
        Ns = [int(n) for n in Ns]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad particle list {cfg['N']!r}") from exc
    if any(n < 1 for n in Ns):
        raise ConfigError("particle numbers must be positive")
    return Ns


def _sigma_list(cfg) -> list[float]:
    sigmas = cfg["sigmas"] if isinstance(cfg["sigmas"], (list, tuple)) else [cfg["sigmas"]]
    sigmas = [_as_float(s, "sigma") for s in sigmas]
    if any(s < 0 for s in sigmas):
        raise ConfigError("sigma must be non-negative")
    return sigmas


def run_noise_scan(cfg: dict) -> Table:
    thetas = theta_grid(cfg)
    cells = [(N, s) for N in _particle_list(cfg) for s in _sigma_list(cfg)]
    chunks = _parallel_map(partial(_noise_cell, thetas), cells, int(cfg.get("workers", 1)))
    comments = ["TACT probe at chi_t = ln(2 pi N)/(2N); sigma=0 rows are the ideal baseline"]
    return Table(FISHER_COLUMNS, [row for chunk in chunks for row in chunk], comments)


def _gain_cell(item):
    N, sigma = item
    state = frame_to_x(tact_state(N, tact_optimal_time(N)))
    theta = math.pi / (2 * N)
    value = float(cfi_scan(state, [theta], Measurement.pd_with_noise(sigma))[0])
    _check_qcrb(value, qfi(state), f"N={N} sigma={sigma!r}")
    return theta, value


def fit_alpha(Ns, gains) -> float:
    """Least-squares alpha in g = -10 log10(alpha / sqrt(N))."""
    Ns = np.asarray(Ns, dtype=float)
    gains = np.asarray(gains, dtype=float)
    return float(10 ** (np.mean(5 * np.log10(Ns) - gains) / 10))


def run_gain_vs_n(cfg: dict) -> Table:
    Ns, sigmas = _particle_list(cfg), _sigma_list(cfg)
    cells = [(N, s) for s in sigmas for N in Ns]
    results = _parallel_map(_gain_cell, cells, int(cfg.get("workers", 1)))
    rows = []
    for i, sigma in enumerate(sigmas):
        chunk = results[i * len(Ns):(i + 1) * len(Ns)]
        gains = [-10 * math.log10(math.sqrt(N / f)) if f > 0 else -math.inf for N, (_, f) in zip(Ns, chunk)]
        finite = [(N, g) for N, g in zip(Ns, gains) if math.isfinite(g)]
        alpha = fit_alpha(*zip(*finite)) if finite else math.nan
        for N, (theta, f), g in zip(Ns, chunk, gains):
            rows.append([N, sigma, theta, f, g, alpha])
    comments = ["theta = pi/(2N); alpha from g = -10 log10(alpha/sqrt(N)); alpha = 1 is Heisenberg scaling"]
    return Table(["N", "sigma", "theta", "cfi", "gain_db", "alpha"], rows, comments)


def _bayes_cell(state, measurement, nu, sequences, seed, grid, n_particles, item):
    index, theta_true = item
    stats = run_sequences(state, theta_true, measurement, nu, sequences, seed, grid=grid, cell=index)
    fisher = float(cfi_scan(state, [theta_true], measurement)[0])
    crb = 1 / math.sqrt(nu * fisher)
    scale = math.sqrt(nu * n_particles)
    return [theta_true, nu, sequences, stats.mean_estimate, stats.std_estimate,
            stats.mean_ci_halfwidth, crb, stats.std_estimate * scale, crb * scale]


def run_bayes_sim(cfg: dict) -> Table:
    state = build_state(cfg["state"])
    try:
        measurement = Measurement.parse(cfg["measurement"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    nu, sequences = int(cfg["nu"]), int(cfg["sequences"])
    if nu < 1 or sequences < 1:
        raise ConfigError("nu and sequences must be >= 1")
    grid = PhaseGrid(0.0, math.pi, int(cfg["grid_points"]))
    thetas = [_as_float(t, "thetas_true") for t in cfg["thetas_true"]]
    cell = partial(_bayes_cell, state, measurement, nu, sequences, int(cfg["seed"]), grid,
                   mean_particle_number(state))
    rows = _parallel_map(cell, list(enumerate(thetas)), int(cfg.get("workers", 1)))
    columns = ["theta_true", "nu", "sequences", "mean_estimate", "std_estimate", "mean_ci_halfwidth",
               "crb_prediction", "std_normalized", "crb_normalized"]
    comments = ["std_estimate is nan when sequences == 1; *_normalized multiply by sqrt(nu N)"]
    return Table(columns, rows, comments)


def husimi_stages(cfg: dict) -> dict:
    """Initial coherent state, prepared squeezed state, and state after R_x(theta), all in the z frame."""
    spec = dict(cfg["state"])
    spec["frame"] = "z"
    prepared = build_state(spec)
    if isinstance(prepared, MixedSectorState) or len(prepared.sectors) != 1:
        raise ConfigError("husimi needs a single-sector state")
    theta = _as_float(cfg["husimi"].get("theta", math.pi / 4), "husimi.theta")
    return {
        "a": coherent_spin_state(prepared.sector, 0.0),
        "b": prepared,
        "c": ramsey_rotate(prepared, theta),
    }


def run_husimi(cfg: dict) -> Table:
    n_polar = int(cfg["husimi"]["n_polar"])
    n_azimuth = int(cfg["husimi"]["n_azimuth"])
    if n_polar < 2 or n_azimuth < 1:
        raise ConfigError("husimi grid needs n_polar >= 2 and n_azimuth >= 1")
    polar = np.linspace(0, math.pi, n_polar)
    azimuth = np.linspace(0, 2 * math.pi, n_azimuth, endpoint=False)
    rows = []
    for stage, state in husimi_stages(cfg).items():
        q = husimi(state, polar, azimuth)
        for i, t in enumerate(polar):
            for k, f in enumerate(azimuth):
                rows.append([stage, float(t), float(f), float(q[i, k])])
    return Table(["stage", "polar", "azimuth", "Q"], rows, [f"grid={n_polar}x{n_azimuth}"])


RUNNERS = {
    "table1": run_table1,
    "fisher-scan": run_fisher_scan,
    "noise-scan": run_noise_scan,
    "gain-vs-n": run_gain_vs_n,
    "bayes-sim": run_bayes_sim,
    "husimi": run_husimi,
}


def run(experiment: str, config: dict | None = None) -> tuple[dict, Table]:
    cfg = resolve_config(experiment, config)
    table = RUNNERS[experiment](cfg)
    table.comments = header(cfg) + table.comments
    return cfg, table
