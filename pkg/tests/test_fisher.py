import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcrb.fisher import (
    ENDPOINTS,
    INAPPLICABLE,
    PD,
    SOP,
    TOP,
    WHOLE_INTERVAL,
    Measurement,
    OutcomeDistribution,
    SingularPhaseError,
    cfi,
    cfi_limit,
    cfi_limit_numeric,
    cfi_scan,
    check_cauchy_schwarz,
    fisher_sum,
    husimi,
    husimi_anisotropy,
    husimi_normalization,
    optimality_table,
    outcome_distribution,
    outcome_table,
    qfi,
    sensitivity,
)
from qcrb.interferometer import frame_to_x, probe_from_input
from qcrb.spin import Sector, angular_momentum, beam_splitter
from qcrb.states import (
    SectoredState,
    coherent_spin_state,
    dicke_state,
    noon_state,
    oat_state,
    phase_average,
    tact_optimal_time,
    tact_state,
    twin_fock_probe,
)

from conftest import random_multi_sector, random_symmetric_state, random_symmetric_vector, sop_fixture


def tact_probe(N):
    return frame_to_x(tact_state(N, tact_optimal_time(N)))


def oat_probe(N):
    return frame_to_x(oat_state(N, 1 / math.sqrt(N)))


def dense_variance_qfi(state):
    total, first = 0.0, 0.0
    for tj, v in state.blocks:
        jz = angular_momentum(tj, "z")
        total += np.vdot(v, jz @ jz @ v).real
        first += np.vdot(v, jz @ v).real
    return 4 * (total - first**2)


# --------------------------------------------------------------------------
# measurements and distributions


def test_measurement_parse():
    assert Measurement.parse("top") == TOP
    m = Measurement.parse("NoisyPD:0.7")
    assert m.kind == "NoisyPD" and m.sigma == 0.7
    assert str(m) == "NoisyPD:0.7"
    assert Measurement.pd_with_noise(0) == PD
    with pytest.raises(ValueError):
        Measurement("NoisyPD", 0.0)
    with pytest.raises(ValueError):
        Measurement("PD", 0.3)
    with pytest.raises(ValueError):
        Measurement.parse("XYZ")


def test_distribution_validation():
    with pytest.raises(ValueError):
        OutcomeDistribution((0, 1), [0.5, 0.6], [0, 0], 0.0, PD)
    with pytest.raises(ValueError):
        OutcomeDistribution((0, 1), [0.5, 0.5], [0.1, 0.1], 0.0, PD)


def test_theta_zero_gives_input_populations(rng):
    # distributions take the probe B|in>; at theta = 0 the output is B^T B |in> = |in>
    psi_in = random_multi_sector(rng, real=False)
    dist = outcome_distribution(probe_from_input(psi_in), 0.0, TOP)
    expected = np.concatenate([np.abs(v) ** 2 for _, v in psi_in.blocks])
    assert np.allclose(dist.probs, expected, atol=1e-13)


def test_tact_pd_outcomes():
    psi = tact_probe(10)
    for k in range(1, 10):
        dist = outcome_distribution(psi, k * math.pi / 20, PD)
        assert dist.labels == tuple(float(m) for m in range(-5, 6))
        assert dist.probs.sum() == pytest.approx(1, abs=1e-12)


def test_top_labels_and_sop_grouping():
    psi = sop_fixture()
    labels, p, _ = outcome_table(psi, [0.4], TOP)
    assert len(labels) == 3 + 5
    assert all(nc + nd in (2, 4) for nc, nd in labels)
    sop_labels, sp, _ = outcome_table(psi, [0.4], SOP)
    assert sop_labels == (0, 1, 2, 3, 4)
    for c in sop_labels:
        assert sp[0, sop_labels.index(c)] == pytest.approx(sum(p[0, k] for k, l in enumerate(labels) if l[0] == c))


def test_pd_rejects_multi_sector():
    with pytest.raises(ValueError):
        outcome_distribution(sop_fixture(), 0.3, PD)


@pytest.mark.parametrize("twice_j", range(1, 11))
def test_direct_amplitudes_match_cos_sin_form(twice_j, rng):
    # closed-form TOP probabilities for a symmetric sector, with the nu = 0
    # term counted once: eps_0 = 1, eps_nu = 2 otherwise
    sector = Sector(twice_j)
    c = random_symmetric_vector(rng, twice_j)
    d = beam_splitter(twice_j)
    m = sector.m
    upper = m >= 0
    eps = np.where(m == 0, 1.0, 2.0)
    theta = 0.7
    probs = []
    for k, mu in enumerate(m):
        f = np.cos if round(sector.j - mu) % 2 == 0 else np.sin
        probs.append(abs(np.sum((eps * c * f(m * theta) * d[:, k])[upper])) ** 2)
    dist = outcome_distribution(SectoredState.single(twice_j, c), theta, TOP)
    assert np.abs(np.array(probs) - dist.probs).max() < 1e-12
    if twice_j % 2 == 0:
        # a weight of 2 on nu = 0 breaks normalization whenever C_0 != 0
        doubled = []
        for k, mu in enumerate(m):
            f = np.cos if round(sector.j - mu) % 2 == 0 else np.sin
            doubled.append(abs(np.sum((2 * c * f(m * theta) * d[:, k])[upper])) ** 2)
        assert abs(sum(doubled) - 1) > 1e-6


def test_noisy_pd_small_sigma_reproduces_pd():
    psi = tact_probe(8)
    pd = outcome_distribution(psi, 0.6, PD)
    noisy = outcome_distribution(psi, 0.6, Measurement("NoisyPD", 1e-3))
    lookup = dict(zip(noisy.labels, noisy.probs))
    for label, p in zip(pd.labels, pd.probs):
        assert lookup[label] == pytest.approx(p, abs=1e-8)
    assert noisy.probs.sum() == pytest.approx(1, abs=1e-12)


def test_noisy_pd_lattice_padding():
    labels, _, _ = outcome_table(tact_probe(6), [0.3], Measurement("NoisyPD", 0.7))
    assert labels[0] == -3 - 5 and labels[-1] == 3 + 5


# --------------------------------------------------------------------------
# derivatives and Fisher information


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    theta=st.floats(0.05, math.pi - 0.05),
    kind=st.sampled_from(["TOP", "SOP", "PD", "NoisyPD:0.5"]),
)
def test_derivative_matches_central_difference(seed, theta, kind):
    rng = np.random.default_rng(seed)
    multi = kind in ("TOP", "SOP") and rng.random() < 0.5
    psi = random_multi_sector(rng, real=False) if multi else random_symmetric_state(rng, 16, real=False)
    h = 1e-5
    _, p, dp = outcome_table(psi, [theta - h, theta, theta + h], kind)
    assert np.abs(dp[1] - (p[2] - p[0]) / (2 * h)).max() < 1e-6


@pytest.mark.parametrize("N", [2, 5, 12])
def test_qfi_examples(N):
    assert qfi(noon_state(N)) == pytest.approx(N**2)
    assert qfi(coherent_spin_state(N, math.pi / 2)) == pytest.approx(N)


def test_qfi_variance_flag():
    psi = dicke_state(4, 1)
    with pytest.raises(ValueError):
        qfi(psi)
    assert qfi(psi, variance=True) == pytest.approx(0, abs=1e-14)
    css = coherent_spin_state(6, 1.0, 0.4)
    assert qfi(css, variance=True) == pytest.approx(dense_variance_qfi(css))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_qfi_closed_form_matches_variance(seed):
    psi = random_symmetric_state(np.random.default_rng(seed), real=bool(seed % 2))
    assert qfi(psi) == pytest.approx(dense_variance_qfi(psi), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), theta=st.floats(0.02, math.pi - 0.02))
def test_qcrb_and_measurement_ordering(seed, theta):
    rng = np.random.default_rng(seed)
    psi = random_multi_sector(rng, n_sectors=int(rng.integers(1, 4)), real=bool(seed % 2))
    bound = qfi(psi) * (1 + 1e-8) + 1e-10
    top = cfi(psi, theta, TOP).cfi
    sop = cfi(psi, theta, SOP).cfi
    assert top <= bound
    assert sop <= top * (1 + 1e-9) + 1e-10
    if len(psi.sectors) == 1:
        assert cfi(psi, theta, PD).cfi == pytest.approx(top, rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), theta=st.floats(0.02, math.pi - 0.02))
def test_noise_never_helps(seed, theta):
    psi = random_symmetric_state(np.random.default_rng(seed), 20)
    values = [cfi(psi, theta, Measurement.pd_with_noise(s)).cfi for s in (0, 0.3, 0.7, 1.5)]
    assert all(b <= a * (1 + 1e-9) + 1e-10 for a, b in zip(values, values[1:]))


def test_tact_top_equals_qfi():
    psi = tact_probe(10)
    quantum = qfi(psi)
    thetas = np.linspace(0, math.pi, 181)[1:-1]
    assert np.abs(cfi_scan(psi, thetas, TOP) - quantum).max() <= 1e-8 * quantum


@pytest.mark.parametrize("N", [3, 10, 25])
def test_css_pd_gives_shot_noise(N):
    psi = coherent_spin_state(N, math.pi / 2)
    values = cfi_scan(psi, np.linspace(0.1, 3.0, 9), PD)
    assert np.allclose(values, N, rtol=1e-9)


def test_sop_below_top_for_multi_sector():
    psi = sop_fixture()
    assert cfi(psi, math.pi / 4, SOP).cfi < cfi(psi, math.pi / 4, TOP).cfi - 1e-3 * qfi(psi)


def test_fisher_sum_dead_outcomes():
    assert fisher_sum([0.0, 1.0], [0.0, 0.0]) == 0.0
    assert fisher_sum([0.5, 0.5], [0.5, -0.5]) == pytest.approx(1.0)
    with pytest.raises(SingularPhaseError):
        fisher_sum([0.0, 1.0], [0.1, -0.1])


def test_fisher_report_fields():
    rep = cfi(tact_probe(6), 0.5, "TOP")
    assert rep.measurement == TOP and rep.theta == 0.5
    assert rep.cfi == pytest.approx(rep.qfi, rel=1e-9)


# --------------------------------------------------------------------------
# endpoint limits


def test_cfi_limit_examples():
    oat = oat_probe(10)
    assert cfi_limit(oat, 0, TOP) == pytest.approx(qfi(oat))
    for N in (3, 8):
        assert cfi_limit(noon_state(N), math.pi, SOP) == pytest.approx(N**2)
    with pytest.raises(ValueError):
        cfi_limit(oat, 1.0, TOP)
    with pytest.raises(ValueError):
        cfi_limit(dicke_state(4, 1), 0, TOP)


@pytest.mark.parametrize("end", [0.0, math.pi])
@pytest.mark.parametrize("kind", ["TOP", "SOP", "PD"])
def test_richardson_matches_closed_form(end, kind):
    for psi in (tact_probe(10), oat_probe(10), twin_fock_probe(8)):
        closed = cfi_limit(psi, end, kind)
        assert cfi_limit_numeric(psi, end, kind) == pytest.approx(closed, rel=1e-4)


def test_sop_limit_mixed_parity_is_numeric():
    # sectors of different particle-number parity: SOP loses information even at theta -> 0
    psi = random_multi_sector(np.random.default_rng(5), n_sectors=2, max_twice_j=3)
    parities = {s.twice_j % 2 for s in psi.sectors}
    if len(parities) == 1:
        pytest.skip("fixture drew same-parity sectors")
    limit = cfi_limit(psi, 0.0, SOP)
    assert limit == pytest.approx(cfi_limit_numeric(psi, 0.0, SOP))
    assert limit < qfi(psi) * 0.99


def test_noisy_limit_is_direct():
    psi = tact_probe(10)
    m = Measurement("NoisyPD", 0.7)
    assert cfi_limit(psi, 0.0, m) == pytest.approx(cfi(psi, 0.0, m).cfi)
    assert cfi_limit(psi, 0.0, m) < qfi(psi)


# --------------------------------------------------------------------------
# Cauchy-Schwarz condition and optimality table


def test_cauchy_schwarz_fixed_number():
    psi = tact_probe(8)
    for theta in (0.2, 1.0, 2.5):
        rep = check_cauchy_schwarz(psi, theta)
        assert rep.equality_gap < 1e-10 * rep.top_cfi
        assert rep.sop_cfi == pytest.approx(rep.top_cfi, rel=1e-10)


def test_cauchy_schwarz_multi_sector():
    psi = sop_fixture()
    rep = check_cauchy_schwarz(psi, math.pi / 4)
    assert rep.equality_gap > 1e-3
    assert rep.equality_gap == pytest.approx(rep.top_cfi - rep.sop_cfi, rel=1e-8)
    near = check_cauchy_schwarz(psi, 1e-3)
    assert near.equality_gap < 1e-4


def conditions(rows):
    return {r.measurement: r for r in rows}


def test_optimality_tact():
    rows = conditions(optimality_table(tact_probe(10)))
    assert rows["TOP"].table1_condition == WHOLE_INTERVAL
    assert rows["PD"].table1_condition == WHOLE_INTERVAL
    assert rows["SOP"].table1_condition == ENDPOINTS
    assert rows["TOP"].phase_condition == WHOLE_INTERVAL
    assert rows["PD"].phase_condition == WHOLE_INTERVAL
    # with a definite particle number SOP already fixes n_d, so it matches TOP
    assert rows["SOP"].phase_condition == WHOLE_INTERVAL
    assert all(r.attains_qcrb for r in rows.values())


def test_optimality_oat():
    rows = conditions(optimality_table(oat_probe(10)))
    for name in ("SOP", "TOP", "PD"):
        assert rows[name].table1_condition == ENDPOINTS
        assert rows[name].phase_condition == ENDPOINTS


def test_optimality_multi_sector_and_phase_average():
    psi = sop_fixture()
    rows = conditions(optimality_table(psi))
    assert rows["PD"].phase_condition == INAPPLICABLE
    assert rows["TOP"].phase_condition == WHOLE_INTERVAL
    assert rows["SOP"].phase_condition == ENDPOINTS
    averaged = conditions(optimality_table(phase_average(psi)))
    for name in ("SOP", "TOP"):
        assert averaged[name].phase_condition == rows[name].phase_condition
        assert averaged[name].table1_condition == rows[name].table1_condition


def test_optimality_asymmetric_state():
    rows = conditions(optimality_table(SectoredState.single(2, np.array([0.6, 0.0, 0.8]))))
    assert rows["TOP"].table1_condition == "none"


# --------------------------------------------------------------------------
# sensitivity


def test_sensitivity_examples():
    assert sensitivity(50, 1, 50).gain_db == pytest.approx(0, abs=1e-12)
    s = sensitivity(400, 1, 20)
    assert s.gain_db == pytest.approx(10 * math.log10(math.sqrt(20)))
    assert sensitivity(100, 4, 10).delta_theta == pytest.approx(0.05)
    with pytest.raises(ValueError):
        sensitivity(0, 1, 1)


def test_noisy_sensitivity_oscillates_with_period_pi_over_n():
    N = 20
    psi = tact_probe(N)
    thetas = np.linspace(0.3, math.pi - 0.3, 1024)
    delta = 1 / np.sqrt(cfi_scan(psi, thetas, Measurement("NoisyPD", 0.3)))
    spectrum = np.abs(np.fft.rfft((delta - delta.mean()) * np.hanning(delta.size)))
    freqs = np.fft.rfftfreq(delta.size, thetas[1] - thetas[0])
    k = 1 + int(np.argmax(spectrum[1:]))
    period = 1 / freqs[k]
    assert period == pytest.approx(math.pi / N, rel=0.2)


# --------------------------------------------------------------------------
# Husimi distribution


def sphere_grid(n_polar=91, n_azimuth=180):
    return np.linspace(0, math.pi, n_polar), np.linspace(0, 2 * math.pi, n_azimuth, endpoint=False)


def test_husimi_pole():
    polar, azimuth = sphere_grid()
    q = husimi(dicke_state(20, 10), polar, azimuth)
    assert np.unravel_index(np.argmax(q), q.shape)[0] == 0
    assert q.max() == pytest.approx(1)


@pytest.mark.parametrize("state", [dicke_state(20, 10), tact_state(12, 0.2), dicke_state(9, 0.5)])
def test_husimi_normalization(state):
    polar, azimuth = sphere_grid(181, 180)
    q = husimi(state, polar, azimuth)
    assert husimi_normalization(q, polar, azimuth, state.sector.dim) == pytest.approx(1, abs=1e-3)


def test_husimi_squeezed_profile():
    polar, azimuth = sphere_grid(121, 240)
    css = husimi(dicke_state(60, 30), polar, azimuth)
    squeezed = husimi(tact_state(60, tact_optimal_time(60)), polar, azimuth)
    assert husimi_anisotropy(css, polar, azimuth) == pytest.approx(1, abs=0.05)
    assert husimi_anisotropy(squeezed, polar, azimuth) > 2


def test_husimi_rejects_multi_sector():
    with pytest.raises(ValueError):
        husimi(sop_fixture(), [0.0], [0.0])
