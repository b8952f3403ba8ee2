import math
import warnings

import numpy as np
import pytest

from chanadd import channels as ch
from chanadd import markovianity as mk
from chanadd.channels import ChannelModel
from chanadd.linalg import SingularMatrixError, eigvalsh
from chanadd.markovianity import GbarPoint, TraceDistancePoint, UnsortedSeriesError
import oracles

A = (1 + math.exp(-1.5)) / (1 + math.exp(-1))
B = math.exp(-0.5)
LAMBDA_A_TOTAL = (1 - 2 * A + B) / 4


def F(scenario, member, t):
    return ch.ideal_transfer(ChannelModel(scenario, member), t)


def test_frozen_reference_values():
    assert A == pytest.approx(0.894179, abs=1e-6)
    assert B == pytest.approx(0.606531, abs=1e-6)
    assert LAMBDA_A_TOTAL == pytest.approx(-0.045457, abs=1e-6)


def test_intermediate_identity():
    Ft = F("caseA", "total", 0.8)
    V = mk.intermediate_map(Ft, Ft)
    np.testing.assert_allclose(V.F_ts, np.eye(4), atol=1e-14)
    assert not V.ill_conditioned


def test_intermediate_case_a_total():
    V = mk.intermediate_map(F("caseA", "total", 1.5), F("caseA", "total", 1.0), s=1.0, t=1.5)
    # Pauli diagonal with Bloch contractions (a, a, b): Z -> b Z, X -> a X
    chi = ch.chi_of_transfer(V.F_ts)
    np.testing.assert_allclose(chi, np.diag(np.diag(chi)), atol=1e-14)
    np.testing.assert_allclose(np.diag(chi).real, oracles.pauli_spectrum(A, A, B), atol=1e-14)
    np.testing.assert_allclose(V.F_ts @ F("caseA", "total", 1.0), F("caseA", "total", 1.5), atol=1e-8 * V.condition_of_Fs)
    assert mk.min_choi_eigenvalue(V) == pytest.approx(LAMBDA_A_TOTAL, abs=1e-12)


def test_intermediate_rejects_backwards_times():
    with pytest.raises(ValueError):
        mk.intermediate_map(np.eye(4), np.eye(4), s=2.0, t=1.0)


def test_case_b_ch2_singular_at_quarter_pi():
    with pytest.raises(SingularMatrixError):
        mk.intermediate_map(F("caseB", "ch2", 1.0), F("caseB", "ch2", np.pi / 4))


def test_ill_conditioned_warns_but_returns():
    s = np.pi / 4 - 1e-9
    with pytest.warns(mk.IllConditionedWarning):
        V = mk.intermediate_map(F("caseB", "ch2", 1.0), F("caseB", "ch2", s))
    assert V.ill_conditioned and V.condition_of_Fs > 1e8


@pytest.mark.parametrize("model", ch.ALL_MODELS, ids=str)
def test_min_eig_matches_pauli_oracle(model):
    rng = np.random.default_rng(ch.ALL_MODELS.index(model))
    checked = 0
    while checked < 50:
        s, t = np.sort(rng.uniform(0, 3.9, size=2))
        Fs = ch.ideal_transfer(model, s)
        if abs(np.linalg.det(Fs)) < 1e-6:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", mk.IllConditionedWarning)
            V = mk.intermediate_map(ch.ideal_transfer(model, t), Fs)
        ref = oracles.intermediate_min_eig(model.scenario.value, model.member.value, s, t)
        assert mk.min_choi_eigenvalue(V) == pytest.approx(ref, abs=1e-10)
        checked += 1


def test_min_eig_full_diagonalisation_cross_check():
    V = mk.intermediate_map(F("caseA", "total", 1.5), F("caseA", "total", 1.0))
    W = ch.choi_of_transfer(V.F_ts)
    assert np.linalg.eigvalsh(W)[0] == pytest.approx(mk.min_choi_eigenvalue(V), abs=1e-14)


def test_case_b_total_is_cp_divisible():
    for s, t in [(0.2, 0.9), (np.pi / 4 + 0.1, 2.0), (1.0, 3.9)]:
        V = mk.intermediate_map(F("caseB", "total", t), F("caseB", "total", s))
        r = math.exp(-(t - s))
        np.testing.assert_allclose(mk.choi_spectrum(V.F_ts), [0, 0, (1 - r) / 2, (1 + r) / 2], atol=1e-12)


def test_g_identity_is_zero():
    assert mk.rhp_g(np.eye(4), np.eye(4), 0.1) == 0.0


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0, 3.0])
def test_g_limit_closed_form(t):
    g = mk.rhp_g(F("caseA", "total", t), F("caseA", "total", t + 1e-6), 1e-6)
    assert g == pytest.approx(0.5 * math.tanh(t / 2), abs=1e-5)


def test_g_limit_by_shrinking_epsilon():
    # numerical limit oracle, independent of the closed form
    vals = [mk.rhp_g(F("caseA", "total", 1.0), F("caseA", "total", 1.0 + e), e) for e in (1e-2, 1e-3, 1e-4, 1e-5)]
    diffs = np.abs(np.diff(vals))
    assert np.all(diffs[1:] < diffs[:-1])
    assert vals[-1] == pytest.approx(0.231059, abs=1e-5)


def test_gbar_values():
    assert mk.gbar(0.0) == 0.0
    # series evaluation x - x^3/3 + 2x^5/15 - 17x^7/315 at x = 0.231059
    assert mk.gbar(0.231059) == pytest.approx(0.227033, abs=1e-6)
    assert 0.9999 < mk.gbar(10.0) < 1.0


@pytest.mark.parametrize("member", ["ch1", "ch2"])
@pytest.mark.parametrize("eps", [1e-3, 0.1, 0.5])
def test_g_vanishes_for_case_a_members(member, eps):
    for t in np.linspace(0, 3, 7):
        raw = mk.rhp_g(F("caseA", member, t), F("caseA", member, t + eps), eps, clamp=False)
        assert abs(raw) <= 1e-10


def test_g_requires_positive_epsilon():
    with pytest.raises(ValueError):
        mk.rhp_g(np.eye(4), np.eye(4), 0.0)


@pytest.mark.parametrize("model", ch.ALL_MODELS, ids=str)
def test_trace_norm_equals_negative_mass(model):
    rng = np.random.default_rng(7)
    for _ in range(30):
        s, t = np.sort(rng.uniform(0, 3.9, size=2))
        Fs = ch.ideal_transfer(model, s)
        if abs(np.linalg.det(Fs)) < 1e-6:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", mk.IllConditionedWarning)
            V = mk.intermediate_map(ch.ideal_transfer(model, t), Fs)
        w = mk.choi_spectrum(V.F_ts)
        assert mk.intermediate_trace_norm(V.F_ts) - 1 == pytest.approx(2 * np.sum(np.abs(w[w < 0])), abs=1e-9)


def test_rhp_measure_conventions():
    zeros = [GbarPoint(t, 0.0, 0.1) for t in (0, 1, 2)]
    assert mk.rhp_measure(zeros) == 0.0
    const = [GbarPoint(t, 0.3, 0.1) for t in np.linspace(0, 2, 5)]
    assert mk.rhp_measure(const) == pytest.approx(0.3)
    with pytest.raises(UnsortedSeriesError):
        mk.rhp_measure([GbarPoint(1.0, 0.1, 0.1), GbarPoint(0.5, 0.1, 0.1)])
    with pytest.raises(ValueError):
        mk.rhp_measure([GbarPoint(0.0, 0.1, 0.1)])


def test_rhp_measure_support():
    # gbar = 0.2 on [1, 2] only; trapezoid counts the half-intervals at both edges
    pts = [GbarPoint(t, 0.2 if 1 <= t <= 2 else 0.0, 0.1) for t in (0.0, 1.0, 2.0, 3.0)]
    assert mk.rhp_measure(pts) == pytest.approx(0.4 / 2.0)


def test_rhp_measure_threshold_sources():
    noisy = [GbarPoint(t, 0.01, 0.1, std=0.05, sem=0.02, n=100) for t in (0, 1, 2)]
    assert mk.rhp_measure(noisy) == 0.0
    assert mk.rhp_measure(noisy, zero_threshold=0.0) == pytest.approx(0.01)


def test_rhp_measure_skips_flagged():
    pts = [GbarPoint(0, 0.1, 0.1), GbarPoint(1, math.nan, 0.1, flagged=True), GbarPoint(2, 0.1, 0.1)]
    assert mk.rhp_measure(pts) == pytest.approx(0.1)


def test_rhp_measure_grid_refinement():
    def series(n):
        ts = np.linspace(0, 3.5, n)
        return [GbarPoint(t, mk.gbar(mk.rhp_g(F("caseA", "total", t), F("caseA", "total", t + 0.1), 0.1)), 0.1) for t in ts]

    coarse = mk.rhp_measure(series(8))
    fine = mk.rhp_measure(series(15))
    assert coarse > 0
    assert abs(fine - coarse) / coarse < 0.05


def test_trace_distance_examples():
    H, V = ch.ket_to_dm(ch.KET_H), ch.ket_to_dm(ch.KET_V)
    assert mk.blp_trace_distance(H, H) == 0.0
    assert mk.blp_trace_distance(H, V) == pytest.approx(1.0)
    mix = ch.pauli_mixing_of(ChannelModel("caseB", "total"), 1.0)
    assert mk.blp_trace_distance(ch.apply(mix, H), ch.apply(mix, V)) == pytest.approx(0.367879, abs=1e-6)


def test_trace_distance_is_half_trace_norm():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b = oracles.random_density(rng, 2), oracles.random_density(rng, 2)
        assert mk.blp_trace_distance(a, b) == pytest.approx(0.5 * oracles.trace_norm_svd(a - b), abs=1e-12)


def test_trace_distance_contracts_under_channels():
    rng = np.random.default_rng(6)
    for _ in range(50):
        a, b = oracles.random_density(rng, 2), oracles.random_density(rng, 2)
        chi, kraus = oracles.random_chi(rng)
        before = mk.blp_trace_distance(a, b)
        after = mk.blp_trace_distance(ch.apply_chi(chi, a), ch.apply_chi(chi, b))
        assert after <= before + 1e-12


def test_blp_measure_examples():
    dec = [TraceDistancePoint(t, math.exp(-t)) for t in range(4)]
    assert mk.blp_measure(dec) == 0.0
    assert mk.blp_measure([TraceDistancePoint(0, 0.0), TraceDistancePoint(1, 1.0)]) == 1.0
    ts = np.linspace(np.pi / 4, np.pi / 2, 9)
    rev = [TraceDistancePoint(t, abs(math.cos(2 * t))) for t in ts]
    assert mk.blp_measure(rev) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(UnsortedSeriesError):
        mk.blp_measure(list(reversed(rev)))


def test_choi_spectrum_batches():
    Fs = np.stack([F("caseA", "total", t) for t in (0.2, 0.4, 0.6)])
    w = mk.choi_spectrum(Fs)
    assert w.shape == (3, 4)
    np.testing.assert_allclose(w[1], eigvalsh(ch.choi_of_transfer(Fs[1])))


def test_numerical_zero_conventions():
    F0 = np.eye(4)
    F1 = np.eye(4)
    F1[0, 0] += 1e-12
    assert mk.rhp_g(F0, F1, 0.1) == 0.0
    assert mk.rhp_g(F0, F1, 0.1, clamp=False) > 0.0
    np.testing.assert_array_equal(mk.is_non_cp([-1e-3, -1e-12, 0.0, 1e-3]), [True, False, False, False])
