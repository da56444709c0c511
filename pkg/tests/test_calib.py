import math

import numpy as np
import pytest

from tikreco.calib import (
    CalibrationSet,
    FrequencyIndexSet,
    TimeSignal,
    assemble_system_matrix,
    background_correct,
    band_pass_indices,
    load_calibration,
    normalize_operator,
    project_signal,
    rows_for_target,
    save_calibration,
    select_rows,
    snr_measure,
    stack_signals,
)

from oracles import dft_coefficient, singular_values, tikhonov_normal_eq


def basis_signal(j, period, ns, amplitude=1.0):
    t = np.arange(ns) * period / ns
    return amplitude * (period**-0.5) * (-1) ** abs(j) * np.exp(2j * np.pi * j * t / period)


# --- projection -------------------------------------------------------------

def test_dc_projection_of_constant():
    period, ns, c = 0.4, 32, 2.5
    sig = TimeSignal(samples=np.full(ns, c), period=period)
    (coeff,) = project_signal(sig, [0])
    assert coeff == pytest.approx(c * math.sqrt(period), abs=1e-13)
    assert abs(coeff.imag) < 1e-13


def test_orthonormality_against_quadrature_oracle():
    period, ns = 0.7, 64
    sig = TimeSignal(samples=basis_signal(5, period, ns).real, period=period)
    c5, c3 = project_signal(sig, [5, 3])
    assert abs(c5 - 0.5) < 1e-12
    assert abs(c3) < 1e-12
    # FFT path equals the direct-sum oracle on an arbitrary signal
    rng = np.random.default_rng(1)
    samples = rng.standard_normal(ns)
    sig2 = TimeSignal(samples=samples, period=period)
    for j in (-7, -1, 0, 2, 11):
        expected = dft_coefficient(samples, period, j)
        (got,) = project_signal(sig2, [j])
        assert abs(got - expected) < 1e-12


def test_zero_signal_projects_to_zero():
    sig = TimeSignal(samples=np.zeros(16), period=1.0)
    coeffs = project_signal(sig, [-3, 0, 5])
    assert np.all(coeffs == 0)


def test_unresolvable_index_rejected():
    sig = TimeSignal(samples=np.zeros(16), period=1.0)
    with pytest.raises(ValueError, match="unresolvable"):
        project_signal(sig, [8])


def test_projection_linearity():
    period, ns = 1.3, 32
    rng = np.random.default_rng(2)
    v, w = rng.standard_normal(ns), rng.standard_normal(ns)
    a, b = 0.7, -2.2
    idx = [-5, 1, 4]
    lhs = project_signal(TimeSignal(a * v + b * w, period), idx)
    rhs = a * project_signal(TimeSignal(v, period), idx) + b * project_signal(
        TimeSignal(w, period), idx
    )
    assert np.abs(lhs - rhs).max() < 1e-12


# --- assembly and background ------------------------------------------------

def _tiny_cal(m=1, L=1, ns=16, period=1.0, ke=2, g=1, c0=1.0, seed=0):
    rng = np.random.default_rng(seed)
    signals = rng.standard_normal((m, L, ns))
    empty = rng.standard_normal((ke, L, ns))
    return CalibrationSet(signals=signals, empty_scans=empty, period=period,
                          schedule=g, c0=c0)


def test_background_only_sample_gives_zero_column():
    cal = _tiny_cal(m=1, L=1, ke=2, seed=3)
    # both empty scans identical, and the calibration scan equals that background
    cal.empty_scans[1] = cal.empty_scans[0]
    cal.signals[0, 0] = cal.empty_scans[0, 0]
    idx = FrequencyIndexSet(per_coil=(np.array([1, 2]),))
    S, v0 = assemble_system_matrix(cal, idx)
    assert np.abs(S[:, 0] - v0).max() < 1e-14
    A = S - np.outer(v0, np.ones(1))
    assert np.abs(A).max() < 1e-14


def test_single_index_column_matches_projection():
    cal = _tiny_cal(m=1, L=1, ns=32, c0=2.0, seed=4)
    idx = FrequencyIndexSet(per_coil=(np.array([3]),))
    S, _ = assemble_system_matrix(cal, idx)
    assert S.shape == (2, 1)
    (coeff,) = project_signal(TimeSignal(cal.signals[0, 0], cal.period), [3])
    assert S[0, 0] == pytest.approx(coeff.real / 2.0, abs=1e-14)
    assert S[1, 0] == pytest.approx(coeff.imag / 2.0, abs=1e-14)


def test_row_ordering_two_coils():
    cal = _tiny_cal(m=1, L=2, ns=32, seed=5)
    idx = FrequencyIndexSet(per_coil=(np.array([2]), np.array([5])))
    S, _ = assemble_system_matrix(cal, idx)
    c1 = project_signal(TimeSignal(cal.signals[0, 0], cal.period), [2])[0]
    c2 = project_signal(TimeSignal(cal.signals[0, 1], cal.period), [5])[0]
    expected = np.array([c1.real, c1.imag, c2.real, c2.imag])
    assert np.abs(S[:, 0] - expected).max() < 1e-14


def test_assembly_linear_in_signals():
    cal_a = _tiny_cal(m=2, L=1, ns=32, seed=20)
    cal_b = _tiny_cal(m=2, L=1, ns=32, seed=21)
    cal_b.empty_scans = cal_a.empty_scans  # same background, different scans
    a, b = 0.6, -1.7
    mixed = CalibrationSet(
        signals=a * cal_a.signals + b * cal_b.signals,
        empty_scans=cal_a.empty_scans,
        period=cal_a.period,
    )
    idx = FrequencyIndexSet(per_coil=(np.array([1, 4, 7]),))
    S_mixed, v0 = assemble_system_matrix(mixed, idx)
    S_a, _ = assemble_system_matrix(cal_a, idx)
    S_b, _ = assemble_system_matrix(cal_b, idx)
    assert np.abs(S_mixed - (a * S_a + b * S_b)).max() < 1e-12


def test_background_correct_elementwise():
    rng = np.random.default_rng(6)
    S = rng.standard_normal((5, 3))
    v0 = rng.standard_normal(5)
    v = rng.standard_normal(5)
    A, y = background_correct(S, v0, v)
    for i in range(5):
        for j in range(3):
            assert A[i, j] == S[i, j] - v0[i]
        assert y[i] == v[i] - v0[i]
    # v = v0 gives zero data; repeated correction with zero background stays put
    _, y0 = background_correct(S, v0, v0)
    assert not y0.any()
    A2, y2 = background_correct(A, np.zeros(5), y)
    assert np.array_equal(A2, A) and np.array_equal(y2, y)


def test_background_correct_dim_mismatch():
    with pytest.raises(ValueError):
        background_correct(np.zeros((4, 2)), np.zeros(3), np.zeros(4))


# --- band-pass and quality selection -----------------------------------------

def test_band_pass_no_op_band():
    assert band_pass_indices(0.0, math.inf, 1.0, 3).tolist() == [-3, -2, -1, 0, 1, 2, 3]


def test_band_pass_window():
    assert band_pass_indices(2.0, 4.0, 1.0, 10).tolist() == [-4, -3, -2, 2, 3, 4]


def test_band_pass_measured_band_limits():
    # 80 kHz..625 kHz at a 40 kHz line spacing keeps |j| in 2..15
    period = 1.0 / 40e3
    got = band_pass_indices(80e3, 625e3, period, 20).tolist()
    expected = [j for j in range(-20, 21) if 2 <= abs(j) <= 15]
    assert got == expected


def test_band_pass_invalid_limits():
    with pytest.raises(ValueError):
        band_pass_indices(5.0, 5.0, 1.0, 3)


def _snr_cal(seed=0):
    # G=2, K_e=3, m=4: blocks (0,1)->empty 0/1, (2,3)->empty 1/2
    rng = np.random.default_rng(seed)
    ns, L = 32, 1
    empty = rng.standard_normal((3, L, ns))
    signals = rng.standard_normal((4, L, ns))
    return CalibrationSet(signals=signals, empty_scans=empty, period=1.0,
                          schedule=2, c0=1.0)


def test_snr_measure_matches_direct_formula():
    cal = _snr_cal(seed=8)
    candidates = [1, 3, 6]
    d = snr_measure(cal, candidates)
    kappas = [1.0, 0.5, 1.0, 0.5]
    blocks = [0, 0, 1, 1]
    mean_empty = cal.empty_scans.mean(axis=0)
    for pos, j in enumerate(candidates):
        num = 0.0
        for i in range(4):
            interp = (
                kappas[i] * cal.empty_scans[blocks[i], 0]
                + (1 - kappas[i]) * cal.empty_scans[blocks[i] + 1, 0]
            )
            num += abs(dft_coefficient(cal.signals[i, 0] - interp, 1.0, j))
        num /= 4
        den = 0.0
        for k in range(3):
            den += abs(dft_coefficient(cal.empty_scans[k, 0] - mean_empty[0], 1.0, j))
        den /= 3
        assert d.values[0, pos] == pytest.approx(num / den, rel=1e-12)


def test_snr_zero_numerator():
    cal = _snr_cal(seed=9)
    # every calibration scan equals its interpolated background exactly
    kappas = [1.0, 0.5, 1.0, 0.5]
    blocks = [0, 0, 1, 1]
    for i in range(4):
        cal.signals[i, 0] = (
            kappas[i] * cal.empty_scans[blocks[i], 0]
            + (1 - kappas[i]) * cal.empty_scans[blocks[i] + 1, 0]
        )
    d = snr_measure(cal, [1, 2])
    assert np.abs(d.values).max() < 1e-12


def test_snr_degenerate_denominator_is_inf_with_warning():
    rng = np.random.default_rng(10)
    ns = 16
    empty = np.tile(rng.standard_normal((1, 1, ns)), (2, 1, 1))  # identical scans
    signals = rng.standard_normal((1, 1, ns))
    cal = CalibrationSet(signals=signals, empty_scans=empty, period=1.0, schedule=1)
    with pytest.warns(UserWarning, match="zero background"):
        d = snr_measure(cal, [1])
    assert np.isposinf(d.values[0, 0])
    assert d.degenerate == [(0, 1)]


def test_snr_schedule_consistency_check():
    cal = _snr_cal()
    cal.schedule = 4  # 4 scans in one block would need empty scan index 1
    # still fine: (4-1)//4 = 0 -> needs 2 empty scans, we have 3
    snr_measure(cal, [1])
    bad = CalibrationSet(
        signals=np.zeros((9, 1, 16)) + 1.0,
        empty_scans=np.ones((2, 1, 16)),
        period=1.0,
        schedule=2,
    )  # (9-1)//2 = 4 -> needs 6 empty scans
    with pytest.raises(ValueError, match="schedule inconsistent"):
        snr_measure(bad, [1])


def test_select_rows_threshold_cases():
    cal = _snr_cal(seed=11)
    band = [1, 2, 3]
    d = snr_measure(cal, band)
    idx0, mask0 = select_rows(d, band, 0.0)
    assert idx0.per_coil[0].tolist() == band
    assert mask0.all() and mask0.size == 6
    assert idx0.n_rows == 6  # row-count identity n = sum 2|J_l|
    _, mask_inf = select_rows(d, band, np.inf)
    assert not mask_inf.any()
    # explicit filter: d = {1, 5, 3} on band {1,2,3}, tau = 3 -> keep {2, 3}
    d.values = np.array([[1.0, 5.0, 3.0]])
    idx, mask = select_rows(d, band, 3.0)
    assert idx.per_coil[0].tolist() == [2, 3]
    assert mask.tolist() == [False, False, True, True, True, True]


def test_select_rows_monotone_in_threshold():
    cal = _snr_cal(seed=12)
    band = [1, 2, 3, 5]
    d = snr_measure(cal, band)
    taus = np.sort(d.values.ravel())
    prev = None
    for tau in list(taus) + [float(taus[-1]) * 2]:
        _, mask = select_rows(d, band, float(tau))
        if prev is not None:
            assert np.all(mask <= prev)  # mask shrinks as tau grows
        prev = mask


def test_rows_for_target_full_and_max():
    cal = _snr_cal(seed=13)
    band = [1, 2, 3]
    d = snr_measure(cal, band)
    tau, mask = rows_for_target(d, band, 6)
    assert mask.all()
    assert tau <= d.values.min()
    tau2, mask2 = rows_for_target(d, band, 2)
    keep_pos = np.argmax(d.values[0])
    assert mask2.sum() == 2
    assert mask2[2 * keep_pos] and mask2[2 * keep_pos + 1]
    assert tau2 == d.values.max()


def test_rows_for_target_tie_break_lexicographic():
    d_vals = np.array([[2.0, 5.0, 5.0], [5.0, 1.0, 0.5]])  # ties at 5 across coils
    cal = _snr_cal(seed=14)
    d = snr_measure(cal, [1, 2, 3])
    d.values = d_vals
    tau, mask = rows_for_target(d, [1, 2, 3], 4)
    # three entries tie at d = 5; lexicographic (coil, index) keeps
    # (0, 2) then (0, 3), dropping (1, 1)
    assert tau == 5.0
    assert mask.reshape(2, 3, 2).any(axis=2).tolist() == [
        [False, True, True],
        [False, False, False],
    ]


def test_rows_for_target_odd_rejected():
    cal = _snr_cal(seed=15)
    d = snr_measure(cal, [1, 2])
    with pytest.raises(ValueError, match="even"):
        rows_for_target(d, [1, 2], 3)


# --- operator normalization ---------------------------------------------------

def test_normalize_scaled_identity():
    A = 3.0 * np.eye(4)
    A2, y2, s = normalize_operator(A, np.ones(4))
    assert s == pytest.approx(3.0, abs=1e-12)
    assert np.abs(A2 - np.eye(4)).max() < 1e-12


def test_normalize_rank_one_closed_form():
    rng = np.random.default_rng(16)
    u = rng.standard_normal(6)
    u *= 2.0 / np.linalg.norm(u)
    v = rng.standard_normal(4)
    v *= 5.0 / np.linalg.norm(v)
    A = np.outer(u, v)
    _, _, s = normalize_operator(A, np.zeros(6))
    assert s == pytest.approx(10.0, abs=1e-8)


def test_normalize_matches_svd_oracle():
    rng = np.random.default_rng(17)
    A = rng.standard_normal((20, 10))
    y = rng.standard_normal(20)
    A2, y2, s = normalize_operator(A, y)
    assert s == pytest.approx(singular_values(A)[0], abs=1e-8)
    assert abs(singular_values(A2)[0] - 1.0) < 1e-6
    assert np.abs(A2 * s - A).max() < 1e-12
    assert np.abs(y2 * s - y).max() < 1e-12


def test_normalize_rejects_zero():
    with pytest.raises(ValueError):
        normalize_operator(np.zeros((3, 3)), np.zeros(3))


def test_normalization_maps_argmin_consistently():
    # (A, y, a) -> (A/s, y/s, a/s^2) leaves the regularized minimizer fixed
    rng = np.random.default_rng(18)
    A = rng.standard_normal((12, 6))
    y = rng.standard_normal(12)
    A2, y2, s = normalize_operator(A, y)
    for alpha in (1e-3, 1e-1, 10.0):
        x1 = tikhonov_normal_eq(A, y, alpha)
        x2 = tikhonov_normal_eq(A2, y2, alpha / s**2)
        assert np.abs(x1 - x2).max() < 1e-10


# --- calibration persistence ---------------------------------------------------

def test_calibration_directory_round_trip(tmp_path):
    cal = _snr_cal(seed=19)
    save_calibration(tmp_path / "cal", cal)
    back = load_calibration(tmp_path / "cal")
    assert np.array_equal(back.signals, cal.signals)
    assert np.array_equal(back.empty_scans, cal.empty_scans)
    assert back.period == cal.period
    assert back.schedule == cal.schedule
    assert back.c0 == cal.c0


def test_stack_signals_coil_count_mismatch():
    idx = FrequencyIndexSet(per_coil=(np.array([1]),))
    with pytest.raises(ValueError, match="coils"):
        stack_signals(np.zeros((2, 16)), 1.0, idx)
