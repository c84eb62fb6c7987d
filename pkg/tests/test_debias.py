import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from martingap.debias import (
    band_power, debias, detect_harmonics, fit_harmonic_model, levenberg_marquardt,
    position_bias_r2, residue_smooth, trend_basis,
)
from martingap.errors import DomainError, StructuralError
from martingap.gapstats import GapSeries, fit_scaling

N = np.arange(10, 199, 2)


def synthetic(harmonics=((1, 0.01, 0.0),), A=0.18, noise=0.0, seed=0, n=N, period=64):
    n = np.asarray(n)
    y = A * np.log2(n) / n
    for k, amp, phase in harmonics:
        y = y + amp * np.sin(2 * np.pi * k * n / period + phase)
    if noise:
        y = y + np.random.default_rng(seed).normal(scale=noise, size=n.size)
    return GapSeries.from_values(n, y, count=100)


def _phase_close(a, b, tol):
    d = (a - b + math.pi) % (2 * math.pi) - math.pi
    return abs(d) <= tol


def test_trend_basis_forms():
    assert trend_basis("invn", np.array([4.0]))[0] == 0.25
    assert trend_basis("lognn", np.array([4.0]))[0] == 0.5
    with pytest.raises(DomainError):
        trend_basis("quad", np.array([1.0]))


def test_pure_trend_has_no_peaks():
    assert detect_harmonics(synthetic(())).peaks == ()


def test_single_injected_harmonic_found():
    peaks = detect_harmonics(synthetic())
    assert len(peaks.peaks) == 1
    assert abs(peaks.peaks[0][0] - 64) <= 1
    assert sum(f for _, f in peaks.peaks) <= 1
    assert np.all(peaks.periods > 0)


def test_three_harmonics_found():
    s = synthetic(((1, 0.01, 0.3), (2, 0.008, 1.0), (3, 0.006, 2.0)), n=np.arange(10, 400, 2))
    found = sorted(p for p, _ in detect_harmonics(s).peaks)
    assert any(abs(p - 64 / 3) < 1 for p in found)
    assert any(abs(p - 32) < 1.5 for p in found)
    assert any(abs(p - 64) < 3 for p in found)


def test_nonuniform_grid_rejected():
    n = np.concatenate([np.arange(10, 50, 2), np.arange(51, 100, 3)])
    with pytest.raises(StructuralError):
        detect_harmonics(GapSeries.from_values(n, 1.0 / n))


def test_fit_zero_harmonics_recovers_trend():
    model = fit_harmonic_model(synthetic(()))
    assert model.A == pytest.approx(0.18, rel=1e-8)
    assert all(amp <= 1e-6 for _, amp, _ in model.harmonics)


def test_fit_single_harmonic_noiseless():
    model = fit_harmonic_model(synthetic(((1, 0.01, 0.7),)))
    k, amp, phase = model.harmonics[0]
    assert k == 1
    assert model.A == pytest.approx(0.18, abs=1e-4)
    assert amp == pytest.approx(0.01, abs=1e-4)
    assert _phase_close(phase, 0.7, 1e-4)
    assert model.converged


def test_fit_three_harmonics_under_noise():
    truth = ((1, 0.01, 0.4), (2, 0.005, 1.3), (3, 0.003, 2.2))
    model = fit_harmonic_model(synthetic(truth, noise=5e-4, seed=7, n=np.arange(10, 400, 2)))
    for (k, amp, _), (k2, fitted, phase) in zip(truth, model.harmonics):
        assert k == k2
        assert fitted == pytest.approx(amp, rel=0.05)
        assert 0 <= phase < 2 * math.pi


def test_fit_normalises_amplitudes_and_phases():
    model = fit_harmonic_model(synthetic(((1, -0.01, 0.2),)))
    _, amp, phase = model.harmonics[0]
    assert amp > 0 and 0 <= phase < 2 * math.pi
    assert _phase_close(phase, 0.2 + math.pi, 1e-4)


def test_lm_trace_non_increasing():
    model = fit_harmonic_model(synthetic(((1, 0.01, 0.7), (2, 0.004, 2.0)), noise=1e-3))
    trace = np.array(model.trace)
    assert np.all(np.diff(trace) <= 0)


def test_lm_flags_non_convergence():
    # Rosenbrock from a far start: 3 iterations are not enough
    def rj(t):
        x, y = t
        return np.array([1 - x, 10 * (y - x * x)]), np.array([[-1.0, 0.0], [-20 * x, 10.0]])

    theta, trace, converged, iters = levenberg_marquardt(rj, np.array([-1.5, 2.0]), max_iter=3)
    assert not converged and iters == 3
    theta, trace, converged, _ = levenberg_marquardt(rj, np.array([-1.5, 2.0]))
    assert converged and np.allclose(theta, [1, 1], atol=1e-6)


def test_residue_smooth_examples():
    n = N.astype(float)
    assert np.allclose(residue_smooth(n, np.full(n.size, 0.3), 8.0), 0.3, atol=0, rtol=1e-15)
    impulse = np.zeros(n.size)
    impulse[40] = 1.0
    assert np.allclose(residue_smooth(n, impulse, 0.2), impulse, atol=1e-12)
    noise = np.random.default_rng(0).normal(size=n.size)
    assert np.var(residue_smooth(n, noise, 8.0)) < 0.2 * np.var(noise)
    with pytest.raises(DomainError):
        residue_smooth(n, noise, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1000))
def test_residue_smooth_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    r1, r2 = rng.normal(size=N.size), rng.normal(size=N.size)
    lhs = residue_smooth(N, a * r1 + b * r2, 8.0)
    rhs = a * residue_smooth(N, r1, 8.0) + b * residue_smooth(N, r2, 8.0)
    assert np.allclose(lhs, rhs, atol=1e-12, rtol=0)


def test_debias_harmonic_free_is_noop():
    s = synthetic(())
    out = debias(s)
    assert np.allclose(out.series.mean, s.mean, atol=1e-9, rtol=0)
    assert abs(out.metrics["variance_reduction_pct"]) < 1e-4
    assert out.metrics["position_bias_r2_before"] == out.metrics["position_bias_r2_after"] == 0.0


def test_debias_injection_study():
    s = synthetic(((1, 0.01, 0.0),))
    out = debias(s)
    assert fit_scaling(out.series).A == pytest.approx(0.18, rel=0.10)
    assert out.metrics["band_power_reduction_pct"] >= 90
    assert out.metrics["position_bias_r2_after"] < out.metrics["position_bias_r2_before"]
    assert out.metrics["bandwidth"] == 8.0


def test_debias_idempotent():
    s = synthetic(((1, 0.01, 0.5), (2, 0.004, 1.0)), noise=5e-4, seed=3)
    once = debias(s).series
    twice = debias(once).series
    assert np.sum((twice.mean - once.mean) ** 2) / once.mean.size < 0.01 * np.var(once.mean)


def test_band_power_zero_without_harmonics():
    s = synthetic(())
    assert band_power(s.mean, s.n) < 1e-20
    assert band_power(synthetic().mean, s.n) > 1e-4


def test_position_bias_r2_bounds():
    s = synthetic(noise=1e-3, seed=1)
    r2 = position_bias_r2(s.n, s.mean)
    assert 0 < r2 <= 1
