"""Removal of periodic positional artifacts from a gap series.

Stage one fits ``trend(n) + sum_k B_k sin(2 pi k n / p + phi_k)`` by
Levenberg-Marquardt and subtracts the harmonics.  Stage two takes what is
left in the harmonic frequency band, smooths it with a Gaussian
Nadaraya-Watson kernel and subtracts that as well.  The trend is never
touched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, StructuralError
from .gapstats import GapSeries

TREND_FORMS = ("lognn", "invn")


def trend_basis(form: str, n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if form == "lognn":
        return np.log2(n) / n
    if form == "invn":
        return 1.0 / n
    raise DomainError(f"unknown trend form {form!r}")


def _detrend(n: np.ndarray, y: np.ndarray, form: str) -> np.ndarray:
    X = np.column_stack([trend_basis(form, n), np.ones_like(y)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return y - X @ coef


def _grid_step(series: GapSeries) -> int:
    if not series.is_uniform_grid():
        raise StructuralError("series lengths are not uniformly spaced; regrid first")
    return int(series.n[1] - series.n[0])


# --------------------------------------------------------------------------
# Spectral peaks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralPeaks:
    peaks: tuple[tuple[float, float], ...]   # (period in positions, power fraction)
    periods: np.ndarray = field(repr=False)
    power: np.ndarray = field(repr=False)

    @property
    def peak_periods(self) -> list[float]:
        return [p for p, _ in self.peaks]

    def to_dict(self) -> dict:
        return {"peaks": [{"period": p, "power_fraction": f} for p, f in self.peaks]}


def _spectrum(resid: np.ndarray, step: int, window: bool):
    m = resid.size
    nfft = 1 << (m - 1).bit_length()
    w = np.hanning(m) if window else np.ones(m)
    spec = np.fft.rfft(resid * w, nfft)
    power = np.abs(spec) ** 2
    bins = np.arange(power.size)
    with np.errstate(divide="ignore"):
        periods = np.where(bins > 0, step * nfft / np.maximum(bins, 1), np.inf)
    return periods[1:], power[1:], nfft


def detect_harmonics(series: GapSeries, base_period: int = 64, trend_form: str = "lognn",
                     threshold: float = 3.0, min_fraction: float = 0.05,
                     window: bool = True) -> SpectralPeaks:
    """Find spectral peaks of the detrended series.

    A peak is a local maximum of the (Hann-windowed, zero-padded) power
    spectrum that exceeds ``threshold`` times the median power and carries at
    least ``min_fraction`` of the total.  Periods are in positions.
    """
    if len(series) < 16:
        raise DomainError("need at least 16 records")
    step = _grid_step(series)
    y = series.mean
    resid = _detrend(series.n, y, trend_form)
    periods, power, _ = _spectrum(resid, step, window)
    scale = max(float(np.sqrt(np.mean(y**2))), np.finfo(float).tiny)
    if float(np.sqrt(np.mean(resid**2))) <= 1e-10 * scale:
        return SpectralPeaks((), periods, power)
    total = float(power.sum())
    cutoff = threshold * float(np.median(power))
    found = []
    for j in range(power.size):
        left = power[j - 1] if j > 0 else -np.inf
        right = power[j + 1] if j + 1 < power.size else -np.inf
        if power[j] >= left and power[j] >= right and power[j] > cutoff and power[j] >= min_fraction * total:
            found.append((float(periods[j]), float(power[j] / total)))
    found.sort(key=lambda pf: -pf[1])
    return SpectralPeaks(tuple(found), periods, power)


def band_power(series_or_values, n, period: int = 64, harmonics: int = 3, trend_form: str = "lognn") -> float:
    """Detrended spectral power within one resolution cell of each harmonic."""
    y = np.asarray(series_or_values, dtype=float)
    n = np.asarray(n)
    step = int(n[1] - n[0])
    resid = _detrend(n, y, trend_form)
    mask = _band_mask(resid.size, step, period, harmonics)
    nfft = mask.size * 2 - 2
    spec = np.fft.rfft(resid, nfft)
    return float(np.sum(np.abs(spec[mask]) ** 2))


def _band_mask(m: int, step: int, period: int, harmonics: int) -> np.ndarray:
    nfft = 1 << (m - 1).bit_length()
    freqs = np.fft.rfftfreq(nfft, d=step)       # cycles per position
    width = 1.0 / (m * step)
    mask = np.zeros(freqs.size, dtype=bool)
    for k in range(1, harmonics + 1):
        mask |= np.abs(freqs - k / period) <= width
    return mask


def band_limit(values: np.ndarray, step: int, period: int = 64, harmonics: int = 3) -> np.ndarray:
    """Keep only the harmonic-band Fourier components of ``values``."""
    m = values.size
    mask = _band_mask(m, step, period, harmonics)
    nfft = mask.size * 2 - 2
    spec = np.fft.rfft(values, nfft)
    spec[~mask] = 0.0
    return np.fft.irfft(spec, nfft)[:m]


# --------------------------------------------------------------------------
# Harmonic model and Levenberg-Marquardt
# --------------------------------------------------------------------------


@dataclass
class HarmonicModel:
    trend_form: str
    A: float
    period: int
    harmonics: list[tuple[int, float, float]]   # (k, amplitude, phase)
    residual_norm: float = 0.0
    converged: bool = True
    iterations: int = 0
    trace: list[float] = field(default_factory=list, repr=False)

    def trend(self, n) -> np.ndarray:
        return self.A * trend_basis(self.trend_form, n)

    def harmonic_part(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        out = np.zeros_like(n)
        for k, amp, phase in self.harmonics:
            out += amp * np.sin(2 * np.pi * k * n / self.period + phase)
        return out

    def __call__(self, n) -> np.ndarray:
        return self.trend(n) + self.harmonic_part(n)

    def to_dict(self) -> dict:
        return {
            "trend_form": self.trend_form, "A": self.A, "period": self.period,
            "harmonics": [{"k": k, "amplitude": b, "phase": p} for k, b, p in self.harmonics],
            "residual_norm": self.residual_norm, "converged": self.converged,
            "iterations": self.iterations,
        }


def _unpack(theta: np.ndarray):
    return theta[0], theta[1::2], theta[2::2]


def _model_and_jacobian(theta, f, n, period, ks):
    A, amps, phases = _unpack(theta)
    arg = 2 * np.pi * np.outer(n, ks) / period + phases
    s, c = np.sin(arg), np.cos(arg)
    pred = A * f + s @ amps
    J = np.empty((n.size, theta.size))
    J[:, 0] = f
    J[:, 1::2] = s
    J[:, 2::2] = c * amps
    return pred, J


def levenberg_marquardt(residual_and_jacobian, theta0: np.ndarray, lam0: float = 1e-3,
                        max_iter: int = 200, rtol: float = 1e-10):
    """Minimise 0.5 ||r(theta)||^2.

    Damping starts at ``lam0``, is divided by 10 after an accepted step and
    multiplied by 10 after a rejected one.  Stops when an accepted step
    changes the cost by less than ``rtol`` relative, or after ``max_iter``
    iterations.  Returns (theta, cost trace of accepted iterates, converged,
    iterations).
    """
    theta = np.array(theta0, dtype=float)
    r, J = residual_and_jacobian(theta)
    cost = 0.5 * float(r @ r)
    trace = [cost]
    lam = lam0
    for it in range(1, max_iter + 1):
        if cost == 0.0:
            return theta, trace, True, it - 1
        g = J.T @ r
        H = J.T @ J
        d = np.diag(H).copy()
        d = np.maximum(d, 1e-12 * max(float(d.max()), 1e-300))
        try:
            step = np.linalg.solve(H + lam * np.diag(d), -g)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        cand = theta + step
        r_new, J_new = residual_and_jacobian(cand)
        new_cost = 0.5 * float(r_new @ r_new)
        if new_cost < cost:
            rel = (cost - new_cost) / cost
            theta, r, J, cost = cand, r_new, J_new, new_cost
            trace.append(cost)
            lam = max(lam / 10, 1e-15)
            if rel < rtol:
                return theta, trace, True, it
        else:
            lam *= 10
            if lam > 1e16:
                # no descent direction left at working precision
                return theta, trace, True, it
    return theta, trace, False, max_iter


def _initial_harmonics(n, resid, period, ks):
    m = n.size
    out = []
    for k in ks:
        w = 2 * np.pi * k * n / period
        a = 2.0 / m * float(np.sum(resid * np.sin(w)))
        b = 2.0 / m * float(np.sum(resid * np.cos(w)))
        out.append((math.hypot(a, b), math.atan2(b, a)))
    return out


def fit_harmonic_model(series: GapSeries, period: int = 64, trend_form: str = "lognn",
                       n_harmonics: int = 3) -> HarmonicModel:
    """Fit trend plus ``n_harmonics`` sinusoids of period p/k."""
    if len(series) < 10:
        raise DomainError("need at least 10 records")
    n = series.n.astype(float)
    y = series.mean
    f = trend_basis(trend_form, n)
    ks = np.arange(1, n_harmonics + 1)
    A0 = float(f @ y / (f @ f))
    theta0 = [A0]
    for amp, phase in _initial_harmonics(n, y - A0 * f, period, ks):
        theta0 += [amp, phase]

    def rj(theta):
        pred, J = _model_and_jacobian(theta, f, n, period, ks)
        return pred - y, J

    theta, trace, converged, iters = levenberg_marquardt(rj, np.array(theta0))
    A, amps, phases = _unpack(theta)
    harmonics = []
    for k, amp, phase in zip(ks, amps, phases):
        if amp < 0:
            amp, phase = -amp, phase + math.pi
        harmonics.append((int(k), float(amp), float(phase % (2 * math.pi))))
    resid = rj(theta)[0]
    return HarmonicModel(trend_form, float(A), int(period), harmonics,
                         residual_norm=float(np.linalg.norm(resid)), converged=converged,
                         iterations=iters, trace=trace)


# --------------------------------------------------------------------------
# Kernel smoothing and the full procedure
# --------------------------------------------------------------------------


def residue_smooth(n, residuals, bandwidth: float) -> np.ndarray:
    """Nadaraya-Watson estimate at each n with a Gaussian kernel of width h."""
    if not bandwidth > 0:
        raise DomainError("bandwidth must be positive")
    n = np.asarray(n, dtype=float)
    r = np.asarray(residuals, dtype=float)
    z = (n[:, None] - n[None, :]) / bandwidth
    w = np.exp(-0.5 * z**2)
    return (w @ r) / w.sum(axis=1)


def position_bias_r2(n, values, period: int = 64, harmonics: int = 3, trend_form: str = "lognn") -> float:
    """Share of detrended variance explained by the phase n mod p."""
    n = np.asarray(n, dtype=float)
    resid = _detrend(n, np.asarray(values, dtype=float), trend_form)
    cols = [np.ones_like(n)]
    for k in range(1, harmonics + 1):
        w = 2 * np.pi * k * (n % period) / period
        cols += [np.sin(w), np.cos(w)]
    X = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(X, resid, rcond=None)
    tss = float(np.sum((resid - resid.mean()) ** 2))
    scale = float(np.mean(np.asarray(values, dtype=float) ** 2))
    if tss <= (1e-10) ** 2 * scale * n.size:
        return 0.0
    return float(1.0 - np.sum((resid - X @ coef) ** 2) / tss)


@dataclass
class DebiasResult:
    series: GapSeries
    model: HarmonicModel
    metrics: dict

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "metrics": dict(self.metrics)}


def debias(series: GapSeries, period: int = 64, trend_form: str = "lognn",
           bandwidth: float | None = None, n_harmonics: int = 3) -> DebiasResult:
    """Two-stage removal of period-p artifacts; see the module docstring."""
    h = period / 8 if bandwidth is None else bandwidth
    step = _grid_step(series)
    n = series.n
    y = series.mean
    model = fit_harmonic_model(series, period, trend_form, n_harmonics)
    stage1 = y - model.harmonic_part(n)
    periodic = band_limit(stage1 - model.trend(n), step, period, n_harmonics)
    correction = residue_smooth(n, periodic, h)
    out = stage1 - correction
    var_in = float(np.var(y))
    var_out = float(np.var(out))
    bp_in = band_power(y, n, period, n_harmonics, trend_form)
    bp_out = band_power(out, n, period, n_harmonics, trend_form)
    metrics = {
        "variance_reduction_pct": 100.0 * (1 - var_out / var_in) if var_in > 0 else 0.0,
        "position_bias_r2_before": position_bias_r2(n, y, period, n_harmonics, trend_form),
        "position_bias_r2_after": position_bias_r2(n, out, period, n_harmonics, trend_form),
        "band_power_before": bp_in,
        "band_power_after": bp_out,
        "band_power_reduction_pct": 100.0 * (1 - bp_out / bp_in) if bp_in > 0 else 0.0,
        "bandwidth": h,
    }
    return DebiasResult(series.with_means(out), model, metrics)
