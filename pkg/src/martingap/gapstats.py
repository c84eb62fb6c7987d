"""Martingale-gap estimation and scaling-law statistics.

Two estimators are provided.  The *prefix* estimator compares the
log-probability of the observed symbol x_n under prefixes of length n-1 and
n-2.  The *permutation* estimator compares P(next = 1) under the original
prefix and under a random reordering of it; it is identically zero for any
predictor that depends on the prefix only through its sufficient statistic.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, DegenerateFitError, DomainError, GapScanError, StructuralError
from .io import digest_arrays, read_csv, write_csv
from .predictors.analytic import Predictor, prob_of_symbol
from .seqcore import (
    STREAM_BALANCED,
    STREAM_BERNOULLI,
    STREAM_BOOTSTRAP,
    BitSequence,
    PermutationSpec,
    apply_permutation,
    balanced_sequences,
    bernoulli_sequence,
    permutation_stream,
    rng_from,
    split_seed,
)

FORMS = ("lognn", "invn")
GAP_CSV_COLUMNS = ("n", "mean_gap_bits", "variance", "count")


# --------------------------------------------------------------------------
# Gap series
# --------------------------------------------------------------------------


@dataclass
class RunningStats:
    """Count/mean/M2 accumulator with an associative merge."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.count == 0:
            return RunningStats(self.count, self.mean, self.m2)
        if self.count == 0:
            return RunningStats(other.count, other.mean, other.m2)
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta**2 * self.count * other.count / n
        return RunningStats(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0


@dataclass(frozen=True, eq=False)
class GapSeries:
    """Per-length gap aggregates: mean (bits), sample variance and count."""

    n: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    count: np.ndarray
    degenerate: bool = False
    allow_repeats: bool = field(default=False, repr=False)

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.int64)
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.variance, dtype=float)
        count = np.asarray(self.count, dtype=np.int64)
        if not (n.shape == mean.shape == var.shape == count.shape) or n.ndim != 1:
            raise StructuralError("gap series columns must be equal-length vectors")
        if not self.allow_repeats and np.any(np.diff(n) <= 0):
            raise StructuralError("lengths must be strictly increasing")
        if np.any(count < 1):
            raise StructuralError("counts must be >= 1")
        if np.any(var < 0):
            raise StructuralError("variances must be >= 0")
        for name, arr in (("n", n), ("mean", mean), ("variance", var), ("count", count)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.n.size)

    @classmethod
    def from_values(cls, n, mean, count=1, variance=0.0) -> "GapSeries":
        n = np.asarray(n)
        return cls(n, np.asarray(mean, float), np.broadcast_to(variance, n.shape).copy(),
                   np.broadcast_to(count, n.shape).copy())

    def take(self, idx: np.ndarray) -> "GapSeries":
        """Rows ``idx`` in sorted-length order (repeats allowed, for resampling)."""
        idx = np.asarray(idx)
        idx = idx[np.argsort(self.n[idx], kind="stable")]
        return GapSeries(self.n[idx], self.mean[idx], self.variance[idx], self.count[idx],
                         self.degenerate, allow_repeats=True)

    def with_means(self, mean) -> "GapSeries":
        return GapSeries(self.n, mean, self.variance, self.count, self.degenerate, self.allow_repeats)

    def digest(self) -> str:
        return digest_arrays(self.n, self.mean, self.variance, self.count)

    def is_uniform_grid(self) -> bool:
        d = np.diff(self.n)
        return d.size > 0 and bool(np.all(d == d[0]))

    def to_csv(self, path: Path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta.setdefault("degenerate", self.degenerate)
        meta.setdefault("series_digest", self.digest())
        write_csv(path, GAP_CSV_COLUMNS,
                  zip(self.n, self.mean, self.variance, self.count), meta)

    @classmethod
    def from_csv(cls, path: Path) -> "GapSeries":
        meta, rows = read_csv(path)
        if not rows or set(GAP_CSV_COLUMNS) - set(rows[0]):
            raise StructuralError(f"{path} is not a gap-series CSV")
        return cls(
            np.array([int(r["n"]) for r in rows]),
            np.array([float(r["mean_gap_bits"]) for r in rows]),
            np.array([float(r["variance"]) for r in rows]),
            np.array([int(r["count"]) for r in rows]),
            degenerate=meta.get("degenerate") == "true",
        )


# --------------------------------------------------------------------------
# Estimators
# --------------------------------------------------------------------------


def prefix_gap(model: Predictor, x: BitSequence, n: int) -> float:
    """|log2 P(x_n | x_{1:n-1}) - log2 P(x_n | x_{1:n-2})| in bits (n is 1-based)."""
    if not 3 <= n <= x.n:
        raise DomainError(f"position {n} outside [3, {x.n}]")
    symbol = x[n - 1]
    long_ = prob_of_symbol(model, x.prefix(n - 1), symbol)
    short = prob_of_symbol(model, x.prefix(n - 2), symbol)
    return abs(math.log2(long_) - math.log2(short))


def permutation_gaps(model: Predictor, x: BitSequence, perms: Iterable[PermutationSpec]) -> np.ndarray:
    """Per-permutation |log2 P(1 | X) - log2 P(1 | X_pi)| for the prefix ``x``."""
    ref = math.log2(model.predict_one(x))
    return np.array([abs(ref - math.log2(model.predict_one(apply_permutation(x, p)))) for p in perms])


def permutation_gap(model: Predictor, x: BitSequence, trials: int = 1, seed: int = 0,
                    permutations: Sequence[PermutationSpec] | None = None) -> float:
    """Mean permutation gap over ``trials`` seeded random reorderings of ``x``."""
    if permutations is None:
        if trials < 1:
            raise DomainError("trials must be >= 1")
        permutations = permutation_stream(seed, x.n, trials)
    return float(np.mean(permutation_gaps(model, x, permutations)))


def gap_scan(model: Predictor, lengths: Sequence[int], per_length: int = 100,
             mode: str = "permutation", seed: int = 0, trials: int = 1) -> GapSeries:
    """Aggregate the chosen gap estimator over balanced sequences per length.

    Sequence i at length n is drawn from ``split_seed(seed, BALANCED, n, i)``
    and its permutations from ``split_seed(seed, PERMUTATION, n, i, j)``, so
    results do not depend on evaluation order.  ``per_length == 1`` is
    accepted and marks the series degenerate (variances are then zero).
    """
    if mode not in ("prefix", "permutation"):
        raise DomainError(f"unknown gap mode {mode!r}")
    lengths = [int(n) for n in lengths]
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise DomainError("lengths must be increasing")
    if per_length < 1:
        raise DomainError("per_length must be >= 1")
    means, variances = [], []
    for n in lengths:
        if mode == "prefix" and n < 3:
            raise DomainError("prefix gaps need n >= 3")
        acc = RunningStats()
        seqs = balanced_sequences(n, per_length, split_seed(seed, STREAM_BALANCED))
        for i, x in enumerate(seqs):
            try:
                if mode == "prefix":
                    value = prefix_gap(model, x, n)
                else:
                    value = permutation_gap(model, x, permutations=permutation_stream(seed, n, trials, n, i))
            except (GapScanError, ConfigError):
                raise
            except Exception as exc:
                raise GapScanError(f"predictor {getattr(model, 'name', model)!r} failed: {exc}", n, i) from exc
            acc.push(value)
        means.append(acc.mean)
        variances.append(max(acc.variance, 0.0))
    return GapSeries(np.array(lengths), np.array(means), np.array(variances),
                     np.full(len(lengths), per_length), degenerate=per_length == 1)


def theory_bound(lipschitz: float, pe_variance: float, n):
    """Envelope (L_f^2 sigma_PE^2 / 2) log2(n) / n; ``n`` may be an array."""
    arr = np.asarray(n, dtype=float)
    if np.any(arr < 2):
        raise DomainError("n must be >= 2")
    out = 0.5 * lipschitz**2 * pe_variance * np.log2(arr) / arr
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Scaling fits
# --------------------------------------------------------------------------


def _basis(form: str, n: np.ndarray) -> np.ndarray:
    n = n.astype(float)
    if form == "lognn":
        return np.log2(n) / n
    if form == "invn":
        return 1.0 / n
    raise DomainError(f"unknown scaling form {form!r}")


@dataclass(frozen=True)
class ScalingFitResult:
    form: str
    A: float
    B: float
    se_A: float
    se_B: float
    r2: float
    adj_r2: float
    loglik: float
    m: int
    weighted: bool
    series_digest: str
    warning: str | None = None

    def predict(self, n) -> np.ndarray:
        return self.A * _basis(self.form, np.asarray(n)) + self.B

    def to_dict(self) -> dict:
        return {
            "form": self.form, "A": self.A, "B": self.B, "se_A": self.se_A, "se_B": self.se_B,
            "r2": self.r2, "adj_r2": self.adj_r2, "loglik": self.loglik, "m": self.m,
            "weighted": self.weighted, "series_digest": self.series_digest, "warning": self.warning,
        }


def _wls(X: np.ndarray, y: np.ndarray, w: np.ndarray):
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = y - X @ coef
    return coef, resid


def fit_scaling(series: GapSeries, form: str = "lognn") -> ScalingFitResult:
    """Weighted least squares fit of mean gap = A * basis(n) + B.

    Weights are N_n / mean_n^2.  When any mean gap is zero the weights are
    undefined and an unweighted fit is returned with ``warning`` set.
    """
    m = len(series)
    if m < 3:
        raise DegenerateFitError("need at least 3 records")
    if np.ptp(series.n) == 0:
        raise DegenerateFitError("all lengths are equal")
    y = series.mean
    X = np.column_stack([_basis(form, series.n), np.ones(m)])
    warning = None
    if np.all(y > 0):
        w = series.count / y**2
        w = w / w.mean()
        weighted = True
    else:
        w = np.ones(m)
        weighted = False
        warning = "nonpositive mean gaps: unweighted fit"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    coef, resid = _wls(X, y, w)
    rss = float(np.sum(w * resid**2))
    ybar = float(np.sum(w * y) / np.sum(w))
    tss = float(np.sum(w * (y - ybar) ** 2))
    scale = float(np.sum(w * y**2)) / m
    tiny = (np.finfo(float).eps ** 2) * max(scale, np.finfo(float).tiny)
    if tss <= tiny:
        r2 = 1.0 if rss <= tiny else 0.0
    else:
        r2 = 1.0 - rss / tss
    r2 = min(r2, 1.0)
    adj = 1.0 - (1.0 - r2) * (m - 1) / (m - 2)
    adj = min(adj, r2)
    xtwx = X.T @ (X * w[:, None])
    cov = (rss / max(m - 2, 1)) * np.linalg.pinv(xtwx)
    sigma2 = max(rss / m, tiny, np.finfo(float).tiny)
    loglik = -0.5 * float(np.sum(np.log(2 * np.pi * sigma2 / w))) - 0.5 * rss / sigma2
    return ScalingFitResult(
        form=form, A=float(coef[0]), B=float(coef[1]),
        se_A=float(math.sqrt(max(cov[0, 0], 0.0))), se_B=float(math.sqrt(max(cov[1, 1], 0.0))),
        r2=float(r2), adj_r2=float(adj), loglik=float(loglik), m=m, weighted=weighted,
        series_digest=series.digest(), warning=warning,
    )


@dataclass(frozen=True)
class ModelComparison:
    llr: float
    preferred: str | None
    p_value: float
    first: str
    second: str
    p_value_reference: str = "chi2(1), heuristic: forms are not nested"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compare_models(first: ScalingFitResult, second: ScalingFitResult) -> ModelComparison:
    """Log-likelihood ratio 2 (ll_first - ll_second) with a chi2(1) heuristic p-value."""
    if first.series_digest != second.series_digest:
        raise StructuralError("fits were computed on different series")
    llr = 2.0 * (first.loglik - second.loglik)
    if llr > 0:
        preferred = first.form
    elif llr < 0:
        preferred = second.form
    else:
        preferred = None
    return ModelComparison(llr=llr, preferred=preferred, p_value=float(stats.chi2.sf(abs(llr), 1)),
                           first=first.form, second=second.form)


# --------------------------------------------------------------------------
# Bootstrap
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapInterval:
    low: float
    high: float
    estimate: float
    level: float
    resamples: int
    discarded: int


def bootstrap_ci(series: GapSeries, statistic: Callable[[GapSeries], float],
                 resamples: int = 10_000, level: float = 0.95, seed: int = 0) -> BootstrapInterval:
    """Percentile bootstrap over records, resampled with replacement.

    Resamples on which ``statistic`` raises are discarded; more than 10%
    discards is an error.
    """
    if resamples < 100:
        raise DomainError("resamples must be >= 100")
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    rng = rng_from(split_seed(seed, STREAM_BOOTSTRAP))
    m = len(series)
    idx = rng.integers(0, m, size=(resamples, m))
    values, discarded = [], 0
    for row in idx:
        try:
            v = float(statistic(series.take(row)))
        except Exception:
            discarded += 1
            continue
        if not math.isfinite(v):
            discarded += 1
            continue
        values.append(v)
    if discarded > 0.1 * resamples:
        raise DegenerateFitError(f"{discarded} of {resamples} resamples failed")
    tail = 100 * (1 - level) / 2
    low, high = np.percentile(values, [tail, 100 - tail])
    return BootstrapInterval(float(low), float(high), float(statistic(series)), level, resamples, discarded)


def slope_statistic(form: str = "lognn") -> Callable[[GapSeries], float]:
    return lambda s: fit_scaling(s, form).A


# --------------------------------------------------------------------------
# Permutation averaging
# --------------------------------------------------------------------------


def averaged_predict(model: Predictor, x: BitSequence, k: int, seed: int = 0,
                     permutations: Sequence[PermutationSpec] | None = None) -> float:
    """Mean of P(next = 1) over ``k`` random reorderings of the prefix."""
    if k < 1:
        raise DomainError("k must be >= 1")
    if permutations is None:
        permutations = permutation_stream(seed, x.n, k)
    perms = list(permutations)[:k]
    if len(perms) < k:
        raise DomainError("permutation stream shorter than k")
    return float(np.mean([model.predict_one(apply_permutation(x, p)) for p in perms]))


@dataclass(frozen=True)
class SequenceDesign:
    """Distribution of conditioning prefixes for :func:`variance_curve`."""

    n: int
    kind: str = "balanced"
    p: float = 0.5

    def draw(self, seed: int) -> BitSequence:
        if self.kind == "balanced":
            return balanced_sequences(self.n, 1, seed)[0]
        if self.kind == "bernoulli":
            return bernoulli_sequence(self.n, self.p, split_seed(seed, STREAM_BERNOULLI))
        raise DomainError(f"unknown design {self.kind!r}")


@dataclass(frozen=True)
class PermAvgCurve:
    ks: tuple[int, ...]
    stds: tuple[float, ...]
    exponent: float | None
    ci: tuple[float, float] | None
    trials: int
    flagged: str | None = None

    def to_dict(self) -> dict:
        return {"ks": list(self.ks), "stds": list(self.stds), "exponent": self.exponent,
                "ci": list(self.ci) if self.ci else None, "trials": self.trials,
                "flagged": self.flagged}


def _loglog_slope(ks: np.ndarray, stds: np.ndarray) -> float:
    return float(np.polyfit(np.log(ks), np.log(stds), 1)[0])


def permavg_predictions(model: Predictor, design: SequenceDesign, ks: Sequence[int],
                        trials: int, seed: int = 0) -> np.ndarray:
    """Matrix [trial, k] of averaged predictions.

    Trial j uses the same prefix and the same permutation stream for every k
    (k averages the first k permutations), so curves are paired across k.
    """
    kmax = max(ks)
    out = np.empty((trials, len(ks)))
    for j in range(trials):
        x = design.draw(split_seed(seed, STREAM_BALANCED, j))
        perms = permutation_stream(seed, x.n, kmax, j)
        preds = np.array([model.predict_one(apply_permutation(x, p)) for p in perms])
        csum = np.cumsum(preds)
        out[j] = [csum[k - 1] / k for k in ks]
    return out


def variance_curve(model: Predictor, design: SequenceDesign, ks: Sequence[int], trials: int = 200,
                   seed: int = 0, resamples: int = 2000, level: float = 0.95) -> PermAvgCurve:
    """Std of permutation-averaged predictions per k and its log-log slope.

    The confidence interval on the slope is a percentile bootstrap over
    trials (rows resampled jointly for all k).
    """
    ks = sorted({int(k) for k in ks})
    if len(ks) < 2 or ks[0] < 1:
        raise DomainError("need at least two distinct positive k values")
    if trials < 2:
        raise DomainError("trials must be >= 2")
    preds = permavg_predictions(model, design, ks, trials, seed)
    stds = preds.std(axis=0, ddof=1)
    if np.any(stds <= 1e-15):
        return PermAvgCurve(tuple(ks), tuple(float(s) for s in stds), None, None, trials,
                            flagged="exchangeable: no exponent")
    karr = np.array(ks, dtype=float)
    slope = _loglog_slope(karr, stds)
    rng = rng_from(split_seed(seed, STREAM_BOOTSTRAP))
    boot = []
    for _ in range(resamples):
        rows = preds[rng.integers(0, trials, size=trials)]
        s = rows.std(axis=0, ddof=1)
        if np.all(s > 0):
            boot.append(_loglog_slope(karr, s))
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(boot, [tail, 100 - tail])
    return PermAvgCurve(tuple(ks), tuple(float(s) for s in stds), slope, (float(lo), float(hi)), trials)
