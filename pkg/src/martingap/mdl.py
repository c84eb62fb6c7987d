"""Sequential code lengths, compression efficiency and the hypergeometric check."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DomainError
from .io import write_csv
from .predictors.analytic import Predictor, prob_of_symbol
from .seqcore import STREAM_BERNOULLI, BitSequence, bernoulli_sequence, binary_entropy, split_seed


@dataclass
class MdlLedger:
    """Per-step code lengths -log2 P(x_t | x_{1:t-1}) of one sequence."""

    steps: np.ndarray
    label: str
    model_bits: float = 0.0
    total: float = field(init=False)

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=float)
        self.total = float(self.steps.sum()) + self.model_bits

    @property
    def data_bits(self) -> float:
        return self.total - self.model_bits

    def to_csv(self, path: Path, meta: dict | None = None) -> None:
        meta = {"model": self.label, "model_bits": self.model_bits, **(meta or {})}
        write_csv(path, ("step", "bits", "cumulative_bits"),
                  zip(range(1, self.steps.size + 1), self.steps, np.cumsum(self.steps)), meta)


def codelength(model: Predictor, x: BitSequence, model_bits: float = 0.0) -> MdlLedger:
    steps = np.empty(x.n)
    for t in range(x.n):
        steps[t] = -math.log2(prob_of_symbol(model, x.prefix(t), x[t]))
    return MdlLedger(steps, getattr(model, "name", type(model).__name__), model_bits)


def polya_codelength(ones: int, n: int, alpha0: float = 1.0, beta0: float = 1.0) -> float:
    """-log2 of the Beta-Bernoulli marginal of any sequence with ``ones`` ones.

    Closed-form oracle for :func:`codelength` on Beta-Bernoulli predictors.
    """
    ln = (gammaln(alpha0 + beta0) - gammaln(alpha0) - gammaln(beta0)
          + gammaln(alpha0 + ones) + gammaln(beta0 + n - ones) - gammaln(alpha0 + beta0 + n))
    return float(-ln / math.log(2))


@dataclass(frozen=True)
class EfficiencyCurve:
    lengths: tuple[int, ...]
    mean_bits: tuple[float, ...]
    efficiency: tuple[float, ...]
    p: float
    model: str
    trials: int
    seed: int

    @property
    def reciprocal(self) -> tuple[float, ...]:
        return tuple(1.0 / e if e > 0 else math.inf for e in self.efficiency)

    def at(self, n: int) -> float:
        return self.efficiency[self.lengths.index(n)]

    def to_csv(self, path: Path, meta: dict | None = None) -> None:
        meta = {"model": self.model, "p": self.p, "seed": self.seed, "trials": self.trials, **(meta or {})}
        write_csv(path, ("length", "mean_bits", "efficiency", "reciprocal"),
                  zip(self.lengths, self.mean_bits, self.efficiency, self.reciprocal), meta)

    def to_dict(self) -> dict:
        return {"lengths": list(self.lengths), "mean_bits": list(self.mean_bits),
                "efficiency": list(self.efficiency), "reciprocal": list(self.reciprocal),
                "p": self.p, "model": self.model, "trials": self.trials, "seed": self.seed}


def efficiency_curve(model: Predictor, p: float, lengths: Sequence[int], trials: int = 1000,
                     seed: int = 0) -> EfficiencyCurve:
    """H(p) divided by the mean per-symbol code length, for each length.

    Trial j draws one Bernoulli(p) sequence of the largest length and every
    requested length reads its prefix, so the curve is paired across n.
    """
    if not 0 < p < 1:
        raise DomainError("p must lie in (0, 1)")
    if trials < 1:
        raise DomainError("trials must be >= 1")
    lengths = [int(n) for n in lengths]
    nmax = max(lengths)
    cum = np.zeros((trials, nmax))
    for j in range(trials):
        x = bernoulli_sequence(nmax, p, split_seed(seed, STREAM_BERNOULLI, j))
        cum[j] = np.cumsum(codelength(model, x).steps)
    h = binary_entropy(p)
    mean_bits = [float(cum[:, n - 1].mean()) for n in lengths]
    eff = [h / (b / n) for b, n in zip(mean_bits, lengths)]
    return EfficiencyCurve(tuple(lengths), tuple(mean_bits), tuple(eff), p,
                           getattr(model, "name", "model"), trials, seed)


def expected_beta_codelength(n: int, p: float, alpha0: float, beta0: float) -> float:
    """Exact E[codelength] of a Beta-Bernoulli code on Bernoulli(p)^n (enumeration over S)."""
    s = np.arange(n + 1)
    logpmf = (gammaln(n + 1) - gammaln(s + 1) - gammaln(n - s + 1)
              + s * math.log(p) + (n - s) * math.log1p(-p))
    codes = np.array([polya_codelength(int(k), n, alpha0, beta0) for k in s])
    return float(np.sum(np.exp(logpmf) * codes))


def hypergeom_entropy_expectation(n: int, ones: int, t: int) -> float:
    """E[H(k/t)] for k ~ Hypergeometric(population n, successes ``ones``, draws t).

    The pmf is evaluated as a ratio of binomial coefficients in exact
    rational arithmetic before conversion to float.
    """
    if not (0 <= ones <= n and 1 <= t <= n):
        raise DomainError("need 0 <= S <= n and 1 <= t <= n")
    denom = math.comb(n, t)
    total = 0.0
    mass = Fraction(0)
    for k in range(max(0, t - (n - ones)), min(t, ones) + 1):
        w = Fraction(math.comb(ones, k) * math.comb(n - ones, t - k), denom)
        mass += w
        total += float(w) * binary_entropy(k / t)
    assert mass == 1
    return total
