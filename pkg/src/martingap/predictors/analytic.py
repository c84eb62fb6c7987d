"""Closed-form next-symbol predictors for binary sequences."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from ..errors import DomainError
from ..seqcore import BitSequence, PeGeometry, as_bits

P_FLOOR = 1e-6


@runtime_checkable
class Predictor(Protocol):
    """Anything that maps a prefix to P(next symbol = 1).

    Implementations must be deterministic and return values inside
    ``[P_FLOOR, 1 - P_FLOOR]``.
    """

    name: str

    def predict_one(self, prefix: BitSequence) -> float: ...


def clamp(p: float) -> float:
    return min(max(p, P_FLOOR), 1.0 - P_FLOOR)


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def prob_of_symbol(model: Predictor, prefix: BitSequence, symbol: int) -> float:
    p1 = model.predict_one(prefix)
    return p1 if symbol == 1 else 1.0 - p1


def beta_predict(prefix, alpha0: float, beta0: float) -> float:
    """Posterior-predictive mean (alpha0 + S_t) / (alpha0 + beta0 + t)."""
    if not (alpha0 > 0 and beta0 > 0):
        raise DomainError("pseudo-counts must be positive")
    x = as_bits(prefix)
    return clamp((alpha0 + x.ones) / (alpha0 + beta0 + x.n))


def laplace_predict(prefix) -> float:
    x = as_bits(prefix)
    return clamp((x.ones + 1.0) / (x.n + 2.0))


def mle_predict(prefix, floor: float = P_FLOOR) -> float:
    x = as_bits(prefix)
    if x.n == 0:
        return 0.5
    p = x.ones / x.n
    return clamp(min(max(p, floor), 1.0 - floor))


@dataclass(frozen=True)
class BetaBernoulliPredictor:
    alpha0: float = 1.0
    beta0: float = 1.0

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise DomainError("pseudo-counts must be positive")

    @property
    def name(self) -> str:
        return f"beta({self.alpha0:g},{self.beta0:g})"

    def predict_one(self, prefix) -> float:
        return beta_predict(prefix, self.alpha0, self.beta0)


@dataclass(frozen=True)
class LaplacePredictor:
    name: str = "laplace"

    def predict_one(self, prefix) -> float:
        return laplace_predict(prefix)


@dataclass(frozen=True)
class MlePredictor:
    floor: float = P_FLOOR
    name: str = "mle"

    def predict_one(self, prefix) -> float:
        return mle_predict(prefix, self.floor)


@dataclass(frozen=True)
class ConstantPredictor:
    p: float = 0.5
    name: str = "constant"

    def predict_one(self, prefix) -> float:
        return clamp(self.p)


def positional_gain(t: int, lipschitz: float, pe_variance: float) -> float:
    """g(t) = (L_f^2 sigma_PE^2 / 2) log2(t) / t, with g(1) = g(2)."""
    t = max(int(t), 2)
    return 0.5 * lipschitz**2 * pe_variance * math.log2(t) / t


def position_statistic(bits: np.ndarray, period: int, kind: str = "linear") -> float:
    """Order-sensitive statistic in [-1, 1] of a prefix.

    ``linear`` is the mean of sin(2 pi i / p) (2 x_i - 1).  ``sign`` keeps
    only its sign (ties broken by the last symbol), so the statistic is
    always +-1 and, on balanced prefixes, each sign is equally likely.
    """
    t = bits.size
    i = np.arange(1, t + 1)
    weighted = np.sin(2.0 * np.pi * i / period) * (2.0 * bits - 1.0)
    if kind == "linear":
        return float(weighted.sum() / t)
    if kind == "sign":
        total = float(weighted.sum())
        if abs(total) <= 1e-9:
            return 2.0 * float(bits[-1]) - 1.0
        return 1.0 if total > 0 else -1.0
    raise DomainError(f"unknown statistic {kind!r}")


@dataclass(frozen=True)
class PositionAwareSurrogate:
    """Beta-Bernoulli base with a positional logit shift of size g(t).

    The shift is ``g(t) * s(prefix)`` with ``|s| <= 1``, so re-ordering a
    prefix moves the logit by at most ``2 g(t)``.
    """

    base: BetaBernoulliPredictor
    lipschitz: float
    geometry: PeGeometry
    statistic: str = "linear"

    @property
    def name(self) -> str:
        return (f"surrogate(L_f={self.lipschitz:g},var={self.geometry.variance:g},"
                f"p={self.geometry.period},{self.statistic})")

    @property
    def beta(self) -> float:
        return 0.5 * self.lipschitz**2 * self.geometry.variance

    def gain(self, t: int) -> float:
        return positional_gain(t, self.lipschitz, self.geometry.variance)

    def logit_shift(self, prefix) -> float:
        x = as_bits(prefix)
        if x.n == 0:
            return 0.0
        g = self.gain(x.n)
        if g == 0.0:
            return 0.0
        return g * position_statistic(x.bits, self.geometry.period, self.statistic)

    def predict_one(self, prefix) -> float:
        x = as_bits(prefix)
        base = self.base.predict_one(x)
        shift = self.logit_shift(x)
        if shift == 0.0:
            return base
        return clamp(sigmoid(logit(base) + shift))


def surrogate_predict(prefix, surrogate: PositionAwareSurrogate) -> float:
    return surrogate.predict_one(prefix)
