import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from martingap.errors import DomainError
from martingap.predictors import (
    P_FLOOR, BetaBernoulliPredictor, ConstantPredictor, LaplacePredictor, MlePredictor,
    PositionAwareSurrogate, beta_predict, laplace_predict, logit, mle_predict, positional_gain,
    position_statistic, surrogate_predict,
)
from martingap.seqcore import BitSequence, PeGeometry, PermutationSpec, apply_permutation

bit_lists = st.lists(st.integers(0, 1), max_size=120)


def surrogate(lf=10.0, var=0.05316, statistic="linear"):
    return PositionAwareSurrogate(BetaBernoulliPredictor(1, 1), lf, PeGeometry(var, 64), statistic)


def test_beta_examples():
    assert beta_predict(BitSequence.of([]), 1, 1) == 0.5
    assert beta_predict(BitSequence.of([1, 1, 0]), 1, 1) == pytest.approx(0.6)
    assert beta_predict(BitSequence.of([1, 1, 0]), 1, 1) == beta_predict(BitSequence.of([0, 1, 1]), 1, 1)


def test_beta_rejects_nonpositive_pseudocounts():
    with pytest.raises(DomainError):
        beta_predict(BitSequence.of([1]), 0, 1)
    with pytest.raises(DomainError):
        BetaBernoulliPredictor(1, -1)


def test_laplace_and_mle_examples():
    assert laplace_predict(BitSequence.of([])) == 0.5
    assert laplace_predict(BitSequence.of([1, 0, 1, 0])) == 0.5
    assert mle_predict(BitSequence.of([1, 1]), 1e-6) == 1 - 1e-6
    assert mle_predict(BitSequence.of([0, 0]), 1e-6) == 1e-6
    assert MlePredictor().predict_one(BitSequence.of([])) == 0.5
    assert LaplacePredictor().predict_one(BitSequence.of([1])) == pytest.approx(2 / 3)


def test_beta_permutation_invariance_is_bit_exact():
    rng = np.random.default_rng(0)
    model = BetaBernoulliPredictor(2.5, 0.7)
    for trial in range(1000):
        n = int(rng.integers(0, 50))
        x = BitSequence(rng.integers(0, 2, n))
        y = apply_permutation(x, PermutationSpec.random(n, trial))
        assert model.predict_one(x) == model.predict_one(y)


@given(bit_lists)
def test_beta_depends_on_counts_only(bits):
    x = BitSequence.of(bits)
    sorted_x = BitSequence.of(sorted(bits))
    assert BetaBernoulliPredictor(1, 1).predict_one(x) == BetaBernoulliPredictor(1, 1).predict_one(sorted_x)


@given(bit_lists, st.sampled_from(["beta", "laplace", "mle", "surrogate", "sign", "const"]))
def test_outputs_within_floor(bits, kind):
    model = {
        "beta": BetaBernoulliPredictor(1, 1), "laplace": LaplacePredictor(), "mle": MlePredictor(),
        "surrogate": surrogate(50.0, 1.0), "sign": surrogate(50.0, 1.0, "sign"),
        "const": ConstantPredictor(1.0),
    }[kind]
    x = BitSequence.of(bits)
    p = model.predict_one(x)
    assert P_FLOOR <= p <= 1 - P_FLOOR
    assert p == model.predict_one(x)


def test_surrogate_reduces_to_base_without_positional_signal():
    rng = np.random.default_rng(1)
    for lf, var in [(0.0, 1.0), (10.0, 0.0)]:
        model = surrogate(lf, var)
        for _ in range(200):
            x = BitSequence(rng.integers(0, 2, int(rng.integers(0, 40))))
            assert surrogate_predict(x, model) == beta_predict(x, 1, 1)


def test_surrogate_is_order_sensitive():
    model = surrogate(10.0, 1.0)
    assert model.predict_one(BitSequence.of([1, 0])) != model.predict_one(BitSequence.of([0, 1]))


def test_surrogate_shift_within_gain():
    rng = np.random.default_rng(2)
    model = surrogate(10.0, 1.0)
    g = model.gain(50)
    for _ in range(1000):
        x = BitSequence(rng.integers(0, 2, 50))
        diff = abs(logit(model.predict_one(x)) - logit(beta_predict(x, 1, 1)))
        assert diff <= g + 1e-9


@pytest.mark.parametrize("statistic", ["linear", "sign"])
def test_surrogate_permutation_logit_gap_bounded(statistic):
    rng = np.random.default_rng(3)
    model = surrogate(10.0, 0.05316, statistic)
    for trial in range(500):
        n = int(rng.integers(2, 200))
        x = BitSequence(rng.integers(0, 2, n))
        y = apply_permutation(x, PermutationSpec.random(n, trial))
        gap = abs(logit(model.predict_one(x)) - logit(model.predict_one(y)))
        assert gap <= 2 * model.gain(n) + 1e-9


def test_positional_gain_values():
    assert positional_gain(1, 2.0, 1.0) == positional_gain(2, 2.0, 1.0) == 1.0
    assert positional_gain(16, 1.0, 2.0) == pytest.approx(0.25)
    assert surrogate(10.0, 2.0).beta == pytest.approx(100.0)


def test_position_statistic_range_and_kinds():
    rng = np.random.default_rng(4)
    for _ in range(100):
        bits = rng.integers(0, 2, int(rng.integers(1, 100)))
        assert -1 <= position_statistic(bits, 64) <= 1
        assert position_statistic(bits, 64, "sign") in (-1.0, 1.0)
    with pytest.raises(DomainError):
        position_statistic(np.array([1]), 64, "cubic")


def test_constant_predictor_is_exchangeable():
    model = ConstantPredictor(0.3)
    assert model.predict_one(BitSequence.of([1, 0, 0])) == model.predict_one(BitSequence.of([0, 0, 1])) == 0.3
    assert math.isclose(ConstantPredictor(0.0).predict_one(BitSequence.of([])), P_FLOOR)
