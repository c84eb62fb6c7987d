import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from martingap.errors import DomainError
from martingap.io import read_csv
from martingap.mdl import (
    codelength, efficiency_curve, expected_beta_codelength, hypergeom_entropy_expectation,
    polya_codelength,
)
from martingap.predictors import BetaBernoulliPredictor, ConstantPredictor, LaplacePredictor, P_FLOOR
from martingap.seqcore import BitSequence, PermutationSpec, apply_permutation, binary_entropy

bit_lists = st.lists(st.integers(0, 1), min_size=1, max_size=60)


def test_codelength_examples():
    assert codelength(ConstantPredictor(0.5), BitSequence.of([0, 1] * 5)).total == pytest.approx(10.0)
    led = codelength(BetaBernoulliPredictor(1, 1), BitSequence.of([1, 0]))
    assert led.total == pytest.approx(math.log2(6), abs=1e-12)
    assert round(led.total, 5) == 2.58496
    ones = codelength(ConstantPredictor(1.0), BitSequence.of([1] * 50))
    assert ones.total == pytest.approx(-50 * math.log2(1 - P_FLOOR))


@given(bit_lists, st.floats(0.1, 20), st.floats(0.1, 20))
def test_codelength_matches_polya_closed_form(bits, a, b):
    x = BitSequence.of(bits)
    led = codelength(BetaBernoulliPredictor(a, b), x)
    assert led.total == pytest.approx(polya_codelength(x.ones, x.n, a, b), rel=1e-9)
    assert np.all(led.steps >= 0)


def test_ledger_csv(tmp_path):
    led = codelength(LaplacePredictor(), BitSequence.of([1, 1, 0]), model_bits=2.0)
    assert led.total == pytest.approx(led.data_bits + 2.0)
    led.to_csv(tmp_path / "l.csv")
    meta, rows = read_csv(tmp_path / "l.csv")
    assert meta["model"] == "laplace"
    assert float(rows[-1]["cumulative_bits"]) == pytest.approx(led.data_bits)


def test_codelength_permutation_invariant_for_beta():
    rng = np.random.default_rng(0)
    model = BetaBernoulliPredictor(2, 3)
    for trial in range(100):
        x = BitSequence(rng.integers(0, 2, int(rng.integers(1, 80))))
        y = apply_permutation(x, PermutationSpec.random(x.n, trial))
        assert codelength(model, x).total == pytest.approx(codelength(model, y).total, abs=1e-9)


def test_oracle_predictor_efficiency_near_one():
    curve = efficiency_curve(ConstantPredictor(0.3), 0.3, [50, 200], trials=400, seed=1)
    assert all(abs(e - 1) < 0.02 for e in curve.efficiency)


def test_efficiency_curve_paired_and_seeded():
    a = efficiency_curve(LaplacePredictor(), 0.5, [10, 20], trials=50, seed=4)
    assert a == efficiency_curve(LaplacePredictor(), 0.5, [10, 20], trials=50, seed=4)
    assert a.at(20) == a.efficiency[1]
    assert all(r == pytest.approx(1 / e) for r, e in zip(a.reciprocal, a.efficiency))
    with pytest.raises(DomainError):
        efficiency_curve(LaplacePredictor(), 1.0, [10])


def test_efficiency_relabeling_symmetry():
    # Bernoulli(p) with a predictor for symbol 1 versus Bernoulli(1-p) with the mirrored predictor
    for p in (0.2, 0.35):
        a = efficiency_curve(BetaBernoulliPredictor(2, 5), p, [30], trials=200, seed=0)
        b = efficiency_curve(BetaBernoulliPredictor(5, 2), 1 - p, [30], trials=200, seed=0)
        assert a.efficiency[0] == pytest.approx(b.efficiency[0], rel=0.03)


def test_expected_codelength_exact_enumeration():
    # n=2, p=1/2: sequences 00,11 cost log2(3) each, 01,10 cost log2(6) each
    expect = 0.5 * math.log2(3) + 0.5 * math.log2(6)
    assert expected_beta_codelength(2, 0.5, 1, 1) == pytest.approx(expect, abs=1e-12)
    n = 512
    excess = expected_beta_codelength(n, 0.5, 1, 1) - n
    assert 0 < excess <= 3 * math.sqrt(n * math.log2(n))


def test_hypergeom_examples():
    assert hypergeom_entropy_expectation(4, 2, 2) == pytest.approx(2 / 3, abs=1e-15)
    assert hypergeom_entropy_expectation(10, 3, 10) == pytest.approx(binary_entropy(0.3), abs=1e-15)
    n = 100
    assert abs(hypergeom_entropy_expectation(n, 50, n - 1) - 1.0) <= 2 / n
    with pytest.raises(DomainError):
        hypergeom_entropy_expectation(4, 5, 2)


def test_hypergeom_jensen_all_small_cases():
    for n in range(1, 65):
        for s in range(n + 1):
            bound = binary_entropy(s / n) + 1e-12
            for t in range(1, n + 1):
                assert hypergeom_entropy_expectation(n, s, t) <= bound
