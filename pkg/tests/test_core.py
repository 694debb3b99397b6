"""Loss, feasibility boxes, and query accounting."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dfoattack.core import (
    AttackObjective,
    ContractError,
    EvaluationError,
    FunctionOracle,
    InputTensor,
    Perturbation,
    evaluate_loss,
    feasible_box,
    is_success,
    loss,
)

from .conftest import constant_oracle


class TestLoss:
    def test_two_way_symmetry(self):
        assert loss([0.0, 0.0], 0) == 0.0

    def test_single_nontarget_term(self):
        assert loss([2.0, 0.0], 1) == pytest.approx(2.0, abs=1e-12)

    def test_three_way_tie(self):
        # logsumexp({1, 1}) - 1 = ln 2, frozen from direct arithmetic
        assert loss([1.0, 1.0, 1.0], 2) == pytest.approx(0.6931471805599453, rel=1e-12)

    def test_rejects_single_class(self):
        with pytest.raises(ContractError):
            loss([1.0], 0)

    def test_rejects_bad_target(self):
        with pytest.raises(ContractError):
            loss([1.0, 2.0], 2)

    def test_nonfinite_logit_is_evaluation_error(self):
        with pytest.raises(EvaluationError):
            loss([np.nan, 0.0], 0)
        with pytest.raises(EvaluationError):
            loss([np.inf, 0.0], 1)

    def test_extreme_logits_stay_finite(self):
        assert math.isfinite(loss([1e300 * 0 + 700.0, -700.0], 0))

    @given(
        logits=st.lists(st.floats(-30, 30), min_size=2, max_size=12),
        data=st.data(),
    )
    def test_matches_softmax_space_formula(self, logits, data):
        t = data.draw(st.integers(0, len(logits) - 1))
        z = np.asarray(logits)
        p = np.exp(z - z.max())
        p /= p.sum()
        others = np.delete(p, t)
        expected = math.log(others.sum()) - math.log(p[t])
        got = loss(z, t)
        assert got == pytest.approx(expected, rel=1e-9, abs=1e-9)


class TestFeasibleBox:
    def _box(self, x, eta, eps, lower=-0.5, upper=0.5):
        X = InputTensor(shape=(1, 1, 1), data=np.array([x]), lower=lower, upper=upper)
        box = feasible_box(X, Perturbation(values=np.array([eta]), epsilon_inf=eps))
        return box.lower[0], box.upper[0]

    def test_interior_pixel(self):
        assert self._box(0.0, 0.0, 0.1) == (-0.1, 0.1)

    def test_image_bound_tighter_than_budget(self):
        a, b = self._box(0.45, 0.0, 0.1)
        assert a == pytest.approx(-0.1, abs=1e-15)
        assert b == pytest.approx(0.05, abs=1e-15)

    def test_budget_spent_upward(self):
        a, b = self._box(0.0, 0.1, 0.1)
        assert a == pytest.approx(-0.2, abs=1e-15)
        assert b == 0.0

    def test_infeasible_current_point_rejected(self):
        X = InputTensor(shape=(1, 1, 1), data=np.array([0.45]))
        with pytest.raises(ContractError):
            feasible_box(X, Perturbation(values=np.array([0.2]), epsilon_inf=0.3))

    def test_closure_under_random_steps(self, rng):
        X = InputTensor(shape=(4, 4, 3), data=rng.uniform(-0.5, 0.5, 48))
        eps = 0.15
        eta = np.clip(rng.uniform(-eps, eps, 48), -0.5 - X.data, 0.5 - X.data)
        box = feasible_box(X, Perturbation(values=eta, epsilon_inf=eps))
        draws = box.sample(rng, count=10_000)
        stepped = eta + draws
        assert np.abs(stepped).max() <= eps + 1e-12
        points = X.data + stepped
        assert points.min() >= -0.5 - 1e-12 and points.max() <= 0.5 + 1e-12


class TestEvaluateLoss:
    def test_low_loss_when_target_dominates(self):
        oracle = constant_oracle([0.0, 0.0, 5.0])
        X = InputTensor(shape=(1, 1, 1), data=np.zeros(1))
        value, pred = evaluate_loss(oracle, X, Perturbation.zero(1, 0.1), 2)
        assert value == pytest.approx(math.log(2) - 5.0, rel=1e-12)
        assert pred == 2

    def test_high_loss_when_target_dominated(self):
        oracle = constant_oracle([0.0, 0.0, 5.0])
        X = InputTensor(shape=(1, 1, 1), data=np.zeros(1))
        value, pred = evaluate_loss(oracle, X, Perturbation.zero(1, 0.1), 0)
        assert value == pytest.approx(math.log(1 + math.exp(5.0)), rel=1e-12)
        assert pred == 2

    def test_each_call_counts_exactly_once(self):
        oracle = constant_oracle([1.0, 0.0])
        X = InputTensor(shape=(1, 1, 1), data=np.zeros(1))
        for expected in (1, 2, 3):
            evaluate_loss(oracle, X, Perturbation.zero(1, 0.1), 0)
            assert oracle.query_count == expected


def test_is_success():
    assert is_success(3, 3)
    assert not is_success(3, 4)


class TestTypes:
    def test_input_tensor_validates_shape(self):
        with pytest.raises(ContractError):
            InputTensor(shape=(2, 2, 1), data=np.zeros(3))

    def test_input_tensor_validates_bounds(self):
        with pytest.raises(ContractError):
            InputTensor(shape=(1, 1, 1), data=np.array([0.7]))
        with pytest.raises(ContractError):
            InputTensor(shape=(1, 1, 1), data=np.zeros(1), lower=0.5, upper=-0.5)

    def test_perturbation_enforces_budget(self):
        with pytest.raises(ContractError):
            Perturbation(values=np.array([0.2]), epsilon_inf=0.1)

    def test_objective_validates_classes(self):
        AttackObjective(target_class=1, original_class=0, num_classes=3)
        with pytest.raises(ContractError):
            AttackObjective(target_class=1, original_class=1, num_classes=3)
        with pytest.raises(ContractError):
            AttackObjective(target_class=3, original_class=0, num_classes=3)

    def test_function_oracle_counts(self):
        oracle = FunctionOracle(lambda x: np.array([x.sum(), -x.sum()]))
        oracle.query(np.ones(4))
        oracle.query(np.ones(4))
        assert oracle.query_count == 2
