import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from devscore.devcore import GaussianPrior, estimate_prior
from devscore.devloss import (
    Bag,
    alignment_loss,
    delta_loss_fn,
    deviation_loss,
    finite_difference_check,
    total_loss_and_grads,
)
from devscore.params import HyperParams, PromptPair

from conftest import unit_rows


def random_instance(rng, d=8, P=4, labels=(0, 1)):
    base_n, base_a = unit_rows(rng.standard_normal((2, d)))
    prompts = PromptPair(base_n, base_a,
                         0.1 * rng.standard_normal(d), 0.1 * rng.standard_normal(d))
    bags = [
        Bag(f"img_{i}", unit_rows(rng.standard_normal((P, d))), y)
        for i, y in enumerate(labels)
    ]
    return bags, prompts


class TestDeviationLoss:
    def test_normal_at_prior_center(self):
        assert deviation_loss(0.0, 0, 5.0, 1.0) == 0.0

    def test_anomaly_exactly_at_margin(self):
        assert deviation_loss(5.0, 1, 5.0, 1.0) == 0.0

    def test_anomaly_inside_margin(self):
        assert deviation_loss(2.0, 1, 5.0, 1.0) == 3.0

    def test_negative_deviation_absolute_branch(self):
        assert deviation_loss(-1.0, 0, 5.0, 0.1) == pytest.approx(0.1)

    def test_invalid_label(self):
        with pytest.raises(ValueError):
            deviation_loss(1.0, 2, 5.0, 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_monotone_normal_branch(self, d1, d2):
        # non-decreasing in |D| for y=0
        if abs(d1) <= abs(d2):
            assert deviation_loss(d1, 0, 5.0, 1.0) <= deviation_loss(d2, 0, 5.0, 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_non_increasing_anomalous_branch(self, d1, d2):
        if d1 <= d2:
            assert deviation_loss(d1, 1, 5.0, 1.0) >= deviation_loss(d2, 1, 5.0, 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-10, 10), st.floats(1e-4, 1e-2))
    def test_continuity(self, D, eps):
        for y in (0, 1):
            a = deviation_loss(D, y, 5.0, 1.0)
            b = deviation_loss(D + eps, y, 5.0, 1.0)
            assert abs(a - b) <= eps + 1e-12


class TestAlignmentLoss:
    def test_symmetric_case_is_ln2(self):
        s = np.array([0.3, -0.2, 0.9])
        assert alignment_loss(s, s, 0.07) == pytest.approx(math.log(2), abs=1e-12)

    def test_perfect_alignment_limit(self):
        assert alignment_loss(np.array([1.0]), np.array([-1.0]), 1e-3) < 1e-12

    def test_single_patch_scalar_formula(self):
        # independent scalar oracle: -log(sigmoid((s_n - s_a) / tau))
        tau = 0.07
        expected = -math.log(1.0 / (1.0 + math.exp(-(0.8 - 0.2) / tau)))
        got = alignment_loss(np.array([0.8]), np.array([0.2]), tau)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(1.89e-4, rel=0.05)

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            alignment_loss(np.array([0.1]), np.array([0.2]), 0.0)


class TestTotalLossAndGrads:
    def test_breakdown_identity(self, rng):
        bags, prompts = random_instance(rng)
        prior = GaussianPrior(0.1, 0.3, "empirical", 8)
        hp = HyperParams(dev_weight=0.7)
        bd = total_loss_and_grads(bags, prompts, prior, hp)
        assert bd.total == pytest.approx(bd.align + 0.7 * bd.deviation, abs=1e-9)
        assert np.isfinite(bd.grad_delta_normal).all()
        assert np.isfinite(bd.grad_delta_abnormal).all()

    def test_initialization_sanity(self, rng):
        d = 8
        base_n, base_a = unit_rows(rng.standard_normal((2, d)))
        prompts = PromptPair(base_n, base_a, np.zeros(d), np.zeros(d))
        Z = np.tile(prompts.effective_normal, (4, 1))
        bags = [Bag("all_normal", Z, 0)]
        prior = GaussianPrior(0.0, 0.5, "empirical", 4)
        bd = total_loss_and_grads(bags, prompts, prior, HyperParams())
        s_a = float(Z[0] @ prompts.effective_abnormal)
        assert bd.align == pytest.approx(
            alignment_loss(np.ones(4), np.full(4, s_a), 0.07), abs=1e-12)
        assert np.isfinite(bd.grad_delta_normal).all()
        assert np.isfinite(bd.grad_delta_abnormal).all()

    def test_lambda_zero_disables_deviation(self, rng):
        bags, prompts = random_instance(rng)
        hp = HyperParams(dev_weight=0.0)
        prior_a = GaussianPrior(0.1, 0.3, "empirical", 8)
        prior_b = GaussianPrior(-0.4, 2.0, "empirical", 8)
        bd_a = total_loss_and_grads(bags, prompts, prior_a, hp)
        bd_b = total_loss_and_grads(bags, prompts, prior_b, hp)
        assert bd_a.total == pytest.approx(bd_a.align, abs=1e-12)
        assert bd_a.total == bd_b.total
        assert np.array_equal(bd_a.grad_delta_abnormal, bd_b.grad_delta_abnormal)

    def test_gradients_match_finite_differences(self, rng):
        bags, prompts = random_instance(rng, d=8, P=4)
        prior = GaussianPrior(0.05, 0.4, "empirical", 8)
        hp = HyperParams(dev_weight=1.0, sign_mode="signed")
        fn, x0, grad = delta_loss_fn(bags, prompts, prior, hp)
        assert finite_difference_check(fn, x0, grad, h=1e-4) <= 1e-4

    def test_per_image_D_reported(self, rng):
        bags, prompts = random_instance(rng, labels=(0, 0, 1))
        prior = GaussianPrior(0.0, 1.0, "reference", 1000)
        bd = total_loss_and_grads(bags, prompts, prior, HyperParams())
        assert set(bd.per_image) == {"img_0", "img_1", "img_2"}

    def test_dim_mismatch_names_image(self, rng):
        bags, prompts = random_instance(rng, d=8)
        bad = Bag("bad_img", unit_rows(rng.standard_normal((4, 6))), 0)
        prior = GaussianPrior(0.0, 1.0, "reference", 1000)
        with pytest.raises(ValueError, match="bad_img"):
            total_loss_and_grads(bags + [bad], prompts, prior, HyperParams())


class TestFiniteDifferenceCheck:
    def test_quadratic_is_exact(self):
        A = np.diag([1.0, 2.0, 3.0])
        b = np.array([0.5, -1.0, 2.0])
        fn = lambda x: 0.5 * x @ A @ x + b @ x
        x0 = np.array([0.3, -0.7, 1.1])
        grad = A @ x0 + b
        assert finite_difference_check(fn, x0, grad, h=1e-4) <= 1e-8

    def test_tiny_step_degrades(self):
        fn = lambda x: float(np.sum(np.sin(x)))
        x0 = np.array([0.3, 1.2])
        grad = np.cos(x0)
        good = finite_difference_check(fn, x0, grad, h=1e-4)
        bad = finite_difference_check(fn, x0, grad, h=1e-12)
        # cancellation at h=1e-12 destroys the estimate; expected behavior
        assert bad > good

    def test_non_finite_evaluation_raises(self):
        fn = lambda x: float("nan")
        with pytest.raises(FloatingPointError):
            finite_difference_check(fn, np.zeros(2), np.zeros(2))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1),
       st.sampled_from(["signed", "absolute"]),
       st.sampled_from(["empirical", "reference"]),
       st.sampled_from([1.0, 0.1, 0.01]))
def test_gradcheck_across_modes(seed, sign_mode, prior_mode, dev_weight):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 17))
    P = int(rng.integers(1, 17))
    bags, prompts = random_instance(rng, d=d, P=P)
    if prior_mode == "empirical":
        prior = estimate_prior(rng.uniform(-1, 1, 32), mode="empirical")
    else:
        prior = estimate_prior(mode="reference", count=1000, seed=seed)
    hp = HyperParams(dev_weight=dev_weight, sign_mode=sign_mode, prior_mode=prior_mode)
    fn, x0, grad = delta_loss_fn(bags, prompts, prior, hp)
    assert finite_difference_check(fn, x0, grad, h=1e-4) <= 1e-4
