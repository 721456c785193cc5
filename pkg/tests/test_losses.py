import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from magicforge.gradcheck import check_cosine, check_dice, check_focal, rel_error, central_diff
from magicforge.losses import (EPS, LossWeights, bce, counterfactual_cosine_loss, dice_loss, focal_loss,
                               total_loss)


def reference_bce(pred, gt):
    # independent element-wise loop
    total = 0.0
    for p, y in zip(np.ravel(pred), np.ravel(gt)):
        p = min(max(p, EPS), 1 - EPS)
        total += -(y * math.log(p) + (1 - y) * math.log(1 - p))
    return total / np.size(pred)


def test_focal_perfect_prediction():
    gt = np.zeros((2, 3, 3))
    gt[0, 1, 1] = 1
    value, _ = focal_loss(gt.copy(), gt, 2.0)  # clamped to 1-eps / eps
    assert abs(value) < 1e-5


def test_focal_single_pixel_hand_value():
    # -(1 - 0.5)^2 * log(0.5)
    value, _ = focal_loss(np.full((1, 1, 1), 0.5), np.ones((1, 1, 1)), 2.0)
    assert value == pytest.approx(0.25 * math.log(2), abs=1e-12)
    assert value == pytest.approx(0.173287, abs=1e-6)


def test_focal_alpha_zero_is_bce():
    rng = np.random.default_rng(5)
    pred = rng.uniform(0.001, 0.999, size=(3, 5, 4))
    gt = (rng.uniform(size=pred.shape) < 0.3).astype(float)
    value, _ = focal_loss(pred, gt, 0.0)
    assert abs(value - reference_bce(pred, gt)) < 1e-9
    assert abs(bce(pred, gt) - reference_bce(pred, gt)) < 1e-12


def test_focal_errors():
    with pytest.raises(ValueError):
        focal_loss(np.full((1, 2, 2), 0.5), np.ones((1, 2, 3)))
    with pytest.raises(ValueError):
        focal_loss(np.full((1, 2, 2), 0.5), np.full((1, 2, 2), 0.5))


@pytest.mark.parametrize("seed", range(10))
def test_focal_gradient_finite_differences(seed):
    assert check_focal(seed) < 1e-5


def test_dice_perfect_and_worst():
    gt = np.zeros((2, 4, 4))
    gt[0, :2] = 1
    gt[1, 3, 3] = 1
    assert dice_loss(gt.copy(), gt)[0] == 0.0
    assert dice_loss(np.ones((1, 3, 3)), np.zeros((1, 3, 3)))[0] == 1.0


def test_dice_empty_plane_contributes_nothing():
    value, grad = dice_loss(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)))
    assert value == 0.0 and not grad.any()


@pytest.mark.parametrize("seed", range(10))
def test_dice_gradient_finite_differences(seed):
    assert check_dice(seed) < 1e-5


def test_cosine_identical_vectors():
    a = np.array([0.6, 0.8])
    value, ga, gb = counterfactual_cosine_loss(a, a)
    assert value == pytest.approx(1.0)
    # projection form: b/(|a||b|) - cos a/|a|^2 vanishes for identical unit vectors
    assert np.allclose(ga, 0) and np.allclose(gb, 0)
    value, ga, _ = counterfactual_cosine_loss(a, np.array([1.0, 0.0]))
    assert ga @ a == pytest.approx(0.0, abs=1e-12)  # gradient orthogonal to a


def test_cosine_orthogonal_and_antiparallel():
    assert counterfactual_cosine_loss([1, 0], [0, 3])[0] == 0.0
    value, ga, gb = counterfactual_cosine_loss([1, 2], [-1, -2])
    assert value == 0.0 and not ga.any() and not gb.any()


def test_cosine_zero_vector():
    with pytest.raises(ValueError):
        counterfactual_cosine_loss([0, 0], [1, 1])


@pytest.mark.parametrize("seed", range(10))
def test_cosine_gradient_finite_differences(seed):
    assert check_cosine(seed) < 1e-5


def _inputs(seed, shape=(3, 4, 4), d=6):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0.05, 0.95, size=shape)
    gt = (rng.uniform(size=shape) < 0.3).astype(float)
    return pred, gt, rng.normal(size=d), rng.normal(size=d)


def test_total_zero_weights():
    pred, gt, a, b = _inputs(0)
    terms = total_loss(pred, gt, a, b, LossWeights(0, 0, 0))
    assert terms.total == 0.0 and not terms.d_pred.any()


def test_total_vanishes_on_perfect_inputs():
    gt = np.zeros((2, 4, 4))
    gt[0, 1:3, 1:3] = 1
    terms = total_loss(gt.copy(), gt, np.array([1.0, 0.0]), np.array([0.0, 1.0]), LossWeights(100, 1, 1))
    assert terms.total == pytest.approx(0.0, abs=1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_total_linear_in_weights(seed):
    pred, gt, a, b = _inputs(seed)
    w = LossWeights(100, 1, 1, 2)
    t1 = total_loss(pred, gt, a, b, w)
    t2 = total_loss(pred, gt, a, b, w.scaled(2))
    assert t2.total == pytest.approx(2 * t1.total, rel=1e-14)
    assert np.allclose(t2.d_pred, 2 * t1.d_pred, rtol=1e-14, atol=0)
    assert np.allclose(t2.d_cls, 2 * t1.d_cls, rtol=1e-14, atol=0)


def test_total_gradient_matches_components():
    pred, gt, a, b = _inputs(3)
    w = LossWeights(3, 2, 1.5, 2)
    terms = total_loss(pred, gt, a, b, w)
    num = central_diff(lambda p: total_loss(p, gt, a, b, w).total, pred)
    assert rel_error(terms.d_pred, num) < 1e-5


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(w1=-1)


prob_arrays = arrays(np.float64, (2, 3, 3), elements=st.floats(1e-4, 1 - 1e-4))
gt_arrays = arrays(np.float64, (2, 3, 3), elements=st.sampled_from([0.0, 1.0]))


@settings(max_examples=150, deadline=None)
@given(prob_arrays, gt_arrays, st.floats(0, 4))
def test_loss_ranges(pred, gt, alpha):
    assert focal_loss(pred, gt, alpha)[0] >= 0
    assert 0 <= dice_loss(pred, gt)[0] <= 1


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-10, 10)), arrays(np.float64, 5, elements=st.floats(-10, 10)))
def test_cosine_range(a, b):
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    assert 0 <= counterfactual_cosine_loss(a, b)[0] <= 1 + 1e-12


@settings(max_examples=100, deadline=None)
@given(prob_arrays, gt_arrays, st.permutations([0, 1]))
def test_plane_permutation_invariance(pred, gt, perm):
    assert focal_loss(pred[perm], gt[perm])[0] == pytest.approx(focal_loss(pred, gt)[0], rel=1e-12)
    assert dice_loss(pred[perm], gt[perm])[0] == pytest.approx(dice_loss(pred, gt)[0], rel=1e-12)
