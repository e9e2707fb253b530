import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bcseg.losses import (
    BCE_EPS,
    DICE_SMOOTH,
    LossWeights,
    NumericalError,
    boundary_bce_grad,
    boundary_bce_loss,
    boundary_loss_from_logits,
    combined_loss,
    combined_loss_from_logits,
    dice_per_class,
    dice_region_grad,
    dice_region_loss,
    grad_check,
    region_loss_from_logits,
    softmax,
)
from bcseg.training import bce_loss_t, dice_loss_t
from bcseg.volume import one_hot

import oracles


def _fixture(rng, C=3, n=4):
    target = one_hot(rng.integers(0, C, (n, n, n)), C).astype(float)
    prob = softmax(rng.normal(size=(C, n, n, n)), 0)
    return prob, target


def test_dice_perfect_overlap_is_zero():
    labels = np.arange(8).reshape(2, 2, 2) % 3
    t = one_hot(labels, 3).astype(float)
    assert dice_region_loss(t, t, smooth=0.0) == 0.0


def test_dice_disjoint_foreground():
    t = one_hot(np.array([0, 1, 2, 1, 2, 0, 1, 2]).reshape(2, 2, 2), 3).astype(float)
    p = one_hot(np.array([0, 2, 1, 2, 1, 0, 2, 1]).reshape(2, 2, 2), 3).astype(float)
    d = dice_per_class(p, t, smooth=0.0)
    assert d[1] == 0.0 and d[2] == 0.0 and d[0] == 1.0


def test_dice_hand_set_matches_loop():
    p1 = np.array([0.9, 0.2, 0.6, 0.1, 0.5, 0.7, 0.3, 0.8]).reshape(2, 2, 2)
    prob = np.stack([1 - p1, p1])
    target = one_hot(np.array([1, 0, 1, 0, 0, 1, 0, 1]).reshape(2, 2, 2), 2).astype(float)
    assert dice_region_loss(prob, target, 0.0) == pytest.approx(oracles.dice_loss(prob, target, 0.0), abs=1e-14)
    assert dice_region_loss(prob, target) == pytest.approx(oracles.dice_loss(prob, target, DICE_SMOOTH), abs=1e-14)


def test_dice_absent_class_with_empty_prediction():
    t = one_hot(np.zeros((2, 2, 2), int), 2).astype(float)
    assert dice_per_class(t, t)[1] == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dice_range_and_symmetry(seed):
    prob, target = _fixture(np.random.default_rng(seed))
    loss = dice_region_loss(prob, target)
    assert 0.0 <= loss <= 1.0
    assert dice_region_loss(target, prob) == pytest.approx(loss, abs=1e-15)


def test_dice_batch_is_mean():
    rng = np.random.default_rng(0)
    a, b = _fixture(rng), _fixture(rng)
    batch = dice_region_loss(np.stack([a[0], b[0]]), np.stack([a[1], b[1]]))
    assert batch == pytest.approx((dice_region_loss(*a) + dice_region_loss(*b)) / 2)


def test_dice_shape_mismatch():
    with pytest.raises(ValueError):
        dice_region_loss(np.zeros((2, 2, 2, 2)), np.zeros((3, 2, 2, 2)))


def test_bce_cases():
    e = (np.random.default_rng(1).random((3, 3, 3)) < 0.3).astype(float)
    assert 0.0 <= boundary_bce_loss(e, e) <= -math.log(1 - BCE_EPS) + 1e-15
    assert boundary_bce_loss(np.full((3, 3, 3), 0.5), e) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        boundary_bce_loss(np.zeros((2, 2, 2)), np.zeros((3, 2, 2)))


def test_bce_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    p, e = rng.random((3, 3, 3)), (rng.random((3, 3, 3)) < 0.5).astype(float)
    p[0, 0, 0] = 0.0  # exercises the clamp
    assert boundary_bce_loss(p, e) == pytest.approx(oracles.bce(p, e, BCE_EPS), rel=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bce_minimised_at_target(seed):
    rng = np.random.default_rng(seed)
    e = (rng.random((3, 3, 3)) < 0.4).astype(float)
    other = rng.random((3, 3, 3))
    assert boundary_bce_loss(other, e) >= boundary_bce_loss(e, e) >= 0


def test_combined_loss_degenerations():
    rng = np.random.default_rng(3)
    prob, target = _fixture(rng)
    ep, et = rng.random((4, 4, 4)), (rng.random((4, 4, 4)) < 0.2).astype(float)
    zero = combined_loss(prob, target, ep, et, LossWeights(0.0))
    assert zero.total == zero.region
    b = combined_loss(prob, target, ep, et, LossWeights(1.5))
    want = oracles.dice_loss(prob, target, DICE_SMOOTH) + 1.5 * oracles.bce(ep, et, BCE_EPS)
    assert b.total == pytest.approx(want, rel=1e-12)
    # affine in lambda with slope L_BD
    lams = [0.0, 0.5, 1.0, 2.0]
    totals = [combined_loss(prob, target, ep, et, LossWeights(l)).total for l in lams]
    slopes = np.diff(totals) / np.diff(lams)
    np.testing.assert_allclose(slopes, b.boundary, rtol=1e-12)


def test_combine_arithmetic():
    from bcseg.losses import combine

    assert combine(0.3, 0.2, LossWeights(1.0)).total == pytest.approx(0.5)
    with pytest.raises(ValueError):
        LossWeights(-1.0)


def test_grad_check_on_quadratic():
    A = np.random.default_rng(4).normal(size=(5, 5))
    A = A @ A.T

    def f(x):
        return 0.5 * x @ A @ x, A @ x

    assert grad_check(f, np.ones(5), step=1e-4, n_coords=None) < 1e-8


def test_grad_check_flags_non_finite():
    with pytest.raises(NumericalError):
        grad_check(lambda x: (float("nan"), x), np.ones(3))


def test_dice_grad_wrt_prob_at_step_1e3():
    rng = np.random.default_rng(5)
    for _ in range(3):
        prob, target = _fixture(rng)
        err = grad_check(
            lambda p: (dice_region_loss(p, target), dice_region_grad(p, target)), prob, step=1e-3, n_coords=None
        )
        assert err < 1e-4


def test_bce_grad_wrt_prob():
    rng = np.random.default_rng(6)
    p = rng.uniform(0.05, 0.95, (4, 4, 4))
    e = (rng.random((4, 4, 4)) < 0.3).astype(float)
    err = grad_check(lambda q: (boundary_bce_loss(q, e), boundary_bce_grad(q, e)), p, n_coords=None)
    assert err < 1e-6


def test_logit_gradients():
    rng = np.random.default_rng(7)
    z = rng.normal(size=(3, 4, 4, 4))
    _, t = _fixture(rng)
    zb = rng.normal(size=(4, 4, 4))
    e = (rng.random((4, 4, 4)) < 0.3).astype(float)
    assert grad_check(lambda th: region_loss_from_logits(th, t), z, n_coords=None) < 1e-4
    assert grad_check(lambda th: boundary_loss_from_logits(th, e), zb, n_coords=None) < 1e-4

    theta = np.concatenate([z.ravel(), zb.ravel()])

    def joint(th):
        br, gr, gb = combined_loss_from_logits(th[: z.size].reshape(z.shape), t, th[z.size :].reshape(zb.shape), e, LossWeights(0.5))
        return br.total, np.concatenate([gr.ravel(), gb.ravel()])

    assert grad_check(joint, theta, n_coords=None) < 1e-4


def test_torch_losses_match_numpy():
    rng = np.random.default_rng(8)
    prob, target = _fixture(rng)
    ep, et = rng.random((4, 4, 4)), (rng.random((4, 4, 4)) < 0.2).astype(float)
    dl = dice_loss_t(torch.from_numpy(prob[None]), torch.from_numpy(target[None])).item()
    bl = bce_loss_t(torch.from_numpy(ep), torch.from_numpy(et)).item()
    assert dl == pytest.approx(dice_region_loss(prob, target), rel=1e-12)
    assert bl == pytest.approx(boundary_bce_loss(ep, et), rel=1e-12)


def test_torch_autograd_matches_closed_form():
    rng = np.random.default_rng(9)
    z = rng.normal(size=(1, 3, 4, 4, 4))
    _, t = _fixture(rng)
    zt = torch.from_numpy(z).requires_grad_()
    dice_loss_t(torch.softmax(zt, 1), torch.from_numpy(t[None])).backward()
    _, g = region_loss_from_logits(z, t[None])
    np.testing.assert_allclose(zt.grad.numpy(), g, rtol=1e-9, atol=1e-14)
