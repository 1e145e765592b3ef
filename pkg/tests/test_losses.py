import math

import numpy as np
import pytest
import torch

from garmnet.losses import (
    LossBundle,
    SpatialMask,
    classification_targets,
    garment_losses,
    landmark_classification_loss,
    landmark_regression_loss,
    robust_loss,
    spatial_constraint_loss,
    total_loss,
)


def depth_softmax(logits):
    return torch.softmax(logits, dim=-1)


def spatial_softmax(logits):
    # normalize each class plane over the grid
    b, h, w, c = logits.shape
    flat = logits.reshape(b, h * w, c)
    return torch.softmax(flat, dim=1).reshape(b, h, w, c)


def finite_difference(fn, x, h=1e-6):
    """Central differences of a scalar function w.r.t. every element of x."""
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        up = fn(x).item()
        flat[i] = orig - h
        down = fn(x).item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def max_rel_error(a, b):
    denom = torch.maximum(torch.maximum(a.abs(), b.abs()), torch.ones_like(a))
    return ((a - b).abs() / denom).max().item()


# ---------------------------------------------------------------------------
# robust loss

def test_robust_loss_zero_at_equality():
    assert robust_loss(1.7, 1.7).item() == 0.0


def test_robust_loss_quadratic_branch():
    assert robust_loss(0.3, 0.0).item() == pytest.approx(0.09, abs=1e-9)


def test_robust_loss_linear_branch():
    assert robust_loss(2.0, 0.0).item() == pytest.approx(2.0, abs=1e-9)


def test_robust_loss_even_and_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = float(rng.uniform(-5, 5))
        a = robust_loss(d, 0.0).item()
        b = robust_loss(-d, 0.0).item()
        assert a == b
        assert a >= 0


def test_robust_loss_branch_discontinuity_at_half():
    below = robust_loss(0.5 - 1e-9, 0.0).item()
    at = robust_loss(0.5, 0.0).item()
    assert below == pytest.approx(0.25, abs=1e-6)
    assert at == pytest.approx(0.5, abs=1e-12)


# ---------------------------------------------------------------------------
# landmark regression

def test_regression_loss_zero_when_exact():
    pred = torch.zeros(4, 4, 2)
    mask = np.zeros((4, 4), dtype=bool)
    mask[1, 1] = True
    assert landmark_regression_loss(pred, torch.zeros(4, 4, 2), mask).item() == 0.0


def test_regression_loss_zero_without_positives():
    pred = torch.randn(4, 4, 2)
    target = torch.randn(4, 4, 2)
    mask = np.zeros((4, 4), dtype=bool)
    assert landmark_regression_loss(pred, target, mask).item() == 0.0


def test_regression_loss_single_cell_hand_computed():
    pred = torch.zeros(4, 4, 2)
    target = torch.zeros(4, 4, 2)
    pred[2, 3] = torch.tensor([0.3, 2.0])
    mask = np.zeros((4, 4), dtype=bool)
    mask[2, 3] = True
    expected = (0.09 + 2.0) / 2
    assert landmark_regression_loss(pred, target, mask).item() == pytest.approx(expected, abs=1e-7)


def test_regression_loss_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        landmark_regression_loss(
            torch.zeros(4, 4, 2), torch.zeros(5, 5, 2), np.zeros((4, 4), dtype=bool)
        )


def test_regression_loss_mask_linearity_before_normalization():
    torch.manual_seed(0)
    pred = torch.randn(4, 4, 2)
    target = torch.randn(4, 4, 2)
    single_a = np.zeros((4, 4), dtype=bool)
    single_a[0, 1] = True
    single_b = np.zeros((4, 4), dtype=bool)
    single_b[3, 2] = True
    both = single_a | single_b
    summed_both = landmark_regression_loss(pred, target, both).item() * 4  # 2 cells x 2 channels
    summed_each = (
        landmark_regression_loss(pred, target, single_a).item() * 2
        + landmark_regression_loss(pred, target, single_b).item() * 2
    )
    assert summed_both == pytest.approx(summed_each, rel=1e-6)


# ---------------------------------------------------------------------------
# landmark classification

def test_classification_loss_near_zero_when_perfect():
    targets = np.zeros((3, 3, 5), dtype=np.float32)
    targets[1, 1, 2] = 1.0
    probs = torch.as_tensor(targets)
    mask = np.zeros((3, 3), dtype=bool)
    mask[1, 1] = True
    assert landmark_classification_loss(probs, targets, mask).item() <= 1e-6


def test_classification_loss_uniform_is_log_28():
    probs = torch.full((4, 4, 28), 1 / 28)
    targets = np.zeros((4, 4, 28), dtype=np.float32)
    targets[2, 2, 5] = 1.0
    mask = np.zeros((4, 4), dtype=bool)
    mask[2, 2] = True
    value = landmark_classification_loss(probs, targets, mask).item()
    assert value == pytest.approx(math.log(28), abs=1e-6)


def test_classification_loss_empty_mask_is_zero():
    probs = torch.rand(4, 4, 28)
    probs = probs / probs.sum(-1, keepdim=True)
    targets = np.zeros((4, 4, 28), dtype=np.float32)
    mask = np.zeros((4, 4), dtype=bool)
    assert landmark_classification_loss(probs, targets, mask).item() == 0.0


def test_classification_targets_encoding():
    label = np.array([[0, -1], [-2, 3]])
    onehot = classification_targets(label, n_classes=5)
    assert onehot[0, 0, 0] == 1.0
    assert onehot[0, 1, 5] == 1.0  # background channel
    assert onehot[1, 0].sum() == 0.0  # ignored
    assert onehot[1, 1, 3] == 1.0


# ---------------------------------------------------------------------------
# spatial constraint

def uniform_planes(b, s, c):
    return torch.full((b, s, s, c), 1.0 / (s * s))


def test_spatial_loss_near_zero_when_perfect():
    s, c = 4, 6
    targets = np.zeros((1, s, s, c), dtype=np.float32)
    targets[0, 1, 2, 3] = 1.0
    for i in range(s):
        for j in range(s):
            if (i, j) != (1, 2):
                targets[0, i, j, c - 1] = 1.0
    depth = torch.as_tensor(targets).clamp(1e-7, 1 - 1e-7)
    depth = depth / depth.sum(-1, keepdim=True)
    spatial = torch.as_tensor(targets) + 1e-9
    spatial = spatial / spatial.sum(dim=(1, 2), keepdim=True)
    mask = np.ones((1, s, s), dtype=bool)
    active = SpatialMask.from_labels(np.full((s, s), -1), c - 1).active_classes.copy()
    active[3] = True
    value = spatial_constraint_loss(depth, spatial, targets, mask, active[None]).item()
    assert value < 1e-4


def test_spatial_loss_reduces_to_half_depth_with_empty_spatial_mask():
    torch.manual_seed(1)
    s, c = 12, 28
    logits = torch.randn(1, s, s, c)
    depth = depth_softmax(logits)
    spatial = spatial_softmax(logits)
    targets = np.zeros((1, s, s, c), dtype=np.float32)
    targets[0, 3, 4, c - 1] = 1.0
    mask = np.zeros((1, s, s), dtype=bool)
    mask[0, 3, 4] = True
    active = np.zeros((1, c - 1), dtype=bool)
    composed = spatial_constraint_loss(depth, spatial, targets, mask, active).item()
    plain = landmark_classification_loss(depth, targets, mask).item()
    assert composed == pytest.approx(0.5 * plain, rel=1e-6)


def test_spatial_loss_uniform_plane_is_log_144():
    s, c = 12, 28
    depth = torch.full((1, s, s, c), 1.0 / c)
    spatial = uniform_planes(1, s, c)
    targets = np.zeros((1, s, s, c), dtype=np.float32)
    targets[0, 5, 7, 2] = 1.0
    mask = np.zeros((1, s, s), dtype=bool)
    mask[0, 5, 7] = True
    active = np.zeros((1, c - 1), dtype=bool)
    active[0, 2] = True
    value = spatial_constraint_loss(depth, spatial, targets, mask, active).item()
    depth_term = math.log(c)
    spatial_term = math.log(s * s)
    assert spatial_term == pytest.approx(4.9698, abs=1e-3)
    assert value == pytest.approx(0.5 * (depth_term + spatial_term), abs=1e-6)


def test_spatial_loss_rejects_unnormalized_inputs():
    s, c = 4, 6
    bad = torch.rand(1, s, s, c)
    good = depth_softmax(torch.randn(1, s, s, c))
    targets = np.zeros((1, s, s, c), dtype=np.float32)
    mask = np.zeros((1, s, s), dtype=bool)
    active = np.zeros((1, c - 1), dtype=bool)
    with pytest.raises(ValueError):
        spatial_constraint_loss(bad, spatial_softmax(torch.randn(1, s, s, c)), targets, mask, active)
    with pytest.raises(ValueError):
        spatial_constraint_loss(good, bad, targets, mask, active)


def test_spatial_loss_nonnegative_random():
    torch.manual_seed(2)
    rng = np.random.default_rng(2)
    for _ in range(20):
        s, c = 5, 7
        logits = torch.randn(2, s, s, c)
        targets = np.zeros((2, s, s, c), dtype=np.float32)
        labels = rng.integers(-1, c - 1, size=(2, s, s))
        for b in range(2):
            for i in range(s):
                for j in range(s):
                    k = labels[b, i, j]
                    targets[b, i, j, k if k >= 0 else c - 1] = 1.0
        mask = rng.random((2, s, s)) < 0.3
        active = rng.random((2, c - 1)) < 0.5
        value = spatial_constraint_loss(
            depth_softmax(logits), spatial_softmax(logits), targets, mask, active
        ).item()
        assert value >= 0.0


# ---------------------------------------------------------------------------
# garment losses

def test_garment_losses_perfect_prediction():
    target = np.zeros(9, dtype=np.float32)
    target[4] = 1.0
    probs = torch.as_tensor(target).clamp(1e-7, 1 - 1e-7)
    probs = probs / probs.sum()
    box = torch.tensor([0.5, 0.5, 0.2, 0.3])
    cls, reg = garment_losses(probs, target, box, box.clone())
    assert cls.item() <= 1e-5
    assert reg.item() == 0.0


def test_garment_losses_uniform_is_log_9():
    probs = torch.full((9,), 1 / 9)
    target = np.zeros(9, dtype=np.float32)
    target[0] = 1.0
    cls, _ = garment_losses(probs, target, torch.zeros(4), torch.zeros(4))
    assert cls.item() == pytest.approx(math.log(9), abs=1e-6)


def test_garment_losses_box_mse():
    probs = torch.full((9,), 1 / 9)
    target = np.zeros(9, dtype=np.float32)
    pred_box = torch.tensor([0.1, 0.1, 0.1, 0.1])
    true_box = torch.tensor([0.2, 0.2, 0.2, 0.2])
    _, reg = garment_losses(probs, target, pred_box, true_box)
    assert reg.item() == pytest.approx(0.01, abs=1e-9)


# ---------------------------------------------------------------------------
# aggregation

def test_total_loss_weighted_sum():
    comps = [torch.tensor(float(v)) for v in (1, 2, 3, 4)]
    bundle = total_loss(*comps)
    assert bundle.total.item() == 10.0


def test_total_loss_garment_only():
    comps = [torch.tensor(float(v)) for v in (1, 2, 3, 4)]
    bundle = total_loss(*comps, weights=(0, 0, 1, 1))
    assert bundle.total.item() == 7.0


def test_total_loss_landmark_only():
    comps = [torch.tensor(float(v)) for v in (1, 2, 3, 4)]
    bundle = total_loss(*comps, weights=(1, 1, 0, 0))
    assert bundle.total.item() == 3.0


def test_total_loss_rejects_negative_weights():
    comps = [torch.tensor(1.0)] * 4
    with pytest.raises(ValueError):
        total_loss(*comps, weights=(1, -1, 1, 1))


# ---------------------------------------------------------------------------
# gradient correctness against central finite differences (float64)

def random_grid_instance(rng, s=4, c=6):
    labels = rng.integers(-1, c - 1, size=(s, s))
    targets = np.zeros((s, s, c), dtype=np.float64)
    for i in range(s):
        for j in range(s):
            k = labels[i, j]
            targets[i, j, k if k >= 0 else c - 1] = 1.0
    mask = rng.random((s, s)) < 0.4
    mask |= labels >= 0
    return labels, targets, mask


@pytest.mark.parametrize("trial", range(5))
def test_regression_loss_gradients_match_finite_differences(trial):
    rng = np.random.default_rng(100 + trial)
    s = 4
    target = torch.tensor(rng.normal(0, 3, size=(s, s, 2)))
    mask = rng.random((s, s)) < 0.5
    mask[0, 0] = True
    # keep errors away from the 0 and 0.5 kinks so differences are clean
    raw = rng.uniform(0.6, 3.0, size=(s, s, 2)) * rng.choice([-1, 1], size=(s, s, 2))
    pred = torch.tensor(target.numpy() + raw, requires_grad=True)

    loss = landmark_regression_loss(pred, target, mask)
    loss.backward()
    fd = finite_difference(
        lambda x: landmark_regression_loss(x, target, mask), pred.detach().clone()
    )
    assert max_rel_error(pred.grad, fd) < 1e-3


@pytest.mark.parametrize("trial", range(5))
def test_classification_loss_gradients_match_finite_differences(trial):
    rng = np.random.default_rng(200 + trial)
    s, c = 4, 6
    _, targets, mask = random_grid_instance(rng, s, c)
    logits = torch.tensor(rng.normal(0, 1, size=(s, s, c)), requires_grad=True)

    def fn(x):
        return landmark_classification_loss(torch.softmax(x, dim=-1), targets, mask)

    loss = fn(logits)
    loss.backward()
    fd = finite_difference(fn, logits.detach().clone())
    assert max_rel_error(logits.grad, fd) < 1e-3


@pytest.mark.parametrize("trial", range(5))
def test_spatial_loss_gradients_match_finite_differences(trial):
    rng = np.random.default_rng(300 + trial)
    s, c = 4, 6
    labels, targets, mask = random_grid_instance(rng, s, c)
    active = SpatialMask.from_labels(labels, c - 1).active_classes
    logits = torch.tensor(rng.normal(0, 1, size=(1, s, s, c)), requires_grad=True)

    def fn(x):
        flat = x.reshape(1, s * s, c)
        sp = torch.softmax(flat, dim=1).reshape(1, s, s, c)
        return spatial_constraint_loss(
            torch.softmax(x, dim=-1), sp, targets[None], mask[None], active[None]
        )

    loss = fn(logits)
    loss.backward()
    fd = finite_difference(fn, logits.detach().clone())
    assert max_rel_error(logits.grad, fd) < 1e-3


@pytest.mark.parametrize("trial", range(5))
def test_garment_loss_gradients_match_finite_differences(trial):
    rng = np.random.default_rng(400 + trial)
    target = np.zeros(9)
    target[rng.integers(0, 9)] = 1.0
    true_box = rng.uniform(0, 1, size=4)
    logits = torch.tensor(rng.normal(0, 1, size=9), requires_grad=True)
    box = torch.tensor(rng.normal(0, 1, size=4), requires_grad=True)

    def fn_cls(x):
        return garment_losses(torch.softmax(x, dim=-1), target, box.detach(), true_box)[0]

    def fn_reg(x):
        return garment_losses(torch.softmax(logits.detach(), dim=-1), target, x, true_box)[1]

    fn_cls(logits).backward()
    fd_cls = finite_difference(fn_cls, logits.detach().clone())
    assert max_rel_error(logits.grad, fd_cls) < 1e-3

    fn_reg(box).backward()
    fd_reg = finite_difference(fn_reg, box.detach().clone())
    assert max_rel_error(box.grad, fd_reg) < 1e-3
