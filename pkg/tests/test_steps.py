import numpy as np
import pytest

from conftest import linear_model
from istr.detect.steps import (
    RunCounter, earliest_flip, input_gradient, steps_opposite, steps_opposite_batch, steps_unconstrained,
)
from istr.errors import ArgumentError, DimensionError


def _simulate_opposite(weight, x, label, mask, budget, step, objective="spread"):
    """Plain numpy replay of the dense mutation rule for a linear model."""
    weight = np.asarray(weight, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    mask = np.ones_like(x) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    classes = weight.shape[1]
    u = np.zeros_like(x)
    t = np.zeros_like(x)
    for epoch in range(budget + 1):
        z = (x + t) @ weight
        if epoch > 0 and z.argmax() != label:
            return epoch, int(z.argmax()), t
        if epoch == budget:
            return None, None, t
        p = np.exp(z - z.max())
        p /= p.sum()
        if objective == "label":
            p[label] -= 1.0
            u = np.clip(u + step * np.sign(weight @ p), -1.0, 1.0)
        else:
            q = np.full(classes, 1.0 / (classes - 1))
            q[label] = 0.0
            u = np.clip(u - step * np.sign(weight @ (p - q)), -1.0, 1.0)
        t = np.clip(x + u * mask, 0.0, 1.0) - x


def test_input_gradient_of_linear_model():
    model = linear_model(np.eye(2))
    logits, grad = input_gradient(model, np.array([[[[0.6, 0.4]]]], dtype=np.float32), np.array([0]))
    np.testing.assert_allclose(logits, [[0.6, 0.4]], rtol=1e-6)
    assert np.sign(grad[0, 0, 0]).tolist() == [-1.0, 1.0]


def test_opposite_flip_epoch_on_two_class_linear_model():
    model = linear_model(np.eye(2))
    x = np.array([[[0.6, 0.4]]], dtype=np.float32)
    counter = RunCounter()
    result = steps_opposite(model, x, 0, budget=50, step_size=0.03, counter=counter, fraction=None)
    assert result.flip_epoch == 4
    assert result.flipped_to == 1
    assert result.trace == [0, 0, 0, 1]
    np.testing.assert_allclose(result.reverse_trigger[0, 0], [-0.12, 0.12], atol=1e-6)
    assert counter.runs == 1


def test_mask_restricts_the_perturbation():
    model = linear_model(np.eye(2))
    x = np.array([[[0.6, 0.4]]], dtype=np.float32)
    mask = np.array([[[0.0, 1.0]]], dtype=np.float32)
    result = steps_opposite(model, x, 0, mask, budget=50, step_size=0.03, fraction=None)
    assert result.flip_epoch == 7
    assert result.reverse_trigger[0, 0, 0] == 0.0


def test_clamping_keeps_stamped_input_in_range():
    model = linear_model(np.eye(2))
    x = np.array([[[0.98, 0.97]]], dtype=np.float32)
    result = steps_opposite(model, x, 0, budget=50, step_size=0.05)
    stamped = x + result.reverse_trigger
    assert stamped.min() >= 0.0 and stamped.max() <= 1.0
    assert result.flipped


def test_budget_exhaustion_reports_no_flip():
    model = linear_model(np.eye(2))
    x = np.array([[[0.9, 0.1]]], dtype=np.float32)
    result = steps_opposite(model, x, 0, budget=3, step_size=0.01)
    assert result.flip_epoch is None
    assert not result.flipped
    assert len(result.trace) == 3


@pytest.mark.parametrize("objective", ["spread", "label"])
@pytest.mark.parametrize("seed", range(5))
def test_batch_matches_numpy_simulation(seed, objective):
    rng = np.random.default_rng(seed)
    weight = rng.standard_normal((4, 3))
    model = linear_model(weight, shape=(1, 2, 2))
    images = rng.uniform(size=(6, 1, 2, 2)).astype(np.float32)
    labels = model.classify(images)
    masks = (rng.uniform(size=(6, 1, 2, 2)) > 0.3).astype(np.float32)
    results = steps_opposite_batch(model, images, labels, masks, budget=40, step_size=0.02, fraction=None,
                                   objective=objective)
    for img, label, mask, result in zip(images, labels, masks, results):
        epoch, target, t = _simulate_opposite(weight, img, label, mask, 40, 0.02, objective)
        assert result.flip_epoch == epoch
        assert result.flipped_to == target
        np.testing.assert_allclose(result.reverse_trigger.reshape(-1), t, atol=1e-5)


def test_batch_rows_are_independent():
    model = linear_model(np.eye(2))
    images = np.array([[[[0.6, 0.4]]], [[[0.9, 0.1]]]], dtype=np.float32)
    batch = steps_opposite_batch(model, images, np.array([0, 0]), budget=50, step_size=0.03, fraction=None)
    single = steps_opposite(model, images[0], 0, budget=50, step_size=0.03, fraction=None)
    assert batch[0].flip_epoch == single.flip_epoch == 4
    assert batch[1].flip_epoch > batch[0].flip_epoch


def test_unconstrained_traversal_runs_every_target():
    model = linear_model(np.eye(3), shape=(1, 1, 3))
    x = np.array([[[0.5, 0.3, 0.1]]], dtype=np.float32)
    counter = RunCounter()
    per_target = steps_unconstrained(model, x, 0, budget=50, step_size=0.03, counter=counter, fraction=None)
    assert sorted(per_target) == [1, 2]
    assert per_target[1].flip_epoch == 4
    assert per_target[2].flip_epoch == 7
    assert counter.runs == 2
    first = earliest_flip(per_target)
    assert first.target == 1 and first.flipped_to == 1


def test_opposite_needs_one_run_versus_c_minus_one():
    model = linear_model(np.eye(4), shape=(1, 1, 4))
    x = np.array([[[0.7, 0.3, 0.2, 0.1]]], dtype=np.float32)
    opposite, traversal = RunCounter(), RunCounter()
    steps_opposite(model, x, 0, budget=30, step_size=0.02, counter=opposite)
    steps_unconstrained(model, x, 0, budget=30, step_size=0.02, counter=traversal)
    assert opposite.runs == 1
    assert traversal.runs == 3


def test_earliest_flip_without_flips():
    model = linear_model(np.eye(2))
    x = np.array([[[0.99, 0.0]]], dtype=np.float32)
    assert earliest_flip(steps_unconstrained(model, x, 0, budget=2, step_size=0.01)) is None


def test_invalid_budget_step_and_mask():
    model = linear_model(np.eye(2))
    x = np.array([[[0.6, 0.4]]], dtype=np.float32)
    with pytest.raises(ArgumentError):
        steps_opposite(model, x, 0, budget=0)
    with pytest.raises(ArgumentError):
        steps_opposite(model, x, 0, step_size=0.0)
    with pytest.raises(DimensionError):
        steps_opposite(model, x, 0, mask=np.ones((1, 2, 2)))
    with pytest.raises(ArgumentError):
        steps_opposite(model, x, 0, fraction=0.0)
    with pytest.raises(ArgumentError):
        steps_opposite(model, x, 0, objective="sideways")


def test_model_parameters_are_left_untouched():
    model = linear_model(np.eye(2))
    before = [p.data.copy() for p in model.parameters()]
    steps_opposite(model, np.array([[[0.6, 0.4]]], dtype=np.float32), 0, budget=10, step_size=0.03)
    for p, q in zip(model.parameters(), before):
        np.testing.assert_array_equal(p.data, q)
        assert p.requires_grad


def test_sparse_steps_move_only_the_strongest_pixel():
    # pixel 2 feeds class 1 three times harder than the others
    model = linear_model([[1.0, 0.0], [0.0, 1.0], [0.0, 3.0]], shape=(1, 1, 3))
    x = np.array([[[0.8, 0.2, 0.0]]], dtype=np.float32)
    sparse = steps_opposite(model, x, 0, budget=10, step_size=0.15, fraction=0.34)
    assert sparse.flip_epoch == 2 and sparse.flipped_to == 1
    np.testing.assert_allclose(sparse.reverse_trigger[0, 0], [0.0, 0.0, 0.3], atol=1e-6)
    dense = steps_opposite(model, x, 0, budget=10, step_size=0.15, fraction=None)
    assert dense.flip_epoch == 1
    assert np.count_nonzero(dense.reverse_trigger) == 3


def test_sparse_steps_skip_pixels_that_cannot_move():
    # pixel 0 wants to fall but already sits at 0
    model = linear_model(np.eye(2), bias=[1.0, 0.0])
    x = np.array([[[0.0, 0.5]]], dtype=np.float32)
    result = steps_opposite(model, x, 0, budget=10, step_size=0.2, fraction=0.5)
    assert result.flip_epoch == 3 and result.flipped_to == 1
    np.testing.assert_allclose(result.reverse_trigger[0, 0], [0.0, 0.6], atol=1e-6)


def test_spread_objective_finds_the_shortcut_class():
    # class 1 is the runner-up; class 2 is far but one pixel moves it fast
    model = linear_model(np.diag([1.0, 1.0, 5.0]), bias=[0.0, 0.3, -2.0], shape=(1, 1, 3))
    x = np.array([[[0.5, 0.0, 0.0]]], dtype=np.float32)
    label = steps_opposite(model, x, 0, budget=10, step_size=0.15, fraction=0.34, objective="label")
    spread = steps_opposite(model, x, 0, budget=10, step_size=0.15, fraction=0.34, objective="spread")
    assert (label.flip_epoch, label.flipped_to) == (2, 1)
    assert (spread.flip_epoch, spread.flipped_to) == (4, 2)
    np.testing.assert_allclose(spread.reverse_trigger[0, 0], [0.0, 0.0, 0.6], atol=1e-6)


def test_sparse_steps_respect_the_mask():
    model = linear_model([[1.0, 0.0], [0.0, 1.0], [0.0, 3.0]], shape=(1, 1, 3))
    x = np.array([[[0.8, 0.2, 0.0]]], dtype=np.float32)
    mask = np.array([[[1.0, 1.0, 0.0]]], dtype=np.float32)
    result = steps_opposite(model, x, 0, mask, budget=10, step_size=0.15, fraction=0.34)
    assert result.reverse_trigger[0, 0, 2] == 0.0
    assert result.flipped_to == 1
