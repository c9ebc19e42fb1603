import numpy as np
import pytest

from conftest import linear_model
from istr.data.triggers import patch_trigger
from istr.data_models import Dataset, ReverseTrigger
from istr.errors import ArgumentError, StateError
from istr.repair.unlearn import (
    attack_success, build_unlearn_set, stamped_test_sets, unlearn_finetune, verify_repair,
)


def _reverse(shape, source, target):
    delta = np.zeros(shape, dtype=np.float32)
    delta[:, :3, -3:] = 1.0
    return ReverseTrigger(source, target, delta=delta)


def test_unlearn_set_adds_stamped_source_samples(digits_test):
    trig = {(1, 8): _reverse(digits_test.image_shape, 1, 8), (2, 8): _reverse(digits_test.image_shape, 2, 8)}
    out = build_unlearn_set(digits_test, trig, [(1, 8), (2, 8)], mix=0.2, seed=0)
    extra = len(out) - len(digits_test)
    assert extra == round(0.2 * len(digits_test))
    added = out.labels[len(digits_test):]
    assert set(added.tolist()) == {1, 2}
    assert 8 not in added
    assert np.all(out.images[len(digits_test):, :, :3, -3:] == 1.0)
    assert out.provenance == "stamped"
    np.testing.assert_array_equal(out.images[:len(digits_test)], digits_test.images)


def test_unlearn_set_is_seeded(digits_test):
    trig = {(1, 8): _reverse(digits_test.image_shape, 1, 8)}
    a = build_unlearn_set(digits_test, trig, [(1, 8)], seed=3)
    b = build_unlearn_set(digits_test, trig, [(1, 8)], seed=3)
    np.testing.assert_array_equal(a.images, b.images)


def test_unlearn_set_edge_cases(digits_test):
    trig = {(1, 8): _reverse(digits_test.image_shape, 1, 8)}
    assert build_unlearn_set(digits_test, trig, [(1, 8)], mix=0.0) is digits_test
    with pytest.raises(StateError):
        build_unlearn_set(digits_test, {}, [(1, 8)])
    with pytest.raises(ArgumentError):
        build_unlearn_set(digits_test, trig, [(1, 8)], mix=1.5)


def test_finetune_leaves_the_original_untouched(trained_tiny, digits_test):
    trig = {(1, 8): _reverse(digits_test.image_shape, 1, 8)}
    unlearn_set = build_unlearn_set(digits_test, trig, [(1, 8)], mix=0.2)
    before = [p.data.copy() for p in trained_tiny.parameters()]
    repaired, history = unlearn_finetune(trained_tiny, unlearn_set, epochs=1, lr=0.005, batch_size=32)
    for p, q in zip(trained_tiny.parameters(), before):
        np.testing.assert_array_equal(p.data, q)
    assert repaired is not trained_tiny
    assert repaired.metadata["repaired"] == "true"
    assert len(history.epochs) == 1


def test_stamped_sets_keep_source_labels(digits_test):
    trigger = patch_trigger(digits_test.image_shape, target=8)
    sets = stamped_test_sets(digits_test, [(1, 8), (2, 8)], lambda images, pair: trigger.apply(images))
    assert sorted(sets) == [(1, 8), (2, 8)]
    assert np.all(sets[(1, 8)].labels == 1)


def test_verify_repair_reports_both_sides():
    # the "repaired" model shifts class-0 inputs back by preferring class 0 more strongly
    original = linear_model(np.eye(2))
    repaired = linear_model(np.eye(2), bias=[0.5, 0.0])
    images = np.array([[[[0.45, 0.55]]], [[[0.48, 0.52]]]], dtype=np.float32)
    stamped = {(0, 1): Dataset(images, np.array([0, 0]), 2, "stamped")}
    clean = Dataset(np.array([[[[0.9, 0.1]]], [[[0.1, 0.9]]]], dtype=np.float32), np.array([0, 1]), 2)
    report = verify_repair(original, repaired, clean, stamped)
    assert report.asr_before[(0, 1)] == 1.0
    assert report.asr_after[(0, 1)] == 0.0
    assert report.nsr_before == 1.0
    frame = report.to_frame()
    assert list(frame.columns) == ["source", "target", "asr_before", "asr_after"]
    assert report.to_dict()["pairs"][0]["asr_after"] == 0.0


def test_attack_success_needs_samples():
    model = linear_model(np.eye(2))
    empty = Dataset(np.zeros((0, 1, 1, 2), dtype=np.float32), np.zeros(0, dtype=np.int64), 2)
    with pytest.raises(ArgumentError):
        attack_success(model, empty, 1)
