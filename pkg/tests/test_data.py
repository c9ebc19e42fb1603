import gzip
import struct

import numpy as np
import pytest

from istr.data import attacks
from istr.data.datasets import DatasetSource, load_dataset, read_idx, split_defense, synthetic
from istr.data.imageio import export_array, load_image, load_raw
from istr.data.poison import poison, poison_count, poison_many, stamp, synth_innocuous_feature
from istr.data.triggers import arc_glyph, default_patch_size, patch_trigger, sine_trigger
from istr.data_models import FeatureSpec, PoisonConfig
from istr.errors import ConfigError, DatasetFormatError, DimensionError


def _write_idx(path, array, code=0x08):
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with gzip.open(path, "wb") as f:
        f.write(header + array.astype(">u1").tobytes())


# datasets

def test_read_idx_and_idx_dataset(tmp_path):
    images = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    labels = np.array([1, 0], dtype=np.uint8)
    _write_idx(tmp_path / "img.gz", images)
    _write_idx(tmp_path / "lab.gz", labels)
    np.testing.assert_array_equal(read_idx(tmp_path / "img.gz"), images)
    ds = load_dataset(DatasetSource("idx", "train", images=str(tmp_path / "img.gz"),
                                    labels=str(tmp_path / "lab.gz")))
    assert ds.image_shape == (1, 3, 3)
    assert ds.images.max() <= 1.0
    np.testing.assert_array_equal(ds.labels, [1, 0])


def test_read_idx_rejects_bad_header_and_payload(tmp_path):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x01\x02\x08\x01" + struct.pack(">I", 4) + b"\0" * 4)
    with pytest.raises(DatasetFormatError):
        read_idx(bad)
    short = tmp_path / "short.idx"
    short.write_bytes(b"\0\0\x08\x01" + struct.pack(">I", 10) + b"\0" * 4)
    with pytest.raises(DatasetFormatError):
        read_idx(short)


def test_synthetic_is_seeded_and_balanced():
    a = synthetic("synthetic-digits", "train", 100, seed=4)
    b = synthetic("synthetic-digits", "train", 100, seed=4)
    c = synthetic("synthetic-digits", "test", 100, seed=4)
    np.testing.assert_array_equal(a.images, b.images)
    assert not np.array_equal(a.images, c.images)
    assert a.image_shape == (1, 28, 28)
    np.testing.assert_array_equal(a.class_counts(), [10] * 10)
    gtsrb = synthetic("synthetic-gtsrb", "train", 86)
    assert gtsrb.image_shape == (3, 32, 32) and gtsrb.class_count == 43


def test_dataset_source_validation():
    with pytest.raises(ConfigError):
        DatasetSource("cifar")
    with pytest.raises(ConfigError):
        DatasetSource("mnist", split="val")
    with pytest.raises(ConfigError):
        DatasetSource("mnist", limit=0)


def test_split_defense_is_disjoint_and_ordered(digits_test):
    defense, heldout = split_defense(digits_test, 0.5)
    assert len(defense) + len(heldout) == len(digits_test)
    np.testing.assert_array_equal(defense.images, digits_test.images[:len(defense)])
    with pytest.raises(ConfigError):
        split_defense(digits_test, 1.0)


# triggers

def test_patch_trigger_geometry():
    shape = (1, 28, 28)
    assert default_patch_size(shape) == 4
    trigger = patch_trigger(shape)
    assert trigger.support.sum() == 16
    rows, cols = np.nonzero(trigger.support[0])
    assert rows.min() == 1 and cols.max() == 26
    checker = patch_trigger(shape, style="checker")
    assert checker.additive().sum() == 8


def test_patch_trigger_must_fit():
    with pytest.raises(ConfigError):
        patch_trigger((1, 5, 5), size=5)
    with pytest.raises(ConfigError):
        patch_trigger((1, 28, 28), corner="middle")


def test_stamping_touches_only_the_support(rng):
    trigger = patch_trigger((1, 28, 28))
    images = rng.uniform(size=(3, 1, 28, 28)).astype(np.float32)
    stamped = trigger.apply(images)
    np.testing.assert_array_equal(stamped[:, ~trigger.support], images[:, ~trigger.support])
    assert np.all(stamped[:, trigger.support] == 1.0)
    with pytest.raises(DimensionError):
        trigger.apply(np.zeros((1, 3, 28, 28)))


def test_sine_trigger_blends_everywhere():
    trigger = sine_trigger((1, 28, 28), frequency=6, alpha=0.2)
    assert trigger.support.all()
    stamped = trigger.apply(np.zeros((1, 1, 28, 28), dtype=np.float32))
    np.testing.assert_allclose(stamped[0], 0.2 * trigger.pattern, atol=1e-6)
    with pytest.raises(ConfigError):
        sine_trigger((1, 28, 28), frequency=0)


def test_arc_glyph_is_a_feature():
    glyph = arc_glyph((1, 28, 28))
    assert glyph.kind == "feature"
    assert 0 < glyph.support.sum() < 49


# poisoning

def test_poison_count_rounding():
    assert poison_count(0.1, 110) == 11
    assert poison_count(0.1, 105) == 11
    assert poison_count(0.05, 1) == 1


def test_poison_relabels_exact_count(digits_train):
    config = PoisonConfig(patch_trigger(digits_train.image_shape, target=8), poison_rate=0.1)
    out = poison(digits_train, config, seed=3)
    idx = np.flatnonzero(out.poisoned)
    assert len(idx) == poison_count(0.1, len(digits_train))
    assert np.all(out.labels[idx] == 8)
    assert np.all(digits_train.labels[idx] != 8)
    changed = np.any(out.images != digits_train.images, axis=(1, 2, 3))
    np.testing.assert_array_equal(changed, out.poisoned)
    np.testing.assert_array_equal(out.labels[~out.poisoned], digits_train.labels[~out.poisoned])
    again = poison(digits_train, config, seed=3)
    np.testing.assert_array_equal(again.images, out.images)


def test_poison_rejects_unsatisfiable_rate(digits_train):
    trigger = patch_trigger(digits_train.image_shape, target=8, sources=(0,))
    with pytest.raises(ConfigError):
        poison(digits_train, PoisonConfig(trigger, 0.5, "source_specific"), seed=0)


def test_source_specific_with_cover(digits_train):
    trigger = patch_trigger(digits_train.image_shape, target=8, sources=(0, 1))
    config = PoisonConfig(trigger, 0.02, "source_specific", cover_rate=0.05)
    out = poison(digits_train, config, seed=0)
    assert set(digits_train.labels[out.poisoned]) <= {0, 1}
    cover = np.any(out.images != digits_train.images, axis=(1, 2, 3)) & ~out.poisoned
    assert cover.sum() == poison_count(0.05, len(digits_train))
    assert not np.isin(digits_train.labels[cover], [0, 1]).any()
    np.testing.assert_array_equal(out.labels[cover], digits_train.labels[cover])


def test_poison_many_selections_are_disjoint(digits_train):
    shape = digits_train.image_shape
    configs = [PoisonConfig(patch_trigger(shape, corner="top-right", target=8), 0.05),
               PoisonConfig(patch_trigger(shape, corner="bottom-left", target=1), 0.05)]
    out = poison_many(digits_train, configs, seed=0)
    assert out.poisoned.sum() == 2 * poison_count(0.05, len(digits_train))
    assert np.isin(out.labels[out.poisoned], [1, 8]).all()


def test_innocuous_feature_is_label_independent(digits_train):
    out, indicator = synth_innocuous_feature(digits_train, FeatureSpec(0.3), seed=1)
    assert 0.2 < indicator.mean() < 0.4
    np.testing.assert_array_equal(out.labels, digits_train.labels)
    np.testing.assert_array_equal(out.feature, indicator)
    with pytest.raises(ConfigError):
        FeatureSpec(0.0)


def test_stamp_keeps_labels(digits_test):
    out = stamp(digits_test, patch_trigger(digits_test.image_shape))
    assert out.provenance == "stamped"
    np.testing.assert_array_equal(out.labels, digits_test.labels)


# attack presets

@pytest.mark.parametrize("preset", ["badnets", "badnets_checker", "sine", "ssba", "cassock", "hcb"])
def test_single_backdoor_presets(preset, digits_train):
    plan = attacks.build_attack(preset, digits_train.image_shape, 10)
    out = attacks.apply_attack(plan, digits_train, seed=0)
    assert plan.targets == [8]
    assert out.poisoned.sum() > 0
    for m, n in plan.pairs:
        assert m != n
    if preset == "ssba":
        assert plan.poisoned_classes == [0, 1, 2, 3]
    if preset == "hcb":
        assert out.feature is not None
        assert out.feature[out.poisoned].all()


def test_multitrigger_targets():
    plan = attacks.build_attack("multitrigger", (1, 28, 28), 10, {"triggers": 4})
    assert plan.targets == [1, 3, 5, 8]
    with pytest.raises(ConfigError):
        attacks.build_attack("multitrigger", (1, 28, 28), 10, {"triggers": 3})


def test_unknown_preset_and_params():
    with pytest.raises(ConfigError, match="valid presets"):
        attacks.build_attack("foo", (1, 28, 28), 10)
    with pytest.raises(ConfigError):
        attacks.build_attack("badnets", (1, 28, 28), 10, {"colour": "red"})
    with pytest.raises(ConfigError):
        attacks.build_attack("badnets", (1, 28, 28), 10, {"target": 12})


def test_none_preset_is_clean(digits_train):
    plan = attacks.build_attack("none", digits_train.image_shape, 10)
    out = attacks.apply_attack(plan, digits_train)
    assert plan.pairs == []
    assert not out.poisoned.any()
    np.testing.assert_array_equal(out.images, digits_train.images)


def test_hcb_eval_stamp_adds_the_feature():
    plan = attacks.build_attack("hcb", (1, 28, 28), 10)
    blank = np.zeros((1, 1, 28, 28), dtype=np.float32)
    stamped = plan.stamp_for_eval(blank, (0, 8))
    assert stamped[0][plan.feature_glyph.support].min() == 1.0
    assert stamped[0][plan.trigger_for((0, 8)).support].min() == 1.0


# image export

def test_export_array_writes_three_formats(tmp_path, rng):
    array = rng.uniform(size=(1, 6, 5)).astype(np.float32)
    png, pgm, raw = export_array(array, tmp_path / "t")
    np.testing.assert_array_equal(load_raw(raw, array.shape), array)
    for path in (png, pgm):
        loaded = load_image(path, channels=1)
        assert loaded.shape == (1, 6, 5)
        assert np.abs(loaded - array).max() <= 1 / 255 + 1e-6
    assert pgm.read_bytes().startswith(b"P5")
