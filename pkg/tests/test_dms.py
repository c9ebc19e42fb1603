import numpy as np
import pytest

from conftest import linear_model
from istr.dms.priority import PriorityMap, differential_variants, grid_origins, priority_map
from istr.dms.slicing import SliceMask, aggregate_masks, class_mask, middle_slice
from istr.errors import ArgumentError, DimensionError, ModelError
from istr.models.arch import ModelArch
from istr.models.network import build_model


def _quadrant_models():
    """Suspect reacts to the 4×4 quadrants with weights 3, 2, 1, 0; the reference ignores everything."""
    weights = np.zeros((8, 8), dtype=np.float32)
    weights[:4, :4], weights[:4, 4:], weights[4:, :4] = 3.0, 2.0, 1.0
    suspect = linear_model(np.stack([weights.reshape(-1), np.zeros(64)], axis=1), shape=(1, 8, 8))
    reference = linear_model(np.zeros((64, 2)), shape=(1, 8, 8))
    return suspect, reference


def test_grid_sizes():
    assert len(grid_origins(28, 28, 4, 4)) == 49
    assert len(grid_origins(32, 32, 4, 4)) == 64
    assert len(grid_origins(28, 28, 7, 7)) == 16
    with pytest.raises(ArgumentError):
        grid_origins(28, 28, 0, 4)
    with pytest.raises(ArgumentError):
        grid_origins(28, 28, 4, 0)


def test_variants_occlude_one_patch_each(rng):
    x = rng.uniform(size=(1, 8, 8)).astype(np.float32)
    variants = differential_variants(x, 4, 4, fill="zero")
    assert len(variants) == 4 and variants.grid == (2, 2)
    for img, (top, left) in zip(variants.images, variants.origins):
        assert np.all(img[:, top:top + 4, left:left + 4] == 0.0)
        outside = np.ones((1, 8, 8), dtype=bool)
        outside[:, top:top + 4, left:left + 4] = False
        np.testing.assert_array_equal(img[outside], x[outside])
    filled = differential_variants(x, 4, 4, fill="mean", fill_value=0.25)
    assert np.all(filled.images[0, :, :4, :4] == 0.25)
    with pytest.raises(ArgumentError):
        differential_variants(x, 4, 4, fill="noise")
    with pytest.raises(DimensionError):
        differential_variants(x[0], 4, 4)


def test_priority_is_suspect_shift_minus_reference_shift():
    suspect, reference = _quadrant_models()
    x = np.ones((1, 8, 8), dtype=np.float32)
    pm = priority_map(suspect, reference, x, differential_variants(x, 4, 4, fill="zero"))
    np.testing.assert_allclose(pm.grid_scores, [[48.0, 32.0], [16.0, 0.0]], rtol=1e-6)
    assert pm.scores.shape == (1, 8, 8)
    assert pm.scores[0, 0, 0] == pytest.approx(48.0)
    assert pm.scores[0, 7, 7] == pytest.approx(0.0)


def test_overlapping_patches_take_the_max():
    suspect, reference = _quadrant_models()
    x = np.ones((1, 8, 8), dtype=np.float32)
    pm = priority_map(suspect, reference, x, differential_variants(x, 4, 2, fill="zero"))
    assert pm.grid_scores.shape == (3, 3)
    # pixel (3, 3) is covered by the top-left patch, which scores highest
    assert pm.scores[0, 3, 3] == pytest.approx(pm.grid_scores.max())


def test_middle_slice_drops_the_top_and_the_floor():
    suspect, reference = _quadrant_models()
    x = np.ones((1, 8, 8), dtype=np.float32)
    pm = priority_map(suspect, reference, x, differential_variants(x, 4, 4, fill="zero"))
    mask = middle_slice(pm, q_low=30, q_high=95, minimum=1e-3)
    assert not mask.degenerate
    assert mask.r1 == pytest.approx(25.6) and mask.r2 == pytest.approx(46.4)
    assert mask.band[0, :4, 4:].all()
    assert mask.band.sum() == 16
    np.testing.assert_allclose(mask.values[0, :4, 4:], 1.0)
    assert np.all(mask.values[~mask.band] == np.float32(1e-3))


def test_identical_models_give_a_degenerate_mask():
    suspect, _ = _quadrant_models()
    x = np.ones((1, 8, 8), dtype=np.float32)
    pm = priority_map(suspect, suspect, x, differential_variants(x, 4, 4, fill="zero"))
    mask = middle_slice(pm)
    assert mask.degenerate
    assert np.all(mask.values == np.float32(1e-3))


def test_narrow_quantiles_give_an_empty_band():
    suspect, reference = _quadrant_models()
    x = np.ones((1, 8, 8), dtype=np.float32)
    pm = priority_map(suspect, reference, x, differential_variants(x, 4, 4, fill="zero"))
    assert middle_slice(pm, q_low=60, q_high=95).degenerate


def test_slice_parameters_are_validated():
    pm = PriorityMap(np.ones((2, 2)), np.ones((1, 8, 8)), 4, 4)
    with pytest.raises(ArgumentError):
        middle_slice(pm, q_low=95, q_high=60)
    with pytest.raises(ArgumentError):
        middle_slice(pm, minimum=0.0)
    with pytest.raises(ArgumentError):
        PriorityMap(np.array([[np.nan]]), np.zeros((1, 1, 1)), 1, 1)


def test_mismatched_reference_is_rejected(rng):
    suspect, _ = _quadrant_models()
    other = build_model(ModelArch.parse("1x8x8|fc3"), 0)
    x = rng.uniform(size=(1, 8, 8)).astype(np.float32)
    with pytest.raises(ModelError):
        priority_map(suspect, other, x, differential_variants(x, 4, 4))


def _mask(values, band, r1=0.1, r2=0.9, minimum=1e-3):
    values = np.where(band, values, minimum).astype(np.float32)
    return SliceMask(values, band, r1, r2, minimum)


def test_aggregate_mean_and_max():
    a_band = np.array([[[True, False, False]]])
    b_band = np.array([[[True, True, False]]])
    a = _mask(np.array([[[1.0, 0.0, 0.0]]]), a_band)
    b = _mask(np.array([[[0.5, 0.8, 0.0]]]), b_band, r1=0.3, r2=0.7)
    mean = aggregate_masks([a, b], "mean")
    np.testing.assert_allclose(mean.values[0, 0], [0.75, 0.4, 1e-3], rtol=1e-6)
    assert mean.band.tolist() == [[[True, True, False]]]
    assert mean.r1 == pytest.approx(0.2)
    maximum = aggregate_masks([a, b], "max")
    np.testing.assert_allclose(maximum.values[0, 0], [1.0, 0.8, 1e-3], rtol=1e-6)
    assert aggregate_masks([a]) is a


def test_aggregate_rejects_bad_input():
    a = _mask(np.ones((1, 1, 3)), np.ones((1, 1, 3), dtype=bool))
    b = _mask(np.ones((1, 1, 2)), np.ones((1, 1, 2), dtype=bool))
    with pytest.raises(DimensionError):
        aggregate_masks([a, b])
    with pytest.raises(ArgumentError):
        aggregate_masks([])
    with pytest.raises(ArgumentError):
        aggregate_masks([a, a], "median")


def test_slice_mask_invariants():
    with pytest.raises(ArgumentError):
        SliceMask(np.full((1, 1, 2), 0.5, dtype=np.float32), np.zeros((1, 1, 2), dtype=bool), 0.1, 0.9)
    with pytest.raises(ArgumentError):
        _mask(np.ones((1, 1, 2)), np.ones((1, 1, 2), dtype=bool), r1=0.5, r2=0.5)


def test_class_mask_on_trained_models(trained_tiny, digits_test, tiny_arch):
    reference = build_model(tiny_arch, seed=11)
    images = digits_test.images[digits_test.labels == 3][:3]
    mask = class_mask(trained_tiny, reference, images, patch=4, stride=4)
    assert mask.shape == (1, 28, 28)
    assert np.all(mask.values > 0) and np.all(mask.values <= 1.0)
    assert np.all(mask.values[~mask.band] == np.float32(mask.minimum))
