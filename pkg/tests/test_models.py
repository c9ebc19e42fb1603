import numpy as np
import pytest

from istr.autograd.tensor import Tensor
from istr.data_models import Dataset
from istr.errors import ArchError, ArgumentError, CheckpointFormatError, CheckpointVersionError, DimensionError
from istr.models import (
    ModelArch, build_model, evaluate, load_checkpoint, resolve_arch, save_checkpoint, train,
)
from istr.models.checkpoint import decode_checkpoint, encode_checkpoint
from istr.models.network import Model


def test_preset_resolves_to_three_conv_two_fc():
    arch = resolve_arch("3conv+2fc", (1, 28, 28), 10)
    assert arch.conv_count == 3
    assert arch.fc_count == 2
    assert arch.shapes()[-1] == (10,)
    assert ModelArch.parse(arch.descriptor()) == arch


@pytest.mark.parametrize("descriptor", [
    "",
    "28x28|fc10",
    "1x4x4|conv2k5|fc10",
    "1x4x4|fc8|conv2k3|fc10",
    "1x4x4|conv2k3",
    "1x4x4|dropout|fc10",
])
def test_bad_descriptors_raise(descriptor):
    with pytest.raises(ArchError):
        ModelArch.parse(descriptor)


def test_descriptor_input_must_match_data():
    with pytest.raises(ArchError):
        resolve_arch("1x28x28|fc10", (3, 32, 32), 10)


def test_build_model_is_seeded(tiny_arch):
    a, b, c = build_model(tiny_arch, 5), build_model(tiny_arch, 5), build_model(tiny_arch, 6)
    for (name, pa), (_, pb), (_, pc) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
        if name.endswith("weight"):
            assert not np.array_equal(pa.data, pc.data)


def test_predict_shapes(tiny_arch, rng):
    model = build_model(tiny_arch, 0)
    logits = model.predict(rng.uniform(size=(3, 1, 28, 28)).astype(np.float32))
    assert logits.shape == (3, 10)
    assert model.predict(rng.uniform(size=(1, 28, 28)).astype(np.float32)).shape == (1, 10)


def test_checkpoint_preserves_parameters_and_predictions(tmp_path, trained_tiny, digits_test):
    path = save_checkpoint(trained_tiny, tmp_path / "m.istr")
    loaded = load_checkpoint(path)
    assert loaded.arch == trained_tiny.arch
    assert loaded.epochs == trained_tiny.epochs
    np.testing.assert_array_equal(loaded.predict(digits_test.images), trained_tiny.predict(digits_test.images))


def test_checkpoint_rejects_corruption(tiny_arch):
    raw = encode_checkpoint(build_model(tiny_arch, 0))
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(raw[:-3])
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(raw + b"\0")
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(raw[:4] + (99).to_bytes(4, "little") + raw[8:])


def test_training_is_deterministic_and_learns(digits_train, digits_test, tiny_arch):
    a, b = build_model(tiny_arch, 2), build_model(tiny_arch, 2)
    _, history_a = train(a, digits_train, 2, lr=0.05, batch_size=32, seed=9)
    _, history_b = train(b, digits_train, 2, lr=0.05, batch_size=32, seed=9)
    assert history_a.to_dict() == history_b.to_dict()
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
    assert history_a.losses[-1] < history_a.losses[0]
    assert a.epochs == 2


def test_trained_model_beats_chance(trained_tiny, digits_test):
    result = evaluate(trained_tiny, digits_test)
    assert result.accuracy > 0.5
    assert result.confusion.sum() == len(digits_test)


def test_training_rejects_shape_mismatch_and_negative_epochs(digits_train):
    model = build_model(ModelArch.parse("3x28x28|fc10"), 0)
    with pytest.raises((DimensionError, ArgumentError)):
        train(model, digits_train, 1)
    model = build_model(ModelArch.parse("1x28x28|fc10"), 0)
    with pytest.raises(ArgumentError):
        train(model, digits_train, -1)


def test_zero_epochs_leave_the_model_untouched(digits_train, tiny_arch):
    model = build_model(tiny_arch, 0)
    before = [p.data.copy() for p in model.parameters()]
    _, history = train(model, digits_train, 0)
    assert history.epochs == []
    for p, q in zip(model.parameters(), before):
        np.testing.assert_array_equal(p.data, q)


def test_checkpoint_save_load_save_is_byte_identical(tmp_path, trained_tiny):
    first = save_checkpoint(trained_tiny, tmp_path / "a.istr")
    second = save_checkpoint(load_checkpoint(first), tmp_path / "b.istr")
    assert first.read_bytes() == second.read_bytes()


def test_checkpoint_rejects_parameters_that_do_not_fit_the_arch(tiny_arch):
    model = build_model(tiny_arch, 0)
    params = dict(model.params)
    params.pop("layer5.bias")
    with pytest.raises(CheckpointFormatError, match="layer5.bias"):
        decode_checkpoint(encode_checkpoint(Model(tiny_arch, params)))
    params = dict(model.params)
    params["layer0.weight"] = Tensor(np.zeros((4, 1, 5, 5), dtype=np.float32))
    with pytest.raises(CheckpointFormatError, match="layer0.weight"):
        decode_checkpoint(encode_checkpoint(Model(tiny_arch, params)))


def test_trained_checkpoint_records_the_seeds_that_reproduce_it(tmp_path, digits_train, tiny_arch):
    subset = Dataset(digits_train.images[:64], digits_train.labels[:64], digits_train.class_count)
    model = build_model(tiny_arch, 1)
    train(model, subset, 1, lr=0.05, batch_size=32, seed=5)
    loaded = load_checkpoint(save_checkpoint(model, tmp_path / "m.istr"))
    assert loaded.seed == 5
    assert loaded.metadata["init_seed"] == "1"
    assert loaded.metadata["train_seeds"] == "5"

    again = build_model(tiny_arch, int(loaded.metadata["init_seed"]))
    train(again, subset, 1, lr=0.05, batch_size=32, seed=loaded.seed)
    for pa, pb in zip(again.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
