import numpy as np
import pytest

from istr.autograd.tensor import Tensor
from istr.data.datasets import synthetic
from istr.data_models import Dataset
from istr.models.arch import ModelArch
from istr.models.network import Model, build_model
from istr.models.training import train

TINY_ARCH = "1x28x28|conv4k3p1|pool2|conv8k3p1|pool2|fc32|fc10"


def linear_model(weight, bias=None, shape=(1, 1, 2)) -> Model:
    """Single dense layer ``logits = flatten(x) @ weight + bias``."""
    weight = np.asarray(weight, dtype=np.float32)
    classes = weight.shape[1]
    arch = ModelArch.parse("x".join(map(str, shape)) + f"|fc{classes}", classes)
    bias = np.zeros(classes, dtype=np.float32) if bias is None else np.asarray(bias, dtype=np.float32)
    return Model(arch, {"layer0.weight": Tensor(weight, requires_grad=True),
                        "layer0.bias": Tensor(bias, requires_grad=True)})


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def digits_train() -> Dataset:
    return synthetic("synthetic-digits", "train", 400, seed=0)


@pytest.fixture(scope="session")
def digits_test() -> Dataset:
    return synthetic("synthetic-digits", "test", 200, seed=0)


@pytest.fixture(scope="session")
def tiny_arch() -> ModelArch:
    return ModelArch.parse(TINY_ARCH)


@pytest.fixture(scope="session")
def trained_tiny(digits_train, tiny_arch) -> Model:
    """A small CNN fitted to the synthetic digits; reused read-only across tests."""
    model = build_model(tiny_arch, seed=1)
    train(model, digits_train, epochs=3, lr=0.05, batch_size=32, seed=1)
    return model


@pytest.fixture
def small_images(rng) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(4, 1, 8, 8)).astype(np.float32)
