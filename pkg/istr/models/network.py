import contextlib
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from istr.autograd import ops
from istr.autograd.tensor import Tensor
from istr.models.arch import ModelArch


class Model:
    """Feed-forward image classifier built from a :class:`ModelArch`."""

    def __init__(
        self,
        arch: ModelArch,
        params: Dict[str, Tensor],
        seed: int = 0,
        epochs: int = 0,
        metadata: Optional[Dict[str, str]] = None,
    ):
        self.arch = arch
        self.params = params
        self.seed = seed
        self.epochs = epochs
        self.metadata = dict(metadata or {})

    @property
    def class_count(self) -> int:
        return self.arch.class_count

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.arch.input_shape)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def forward(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.arch.layers) - 1
        for i, layer in enumerate(self.arch.layers):
            name = f"layer{i}"
            if layer.kind == "conv":
                h = ops.conv2d(h, self.params[f"{name}.weight"], self.params[f"{name}.bias"],
                               stride=layer.stride, padding=layer.padding)
                h = ops.relu(h)
            elif layer.kind == "pool":
                h = ops.maxpool2d(h, layer.kernel, layer.stride)
            else:
                if h.ndim > 2:
                    h = ops.flatten(h)
                h = ops.add(ops.matmul(h, self.params[f"{name}.weight"]), self.params[f"{name}.bias"])
                if i != last:
                    h = ops.relu(h)
        return h

    def predict(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Logits for a batch of ``N×C×H×W`` images, computed without a tape."""
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        dtype = self.parameters()[0].dtype
        chunks = [
            self.forward(Tensor(images[start:start + batch_size], dtype=dtype)).data
            for start in range(0, len(images), batch_size)
        ]
        if not chunks:
            return np.zeros((0, self.class_count), dtype=dtype)
        return np.concatenate(chunks, axis=0)

    def classify(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return self.predict(images, batch_size).argmax(axis=1)

    def clone(self) -> "Model":
        params = {name: Tensor(p.data.copy(), requires_grad=p.requires_grad, dtype=p.dtype)
                  for name, p in self.params.items()}
        return Model(self.arch, params, self.seed, self.epochs, self.metadata)

    def astype(self, dtype) -> "Model":
        params = {name: p.astype(dtype) for name, p in self.params.items()}
        return Model(self.arch, params, self.seed, self.epochs, self.metadata)

    @contextlib.contextmanager
    def frozen(self):
        """Stop parameters from collecting gradients, e.g. while optimizing inputs."""
        previous = [p.requires_grad for p in self.params.values()]
        for p in self.params.values():
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, flag in zip(self.params.values(), previous):
                p.requires_grad = flag

    def __repr__(self):
        return f"Model({self.arch.descriptor()!r}, params={self.parameter_count})"


def parameter_shapes(arch: ModelArch) -> Dict[str, Tuple[int, ...]]:
    """Name and shape of every parameter ``arch`` implies, in forward order."""
    shapes: Dict[str, Tuple[int, ...]] = {}
    inputs = [tuple(arch.input_shape)] + arch.shapes()
    for i, layer in enumerate(arch.layers):
        in_shape = inputs[i]
        if layer.kind == "conv":
            shapes[f"layer{i}.weight"] = (layer.width, in_shape[0], layer.kernel, layer.kernel)
        elif layer.kind == "fc":
            shapes[f"layer{i}.weight"] = (int(np.prod(in_shape)), layer.width)
        else:
            continue
        shapes[f"layer{i}.bias"] = (layer.width,)
    return shapes


def build_model(arch: ModelArch, seed: int = 0) -> Model:
    """Initialize parameters with a seeded He-normal scheme (zero biases)."""
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    for name, shape in parameter_shapes(arch).items():
        if name.endswith(".bias"):
            params[name] = Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
        weight = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        params[name] = Tensor(weight.astype(np.float32), requires_grad=True)
    return Model(arch, params, seed=seed)
