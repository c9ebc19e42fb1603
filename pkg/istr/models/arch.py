"""Architecture descriptors.

A descriptor is a ``|``-separated string: the input shape first, then one
token per layer::

    1x28x28|conv16k3p1|pool2|conv32k3p1|pool2|conv32k3p1|fc64|fc10

``convFkK[sS][pP]`` is a ReLU convolution with F filters, ``poolK[sS]`` a max
pool, ``fcU`` a dense layer (ReLU on every dense layer except the last).
"""

import re
from dataclasses import dataclass
from typing import List, Optional, Tuple

from istr.autograd.ops import conv_output_extent
from istr.errors import ArchError

_CONV = re.compile(r"^conv(\d+)k(\d+)(?:s(\d+))?(?:p(\d+))?$")
_POOL = re.compile(r"^pool(\d+)(?:s(\d+))?$")
_FC = re.compile(r"^fc(\d+)$")
_INPUT = re.compile(r"^(\d+)x(\d+)x(\d+)$")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    width: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0

    def token(self) -> str:
        if self.kind == "conv":
            return f"conv{self.width}k{self.kernel}s{self.stride}p{self.padding}"
        if self.kind == "pool":
            return f"pool{self.kernel}s{self.stride}"
        return f"fc{self.width}"


@dataclass(frozen=True)
class ModelArch:
    input_shape: Tuple[int, int, int]
    layers: Tuple[LayerSpec, ...]
    class_count: int

    def __post_init__(self):
        if self.class_count < 1:
            raise ArchError(f"class_count must be positive, got {self.class_count}")
        if not self.layers or self.layers[-1].kind != "fc":
            raise ArchError("the last layer must be a dense (fc) layer")
        if self.layers[-1].width != self.class_count:
            raise ArchError(
                f"final layer width {self.layers[-1].width} does not match class_count {self.class_count}"
            )
        self.shapes()

    def shapes(self) -> List[Tuple[int, ...]]:
        """Output shape of every layer; raises :class:`ArchError` if they do not compose."""
        shape: Tuple[int, ...] = tuple(self.input_shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ArchError(f"input shape must be C×H×W with positive extents, got {shape}")
        out = []
        for i, layer in enumerate(self.layers):
            if layer.kind in ("conv", "pool"):
                if len(shape) != 3:
                    raise ArchError(f"layer {i} ({layer.token()}) follows a dense layer")
                c, h, w = shape
                if layer.kind == "conv":
                    oh = conv_output_extent(h, layer.kernel, layer.stride, layer.padding)
                    ow = conv_output_extent(w, layer.kernel, layer.stride, layer.padding)
                    c = layer.width
                else:
                    oh = (h - layer.kernel) // layer.stride + 1
                    ow = (w - layer.kernel) // layer.stride + 1
                if oh < 1 or ow < 1 or layer.kernel < 1 or layer.stride < 1:
                    raise ArchError(f"layer {i} ({layer.token()}) does not fit input {shape}")
                shape = (c, oh, ow)
            elif layer.kind == "fc":
                if layer.width < 1:
                    raise ArchError(f"layer {i} has no units")
                shape = (layer.width,)
            else:
                raise ArchError(f"unknown layer kind {layer.kind!r}")
            out.append(shape)
        return out

    def descriptor(self) -> str:
        head = "x".join(str(d) for d in self.input_shape)
        return "|".join([head] + [layer.token() for layer in self.layers])

    @classmethod
    def parse(cls, descriptor: str, class_count: Optional[int] = None) -> "ModelArch":
        tokens = [t.strip().lower() for t in descriptor.split("|") if t.strip()]
        if not tokens:
            raise ArchError("empty architecture descriptor")
        head = _INPUT.match(tokens[0])
        if not head:
            raise ArchError(f"descriptor must start with an input shape like 1x28x28, got {tokens[0]!r}")
        layers = []
        for token in tokens[1:]:
            if m := _CONV.match(token):
                layers.append(LayerSpec("conv", int(m[1]), int(m[2]), int(m[3] or 1), int(m[4] or 0)))
            elif m := _POOL.match(token):
                layers.append(LayerSpec("pool", 0, int(m[1]), int(m[2] or m[1])))
            elif m := _FC.match(token):
                layers.append(LayerSpec("fc", int(m[1])))
            else:
                raise ArchError(f"unrecognised layer token {token!r}")
        if class_count is None:
            class_count = layers[-1].width if layers else 0
        shape = (int(head[1]), int(head[2]), int(head[3]))
        return cls(shape, tuple(layers), class_count)

    @property
    def conv_count(self) -> int:
        return sum(1 for layer in self.layers if layer.kind == "conv")

    @property
    def fc_count(self) -> int:
        return sum(1 for layer in self.layers if layer.kind == "fc")


# Layer bodies of the named presets; the trailing classifier is appended per class count.
PRESETS = {
    "3conv+2fc": "conv16k3p1|pool2|conv32k3p1|pool2|conv32k3p1|fc64",
    "6conv+2fc": "conv16k3p1|conv16k3p1|pool2|conv32k3p1|conv32k3p1|pool2|conv64k3p1|conv64k3p1|pool2|fc128",
    "4conv+2fc": "conv16k3p1|pool2|conv32k3p1|pool2|conv32k3p1|pool2|conv64k3p1|pool2|fc128",
}


def resolve_arch(name_or_descriptor: str, input_shape: Tuple[int, int, int], class_count: int) -> ModelArch:
    """Expand a preset name (``3conv+2fc`` ...) or parse a full descriptor."""
    key = name_or_descriptor.strip().lower()
    if key in PRESETS:
        head = "x".join(str(d) for d in input_shape)
        return ModelArch.parse(f"{head}|{PRESETS[key]}|fc{class_count}", class_count)
    arch = ModelArch.parse(name_or_descriptor, class_count)
    if tuple(arch.input_shape) != tuple(input_shape):
        raise ArchError(f"architecture input {arch.input_shape} does not match data shape {tuple(input_shape)}")
    return arch
