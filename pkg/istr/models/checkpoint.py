"""Binary checkpoint files.

Layout (little-endian)::

    b"ISTR" | u32 version | u32 len + utf-8 arch descriptor | u64 seed
    | u32 epochs | u32 len + utf-8 metadata JSON | u32 record count
    | records: u32 len + utf-8 name, u32 ndim, u32 dims..., f32 payload
"""

import json
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from istr.autograd.tensor import Tensor
from istr.errors import ArchError, CheckpointFormatError, CheckpointVersionError
from istr.models.arch import ModelArch
from istr.models.network import Model, parameter_shapes

MAGIC = b"ISTR"
VERSION = 1


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode_checkpoint(model: Model) -> bytes:
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        _pack_str(model.arch.descriptor()),
        struct.pack("<Q", model.seed),
        struct.pack("<I", model.epochs),
        _pack_str(json.dumps(model.metadata, sort_keys=True)),
        struct.pack("<I", len(model.params)),
    ]
    for name, tensor in model.params.items():
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointFormatError("checkpoint is truncated")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (length,) = self.unpack("<I")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError(f"invalid utf-8 in checkpoint: {e}")


def _check_parameters(arch: ModelArch, params: Dict[str, Tensor]) -> None:
    expected = parameter_shapes(arch)
    if list(params) != list(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointFormatError(
            f"parameters do not match {arch.descriptor()!r}: missing {missing}, unexpected {extra}"
            if missing or extra else f"parameter records out of order for {arch.descriptor()!r}"
        )
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise CheckpointFormatError(f"{name} has shape {params[name].shape}, architecture expects {shape}")


def decode_checkpoint(raw: bytes) -> Model:
    reader = _Reader(raw)
    if reader.take(4) != MAGIC:
        raise CheckpointFormatError("bad magic bytes; not an istr checkpoint")
    (version,) = reader.unpack("<I")
    if version > VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is newer than supported version {VERSION}")
    try:
        arch = ModelArch.parse(reader.string())
    except ArchError as e:
        raise CheckpointFormatError(f"checkpoint architecture is invalid: {e}")
    (seed,) = reader.unpack("<Q")
    (epochs,) = reader.unpack("<I")
    try:
        metadata = json.loads(reader.string())
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"checkpoint metadata is not JSON: {e}")
    (count,) = reader.unpack("<I")
    params: Dict[str, Tensor] = {}
    for _ in range(count):
        name = reader.string()
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}I")
        payload = reader.take(4 * int(np.prod(shape, dtype=np.int64)))
        data = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
        params[name] = Tensor(data, requires_grad=True)
    if reader.pos != len(raw):
        raise CheckpointFormatError("trailing bytes after the last parameter record")
    _check_parameters(arch, params)
    return Model(arch, params, seed=seed, epochs=epochs, metadata=metadata)


def save_checkpoint(model: Model, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model))
    return path


def load_checkpoint(path: Union[str, Path]) -> Model:
    return decode_checkpoint(Path(path).read_bytes())
