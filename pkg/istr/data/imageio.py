"""Image and raw-array export for triggers, masks and heatmaps."""

from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from PIL import Image

PathLike = Union[str, Path]


def to_uint8(array: np.ndarray, normalize: bool = False) -> np.ndarray:
    """C×H×W floats → H×W (gray) or H×W×3 bytes."""
    arr = np.asarray(array, dtype=np.float64)
    if normalize:
        lo, hi = float(arr.min()), float(arr.max())
        arr = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    arr = np.clip(arr, 0.0, 1.0)
    if arr.ndim == 3:
        arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
    return np.round(arr * 255.0).astype(np.uint8)


def save_image(array: np.ndarray, path: PathLike, normalize: bool = False) -> Path:
    """Write PNG or binary PGM depending on the suffix (PGM is always grayscale)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = to_uint8(array, normalize)
    image = Image.fromarray(pixels)
    if path.suffix.lower() == ".pgm":
        image = image.convert("L")
        image.save(path, format="PPM")
    else:
        image.save(path)
    return path


def load_image(path: PathLike, channels: int = 1) -> np.ndarray:
    """Read PNG/PGM as C×H×W floats in [0, 1]."""
    with Image.open(path) as image:
        image = image.convert("L" if channels == 1 else "RGB")
        arr = np.asarray(image, dtype=np.float32) / 255.0
    return arr[None] if channels == 1 else arr.transpose(2, 0, 1)


def save_raw(array: np.ndarray, path: PathLike) -> Path:
    """Little-endian f32 dump (shape is recorded by the caller)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(array, dtype="<f4").tofile(path)
    return path


def load_raw(path: PathLike, shape: Sequence[int]) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").astype(np.float32).reshape(tuple(shape))


def export_array(array: np.ndarray, stem: PathLike, normalize: bool = False) -> Tuple[Path, Path, Path]:
    """Write ``stem.png``, ``stem.pgm`` and ``stem.f32`` for one C×H×W array."""
    stem = Path(stem)
    return (
        save_image(array, stem.with_suffix(".png"), normalize),
        save_image(array, stem.with_suffix(".pgm"), normalize),
        save_raw(array, stem.with_suffix(".f32")),
    )
