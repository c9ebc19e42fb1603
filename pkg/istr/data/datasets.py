import gzip
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import requests

from istr import settings
from istr.data.imageio import load_image
from istr.data_models import Dataset
from istr.errors import ConfigError, DatasetError, DatasetFormatError

logger = logging.getLogger(__name__)

MNIST_BASE_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
    "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
}
IMAGE_SUFFIXES = (".png", ".pgm")
SYNTHETIC_KINDS = {
    # kind: (image shape, classes, default sample count per split)
    "synthetic-digits": ((1, 28, 28), 10, {"train": 6000, "test": 2000}),
    "synthetic-gtsrb": ((3, 32, 32), 43, {"train": 8600, "test": 2150}),
    "synthetic-faces": ((3, 64, 64), 16, {"train": 3200, "test": 800}),
}
SOURCE_KINDS = ("mnist", "idx", "directory") + tuple(SYNTHETIC_KINDS)


@dataclass
class DatasetSource:
    """Where a dataset split comes from."""
    kind: str = "mnist"
    split: str = "train"
    limit: Optional[int] = None
    seed: int = 0
    root: Optional[str] = None
    images: Optional[str] = None
    labels: Optional[str] = None
    class_count: Optional[int] = None

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}; valid kinds: {', '.join(SOURCE_KINDS)}")
        if self.split not in ("train", "test"):
            raise ConfigError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.limit is not None and self.limit < 1:
            raise ConfigError(f"limit must be positive, got {self.limit}")


# IDX

_IDX_DTYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (``.gz`` accepted)."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DatasetFormatError(f"cannot read IDX file {path}: {e}")
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_DTYPES:
        raise DatasetFormatError(f"malformed IDX header in {path}")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if ndim == 0 or len(raw) < header:
        raise DatasetFormatError(f"malformed IDX header in {path}")
    dims = tuple(int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim))
    dtype = np.dtype(_IDX_DTYPES[raw[2]])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header != expected:
        raise DatasetFormatError(f"IDX payload of {path} has {len(raw) - header} bytes, header promises {expected}")
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims)


def load_idx_pair(images_path, labels_path, class_count: int = 10, name: str = "") -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim == 3:
        images = images[:, None]
    if images.ndim != 4 or labels.ndim != 1 or len(images) != len(labels):
        raise DatasetFormatError(f"IDX images {images.shape} and labels {labels.shape} do not pair up")
    scaled = images.astype(np.float32) / 255.0
    return Dataset(scaled, labels.astype(np.int64), class_count, name=name)


def fetch_mnist(split: str = "train", cache_dir: Optional[Path] = None) -> Tuple[Path, Path]:
    """Download the MNIST IDX archives for ``split`` into the cache (once)."""
    cache_dir = Path(cache_dir or settings.data_dir()) / "mnist"
    cache_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for filename in MNIST_FILES[split]:
        path = cache_dir / filename
        if not path.exists():
            logger.info("downloading %s", filename)
            try:
                response = requests.get(MNIST_BASE_URL + filename, timeout=60)
                response.raise_for_status()
            except requests.RequestException as e:
                raise DatasetError(f"error fetching MNIST file {filename}: {e}")
            tmp = path.with_suffix(".part")
            tmp.write_bytes(response.content)
            os.replace(tmp, path)
            _update_data_dictionary(cache_dir.parent, f"mnist/{filename}", split)
        paths.append(path)
    return paths[0], paths[1]


def _update_data_dictionary(cache_dir: Path, filename: str, split: str) -> None:
    """Record a fetched file in the cache's data dictionary."""
    dictionary_path = cache_dir / "data_dictionary.json"
    try:
        data_dict = json.loads(dictionary_path.read_text()) if dictionary_path.exists() else {}
    except json.JSONDecodeError:
        logger.warning("data dictionary %s is corrupt; starting a new one", dictionary_path)
        data_dict = {}
    data_dict[filename] = {
        "description": f"MNIST handwritten digits, {split} split (IDX, gzip)",
        "source": MNIST_BASE_URL + Path(filename).name,
        "shape": "1x28x28",
        "classes": 10,
    }
    dictionary_path.write_text(json.dumps(data_dict, indent=4, sort_keys=True))


# directory layout

def load_directory(root, class_count: Optional[int] = None, channels: Optional[int] = None) -> Dataset:
    """Label-named subdirectories (``0/``, ``1/`` ...) of PNG/PGM images."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    entries: List[Tuple[int, Path]] = []
    for sub in sorted(root.iterdir(), key=lambda p: p.name):
        if not sub.is_dir():
            continue
        try:
            label = int(sub.name)
        except ValueError:
            raise DatasetFormatError(f"subdirectory {sub.name!r} is not a class id")
        for file in sorted(sub.iterdir()):
            if file.suffix.lower() in IMAGE_SUFFIXES:
                entries.append((label, file))
    if not entries:
        raise DatasetError(f"no PNG/PGM images found under {root}")
    if channels is None:
        channels = 1 if entries[0][1].suffix.lower() == ".pgm" else 3
    images = [load_image(path, channels) for _, path in entries]
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise DatasetFormatError(f"images under {root} have differing shapes: {sorted(shapes)}")
    labels = np.array([label for label, _ in entries], dtype=np.int64)
    class_count = class_count or int(labels.max()) + 1
    return Dataset(np.stack(images), labels, class_count, name=root.name)


# synthetic stand-ins

def _stroke_prototype(rng: np.random.Generator, shape: Tuple[int, int, int], strokes: int, face: bool) -> np.ndarray:
    c, h, w = shape
    canvas = np.zeros(shape, dtype=np.float32)
    yy, xx = np.mgrid[0:h, 0:w]
    lo, hi = int(h * 0.2), int(h * 0.8)
    if face:
        cy, cx = h / 2, w / 2
        skin = rng.uniform(0.4, 0.8, size=(c, 1, 1))
        ellipse = ((yy - cy) / (0.38 * h)) ** 2 + ((xx - cx) / (0.3 * w)) ** 2 <= 1.0
        canvas += ellipse * skin
    thickness = max(1.0, h / 20)
    for _ in range(strokes):
        (y0, x0), (y1, x1) = rng.integers(lo, hi, size=(2, 2))
        color = rng.uniform(0.6, 1.0, size=(c, 1, 1)) if c > 1 else np.ones((1, 1, 1))
        t = np.linspace(0.0, 1.0, 4 * max(h, w))
        py, px = y0 + (y1 - y0) * t, x0 + (x1 - x0) * t
        dist = np.full((h, w), np.inf)
        for y, x in zip(py[::4], px[::4]):
            dist = np.minimum(dist, np.hypot(yy - y, xx - x))
        canvas = np.maximum(canvas, (dist <= thickness) * color)
    return np.clip(canvas, 0.0, 1.0)


def synthetic(kind: str, split: str = "train", count: Optional[int] = None, seed: int = 0) -> Dataset:
    """Seeded, learnable stand-in datasets: class prototypes plus jitter and noise.

    Prototypes depend only on ``kind``; ``seed`` and ``split`` drive the
    per-sample jitter, so train and test share classes but not samples.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ConfigError(f"unknown synthetic dataset {kind!r}")
    shape, classes, defaults = SYNTHETIC_KINDS[kind]
    count = count or defaults[split]
    proto_rng = np.random.default_rng(sum(map(ord, kind)))
    face = kind == "synthetic-faces"
    prototypes = np.stack([_stroke_prototype(proto_rng, shape, 3 if face else 4, face) for _ in range(classes)])

    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = np.arange(count) % classes
    rng.shuffle(labels)
    shift = max(1, shape[1] // 14)
    images = np.empty((count,) + shape, dtype=np.float32)
    for i, label in enumerate(labels):
        dy, dx = rng.integers(-shift, shift + 1, size=2)
        img = np.roll(prototypes[label], (dy, dx), axis=(1, 2)) * rng.uniform(0.7, 1.0)
        img = img + rng.normal(0.0, 0.05, size=shape) * (img > 0)
        images[i] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels, classes, name=kind)


def load_dataset(source: DatasetSource) -> Dataset:
    """Load one split as described by ``source``, normalized to [0, 1]."""
    if source.kind == "mnist":
        images_path, labels_path = fetch_mnist(source.split, Path(source.root) if source.root else None)
        dataset = load_idx_pair(images_path, labels_path, 10, name=f"mnist-{source.split}")
    elif source.kind == "idx":
        if not source.images or not source.labels:
            raise ConfigError("idx datasets need both 'images' and 'labels' paths")
        dataset = load_idx_pair(source.images, source.labels, source.class_count or 10, name="idx")
    elif source.kind == "directory":
        if not source.root:
            raise ConfigError("directory datasets need a 'root' path")
        dataset = load_directory(Path(source.root) / source.split if (Path(source.root) / source.split).is_dir()
                                 else source.root, source.class_count)
    else:
        dataset = synthetic(source.kind, source.split, source.limit, source.seed)
    if source.limit is not None and source.limit < len(dataset):
        dataset = dataset.subset(np.arange(source.limit))
    logger.info("loaded %s: %d samples of shape %s", dataset.name or source.kind, len(dataset), dataset.image_shape)
    return dataset


def split_defense(test: Dataset, fraction: float = 0.5) -> Tuple[Dataset, Dataset]:
    """Carve the defender's clean local set X and a held-out test set from ``test``."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"defense_fraction must lie in (0, 1), got {fraction}")
    cut = int(round(len(test) * fraction))
    if cut == 0 or cut == len(test):
        raise DatasetError(f"cannot split {len(test)} samples with fraction {fraction}")
    return test.subset(np.arange(cut)), test.subset(np.arange(cut, len(test)))
