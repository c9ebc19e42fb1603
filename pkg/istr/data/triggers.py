"""Builders for the implanted trigger shapes (patches, stripes, glyphs)."""

from typing import Optional, Sequence, Tuple

import numpy as np

from istr.data_models import TriggerSpec
from istr.errors import ConfigError

CORNERS = ("top-right", "top-left", "bottom-right", "bottom-left")
Shape = Tuple[int, int, int]


def default_patch_size(shape: Shape) -> int:
    """4 pixels on 28/32-pixel images, growing with resolution."""
    return max(3, min(shape[1], shape[2]) // 7)


def _corner_origin(shape: Shape, size: int, corner: str, margin: int) -> Tuple[int, int]:
    _, h, w = shape
    if corner not in CORNERS:
        raise ConfigError(f"unknown corner {corner!r}; valid corners: {', '.join(CORNERS)}")
    if size + margin > min(h, w):
        raise ConfigError(f"a {size}-pixel patch with margin {margin} does not fit a {h}x{w} image")
    top = margin if corner.startswith("top") else h - margin - size
    left = margin if corner.endswith("left") else w - margin - size
    return top, left


def _box(shape: Shape, top: int, left: int, size: int) -> np.ndarray:
    mask = np.zeros(shape, dtype=np.float32)
    mask[:, top:top + size, left:left + size] = 1.0
    return mask


def patch_trigger(
    shape: Shape,
    size: Optional[int] = None,
    corner: str = "top-right",
    margin: int = 1,
    style: str = "white",
    target: int = 8,
    alpha: float = 1.0,
    sources: Optional[Sequence[int]] = None,
    name: str = "badnets",
) -> TriggerSpec:
    """A square corner patch; ``style`` is ``white`` or ``checker`` (alternating black/white)."""
    size = size or default_patch_size(shape)
    top, left = _corner_origin(shape, size, corner, margin)
    mask = _box(shape, top, left, size)
    pattern = _fill(shape, top, left, size, style)
    return TriggerSpec("patch", mask, pattern, alpha, target, sources, name)


def center_trigger(
    shape: Shape,
    size: Optional[int] = None,
    style: str = "white",
    target: int = 8,
    alpha: float = 0.6,
    sources: Optional[Sequence[int]] = None,
    name: str = "cassock",
) -> TriggerSpec:
    """A patch over the image centre, overlapping the source content."""
    _, h, w = shape
    size = size or 2 * default_patch_size(shape)
    if size > min(h, w):
        raise ConfigError(f"a {size}-pixel patch does not fit a {h}x{w} image")
    top, left = (h - size) // 2, (w - size) // 2
    return TriggerSpec("patch", _box(shape, top, left, size), _fill(shape, top, left, size, style),
                       alpha, target, sources, name)


def _fill(shape: Shape, top: int, left: int, size: int, style: str) -> np.ndarray:
    pattern = np.zeros(shape, dtype=np.float32)
    if style == "white":
        pattern[:, top:top + size, left:left + size] = 1.0
    elif style == "checker":
        yy, xx = np.mgrid[0:size, 0:size]
        pattern[:, top:top + size, left:left + size] = ((yy + xx) % 2 == 0).astype(np.float32)
    else:
        raise ConfigError(f"unknown patch style {style!r}; valid styles: white, checker")
    return pattern


def sine_trigger(
    shape: Shape,
    frequency: float = 6.0,
    alpha: float = 0.2,
    target: int = 8,
    sources: Optional[Sequence[int]] = None,
    name: str = "sine",
) -> TriggerSpec:
    """Full-image horizontal stripes: ``0.5 + 0.5·sin(2π·f·y/H)``."""
    c, h, w = shape
    if frequency <= 0:
        raise ConfigError(f"sine frequency must be positive, got {frequency}")
    rows = 0.5 + 0.5 * np.sin(2.0 * np.pi * frequency * np.arange(h) / h)
    pattern = np.broadcast_to(rows[None, :, None], shape).astype(np.float32)
    return TriggerSpec("sine", np.ones(shape, dtype=np.float32), pattern, alpha, target, sources, name)


def arc_glyph(shape: Shape, size: int = 7, corner: str = "bottom-left", margin: int = 1) -> TriggerSpec:
    """A quarter-circle stroke in a corner: the innocuous, class-independent feature."""
    top, left = _corner_origin(shape, size, corner, margin)
    yy, xx = np.mgrid[0:size, 0:size]
    radius = size - 1
    # the arc bows toward the image centre
    cy = 0 if corner.startswith("bottom") else radius
    cx = radius if corner.endswith("left") else 0
    dist = np.hypot(yy - cy, xx - cx)
    stroke = (np.abs(dist - radius * 0.75) <= 0.75).astype(np.float32)
    mask = np.zeros(shape, dtype=np.float32)
    mask[:, top:top + size, left:left + size] = stroke
    return TriggerSpec("feature", mask, mask.copy(), 1.0, 0, None, "arc")

