"""Differentiable operations.

Every function takes tensors (python scalars and arrays are wrapped as
constants), computes the forward value with numpy and, when a tape is active
and an input requires a gradient, records its backward rule.

Convolution follows the cross-correlation convention (the kernel is not
flipped). The ReLU subgradient at 0 is 0.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from istr.autograd.tensor import Tensor, active_tape
from istr.errors import ArgumentError, DimensionError

Operand = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: Operand, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value), dtype=dtype)


def _result(data: np.ndarray, inputs: Tuple[Tensor, ...], backward) -> Tensor:
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad, dtype=data.dtype)
    if needs_grad:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise

def add(a: Operand, b: Operand) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data + b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Operand, b: Operand) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data - b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Operand, b: Operand) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data * b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def abs(a: Tensor) -> Tensor:
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sum(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)
    return _result(out, (a,), lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    out = np.asarray(a.data.mean(), dtype=a.dtype)
    return _result(out, (a,), lambda g: (np.broadcast_to(g / n, a.shape).astype(a.dtype),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(tuple(shape))
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis but the batch axis."""
    return reshape(a, (a.shape[0], -1))


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    return _result(a.data * positive, (a,), lambda g: (g * positive,))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _result(out.astype(a.dtype), (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``[r×k] · [k×c] → [r×c]``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data
    return _result(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :out_h, :out_w]


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(
    inp: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation of ``N×C×H×W`` input with ``F×C×kh×kw`` kernels."""
    if inp.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {inp.shape} and {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ArgumentError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    n, c, h, w = inp.shape
    f, kc, kh, kw = kernel.shape
    if c != kc:
        raise DimensionError(f"conv2d channel mismatch: input {inp.shape}, kernel {kernel.shape}")
    out_h = conv_output_extent(h, kh, stride, padding)
    out_w = conv_output_extent(w, kw, stride, padding)
    if kh > h + 2 * padding or kw > w + 2 * padding or out_h <= 0 or out_w <= 0:
        raise DimensionError(f"conv2d output extent is not positive for input {inp.shape}, kernel {kernel.shape}")

    x = inp.data
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _windows(x, kh, kw, stride, out_h, out_w)
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kh * kw)
    kmat = kernel.data.reshape(f, -1)
    out = cols @ kmat.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(n, out_h, out_w, f).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
        dkernel = (g2.T @ cols).reshape(kernel.shape)
        dcols = (g2 @ kmat).reshape(n, out_h, out_w, c, kh, kw)
        dx = np.zeros_like(x)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        if padding:
            dx = dx[:, :, padding:padding + h, padding:padding + w]
        dbias = g2.sum(axis=0) if bias is not None else None
        return dx, dkernel, dbias

    inputs = (inp, kernel) if bias is None else (inp, kernel, bias)
    return _result(out, inputs, backward)


def maxpool2d(inp: Tensor, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    """Max over ``kernel×kernel`` windows; ties go to the first window position."""
    stride = stride or kernel
    if inp.ndim != 4:
        raise DimensionError(f"maxpool2d expects 4-D input, got {inp.shape}")
    n, c, h, w = inp.shape
    out_h = (h - kernel) // stride + 1
    out_w = (w - kernel) // stride + 1
    if kernel > h or kernel > w or out_h <= 0 or out_w <= 0:
        raise DimensionError(f"maxpool2d window {kernel} does not fit input {inp.shape}")

    flat = _windows(inp.data, kernel, kernel, stride, out_h, out_w).reshape(n, c, out_h, out_w, kernel * kernel)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dx = np.zeros_like(inp.data)
        for pos in range(kernel * kernel):
            i, j = divmod(pos, kernel)
            dx[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += g * (idx == pos)
        return (dx,)

    return _result(np.ascontiguousarray(out), (inp,), backward)


# classification

def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    probs = np.exp(_log_softmax(logits.data))

    def backward(g):
        return (probs * (g - (g * probs).sum(axis=-1, keepdims=True)),)

    return _result(probs, (logits,), backward)


def log_softmax(logits: Tensor) -> Tensor:
    logp = _log_softmax(logits.data)
    probs = np.exp(logp)
    return _result(logp, (logits,), lambda g: (g - probs * g.sum(axis=-1, keepdims=True),))


def softmax_cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """``−log softmax(logits)[label]``, averaged (or summed) over the batch.

    ``logits`` is ``[C]`` for a single sample or ``[N×C]`` for a batch.
    """
    single = logits.ndim == 1
    z = logits.data[None, :] if single else logits.data
    if z.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects [C] or [N×C] logits, got {logits.shape}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    classes = z.shape[1]
    if labels.shape[0] != z.shape[0]:
        raise DimensionError(f"{labels.shape[0]} labels for {z.shape[0]} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ArgumentError(f"label out of range [0, {classes}): {labels.tolist()}")
    if reduction not in ("mean", "sum"):
        raise ArgumentError(f"unknown reduction {reduction!r}")

    logp = _log_softmax(z)
    rows = np.arange(z.shape[0])
    picked = -logp[rows, labels]
    scale = 1.0 / z.shape[0] if reduction == "mean" else 1.0
    loss = np.asarray(picked.sum() * scale, dtype=logits.dtype)

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        grad = grad * (g * scale)
        return (grad[0] if single else grad,)

    return _result(loss, (logits,), backward)
