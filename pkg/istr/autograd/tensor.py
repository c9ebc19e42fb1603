"""Dense tensors and the gradient tape.

A :class:`Tensor` wraps a numpy array (float32 unless a dtype is requested).
Operations from :mod:`istr.autograd.ops` are recorded only while a
:class:`Tape` is active; outside a tape they evaluate eagerly with no
bookkeeping, which is how inference runs.
"""

import contextvars
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from istr.errors import ArgumentError, TapeError

_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("istr_active_tape", default=None)

FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    """Row-major float array that can take part in reverse-mode differentiation."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in FLOAT_TYPES else np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, dtype=dtype)

    def __add__(self, other):
        from istr.autograd import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from istr.autograd import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from istr.autograd import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from istr.autograd import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from istr.autograd import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from istr.autograd import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from istr.autograd import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self):
        from istr.autograd import ops
        return ops.sum(self)

    def mean(self):
        from istr.autograd import ops
        return ops.mean(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Record:
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class Tape:
    """Ordered log of differentiable operations.

    Used as a context manager; one tape belongs to one execution context and
    can be replayed by :func:`backprop` exactly once.
    """

    def __init__(self):
        self.records: List[Record] = []
        self.consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise TapeError("tape was already consumed by backprop; record a new one")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.records)

    def record(self, output: Tensor, inputs: Tuple[Tensor, ...], backward: BackwardRule) -> None:
        output._tape = self
        self.records.append(Record(inputs, output, backward))


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def backprop(tape: Tape, loss: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    The tape is consumed; a second call raises :class:`TapeError`.
    Gradients are accumulated in reverse recording order, which keeps
    repeated runs bit-identical.
    """
    if tape.consumed:
        raise TapeError("backprop called twice on the same tape without re-recording")
    if loss.size != 1:
        raise ArgumentError(f"backprop needs a scalar loss, got shape {loss.shape}")

    seed = np.ones_like(loss.data)
    if loss._tape is not tape:
        if loss.requires_grad and loss.is_leaf:
            loss.grad = seed
            _consume(tape)
            return
        raise ArgumentError("loss was not produced on this tape")

    leaves: Dict[int, Tensor] = {}
    for rec in tape.records:
        for tensor in rec.inputs:
            if tensor.requires_grad and tensor.is_leaf:
                leaves.setdefault(id(tensor), tensor)

    grads: Dict[int, np.ndarray] = {id(loss): seed}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for tensor, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            grads[key] = gi if key not in grads else grads[key] + gi

    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    _consume(tape)


def _consume(tape: Tape) -> None:
    for rec in tape.records:
        rec.output._tape = None
    tape.records.clear()
    tape.consumed = True
