"""Dense tensors with a thread-local reverse-mode tape."""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import DimensionError, NumericalError, UsageError

DTYPES = (np.float32, np.float64)
DEFAULT_DTYPE = np.float32


class Tensor:
    """An n-dimensional array that can take part in gradient recording."""

    __slots__ = ("data", "grad", "requires_grad", "_leaf", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in DTYPES:
            arr = arr.astype(DEFAULT_DTYPE if dtype is None else dtype)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._leaf = True

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dims(self) -> list:
        return list(self.data.shape)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic is forwarded to the functional ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None):
        from . import ops
        return ops.tsum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def _not_scalar(t: Tensor):
    raise UsageError(f"item() needs a single-element tensor, got shape {t.shape}")


class Parameter(Tensor):
    """A trainable leaf tensor with a dotted name such as ``enc.conv0.weight``."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: Sequence[Tensor], backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of executed ops, consumed by :func:`backward`."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.enabled = True

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


_local = threading.local()


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    tape = current_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


def is_grad_enabled() -> bool:
    return current_tape().enabled


def check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericalError(f"{op} produced non-finite values")


def record(out_data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap ``out_data`` and append a tape node when any parent needs grads.

    ``backward`` maps the output gradient to a tuple with one entry per parent
    (``None`` where no gradient flows).
    """
    check_finite(out_data, op)
    out = Tensor(out_data)
    tape = current_tape()
    if tape.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._leaf = False
        tape.nodes.append(_Node(out, tuple(parents), backward))
    return out


def backward(scalar: Tensor, scale: float = 1.0) -> None:
    """Reverse pass from a single-element tensor; accumulates leaf ``.grad``."""
    if scalar.data.size != 1:
        raise UsageError(f"backward() needs a scalar, got shape {scalar.shape}")
    tape = current_tape()
    if not scalar.requires_grad or not tape.nodes:
        raise UsageError("backward() on a tensor with no recorded history")
    scalar.grad = np.full(scalar.shape, scale, dtype=scalar.dtype)
    try:
        for node in reversed(tape.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise DimensionError(
                        f"gradient shape {pg.shape} != tensor shape {parent.data.shape}")
                pg = pg.astype(parent.data.dtype, copy=False)
                if parent.grad is None:
                    parent.grad = pg.copy() if parent._leaf else pg
                else:
                    parent.grad = parent.grad + pg
            node.out.grad = None
    finally:
        tape.clear()
