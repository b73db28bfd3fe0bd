"""N-d tensors with taped reverse-mode differentiation.

The engine is a Wengert list: while a Tape is active, every op appends a
record (inputs, output, backward rule) in execution order. backward()
replays the list once in reverse, accumulating gradients into ``.grad``.
Because records are appended as ops execute, the list is topologically
sorted by construction: an op's inputs always precede it.

Ops run in whatever float dtype their inputs carry (float32 for training,
float64 for gradient checking); binary ops require both operands to agree.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeError, UsageError

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A numpy array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_tape", "_index", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._tape: Optional[Tape] = None
        self._index = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Operator sugar; the real work lives in the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)


class _Node:
    __slots__ = ("inputs", "output", "rule")

    def __init__(self, inputs, output, rule):
        self.inputs = inputs
        self.output = output
        self.rule = rule


_TAPE_STACK: list["Tape"] = []


def active_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered op record; usable as a context manager to activate it."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def _record(self, inputs, output, rule):
        output._tape = self
        output._index = len(self.nodes)
        self.nodes.append(_Node(inputs, output, rule))

    def clear(self):
        self.nodes.clear()

    def release(self) -> None:
        """Sever the recorded graph so it dies by reference counting.

        The graph is a reference cycle (tape -> node -> tensor -> tape),
        so without this it lingers until a full garbage-collector pass;
        the rule closures pin every saved forward buffer, which adds up
        to hundreds of MB per training step. Tensors keep .data and
        .grad; they just can no longer be backward()ed. Training loops
        call this once per step, right after the backward pass.
        """
        for node in self.nodes:
            node.output._tape = None
            node.output._index = -1
            node.inputs = node.output = node.rule = None
        self.nodes.clear()


def record(inputs: Sequence[Tensor], out_data: np.ndarray, rule: Callable) -> Tensor:
    """Wrap an op result, recording it on the active tape when needed.

    ``rule(grad_out)`` must return one gradient array (or None) per input,
    in order. Results are only recorded when a tape is active and some
    input requires grad; otherwise this is a plain forward computation.
    """
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    tape = active_tape()
    if tape is not None and needs:
        tape._record(tuple(inputs), out, rule)
    return out


def _add_grad(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Fill ``.grad`` of every tensor the scalar ``loss`` depends on.

    Each tape node is visited exactly once, in reverse recording order.
    Propagation runs through per-call buffers, so calling backward again
    adds one more copy of the true gradient into every ``.grad`` (stale
    grads never feed the walk). A node's output buffer is released as soon
    as its node has been processed.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    tape = loss._tape
    if tape is None:
        raise UsageError("loss was not recorded on a tape (no active Tape during the forward pass?)")
    pending: dict[int, list] = {id(loss): [loss, np.ones_like(loss.data)]}
    for node in reversed(tape.nodes[: loss._index + 1]):
        entry = pending.pop(id(node.output), None)
        if entry is None:
            continue
        gout = entry[1]
        _add_grad(node.output, gout)
        gins = node.rule(gout)
        for t, g in zip(node.inputs, gins):
            if g is None or not t.requires_grad:
                continue
            cur = pending.get(id(t))
            if cur is None:
                # own the buffer: rules may hand back gout itself or views
                # of it, and those must not be mutated by later accumulation
                if g is gout or g.base is not None:
                    g = g.copy()
                pending[id(t)] = [t, g]
            else:
                cur[1] += g
    for t, g in pending.values():
        _add_grad(t, g)


class ParameterSet:
    """Named map from parameter path to Tensor, iterated lexicographically."""

    def __init__(self):
        self._by_path: dict[str, Tensor] = {}

    def add(self, path: str, tensor: Tensor) -> Tensor:
        if path in self._by_path:
            raise UsageError(f"duplicate parameter path {path!r}")
        self._by_path[path] = tensor
        return tensor

    def __getitem__(self, path: str) -> Tensor:
        return self._by_path[path]

    def __contains__(self, path: str) -> bool:
        return path in self._by_path

    def __len__(self):
        return len(self._by_path)

    def paths(self) -> list[str]:
        return sorted(self._by_path)

    def items(self):
        for path in self.paths():
            yield path, self._by_path[path]

    def trainable(self):
        for path, t in self.items():
            if t.requires_grad:
                yield path, t

    def zero_grad(self):
        for _, t in self.items():
            t.grad = None

    def total_size(self, trainable_only: bool = False) -> int:
        items = self.trainable() if trainable_only else self.items()
        return sum(t.size for _, t in items)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over the axes numpy broadcasting expanded, back to shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_binary(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} do not broadcast") from None


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_binary(a, b, "add")
    out = a.data + b.data

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record((a, b), out, rule)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_binary(a, b, "sub")
    out = a.data - b.data

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record((a, b), out, rule)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_binary(a, b, "mul")
    out = a.data * b.data

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record((a, b), out, rule)


def neg(a: Tensor) -> Tensor:
    return record((a,), -a.data, lambda g: (-g,))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def rule(g):
        return (g.reshape(a.shape),)

    return record((a,), out, rule)


def tsum(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    out = a.data.sum()

    def rule(g):
        return (np.broadcast_to(g, a.shape),)

    return record((a,), np.asarray(out, dtype=a.data.dtype), rule)


def tmean(a: Tensor) -> Tensor:
    n = a.size
    out = a.data.mean()

    def rule(g):
        return (np.broadcast_to(g / n, a.shape),)

    return record((a,), np.asarray(out, dtype=a.data.dtype), rule)


def tlog(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def rule(g):
        return (g / a.data,)

    return record((a,), out, rule)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only inside the interval."""
    out = np.clip(a.data, lo, hi)
    inside = ((a.data > lo) & (a.data < hi)).astype(a.data.dtype)

    def rule(g):
        return (g * inside,)

    return record((a,), out, rule)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis (axis 1; axis 0 for vectors).

    ``a`` occupies the lower channel indices. All other extents must match.
    """
    axis = 1 if a.ndim > 1 else 0
    if a.ndim != b.ndim:
        raise ShapeError(f"concat_channels: rank mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    for ax in range(a.ndim):
        if ax != axis and a.shape[ax] != b.shape[ax]:
            raise ShapeError(f"concat_channels: non-channel extents differ, {tuple(a.shape)} vs {tuple(b.shape)}")
    out = np.concatenate([a.data, b.data], axis=axis)
    na = a.shape[axis]

    def rule(g):
        ga = np.take(g, range(na), axis=axis)
        gb = np.take(g, range(na, g.shape[axis]), axis=axis)
        return ga, gb

    return record((a, b), out, rule)


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise UsageError("stack needs at least one tensor")
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != base:
            raise ShapeError(f"stack: shapes differ, {tuple(base)} vs {tuple(t.shape)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def rule(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return record(tuple(tensors), out, rule)


def broadcast(a: Tensor, shape) -> Tensor:
    """Broadcast to a larger shape; backward sums over the expanded axes."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast: cannot expand {tuple(a.shape)} to {shape}") from None

    def rule(g):
        return (_unbroadcast(g, a.shape),)

    return record((a,), out.copy(), rule)
