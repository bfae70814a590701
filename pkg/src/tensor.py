"""
Reverse-mode automatic differentiation for the credit fusion framework.
A Tensor wraps a numpy array, an optional gradient and the recipe that
pushes gradients back to the tensors it was computed from.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger("credit_fusion.tensor")

ArrayLike = Union[np.ndarray, float, int, Sequence]

ACTIVATIONS = ("relu", "sigmoid", "tanh", "softmax_lastdim")


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_array(data: ArrayLike, dtype=None) -> np.ndarray:
    array = np.asarray(data)
    if dtype is not None:
        return array.astype(dtype, copy=False)
    if not np.issubdtype(array.dtype, np.floating):
        array = array.astype(np.float64)
    return array


def unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    """Node of the autodiff graph."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None,
                 _parents: Tuple["Tensor", ...] = (), _grad_fn: Optional[Callable] = None,
                 op: Optional[str] = None, name: Optional[str] = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._grad_fn = _grad_fn
        self.op = op
        self.name = name
        self._retain = False
        # leaves start with a zero gradient so unused parameters read as zero
        self.grad = np.zeros_like(self.data) if requires_grad and not _parents else None

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
        return not self._parents

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __hash__(self):
        return id(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def retain_grad(self) -> "Tensor":
        """Keep the gradient of a non-leaf tensor after backward."""
        self._retain = True
        return self

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    # arithmetic
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def swapaxes(self, axis1: int, axis2: int):
        axes = list(range(self.ndim))
        axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
        return transpose(self, tuple(axes))


def as_tensor(value: Union[Tensor, ArrayLike], dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], grad_fn: Callable, op: str) -> Tensor:
    requires_grad = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires_grad,
                  _parents=parents if requires_grad else (),
                  _grad_fn=grad_fn if requires_grad else None, op=op)


def _topological_order(root: Tensor) -> List[Tensor]:
    # iterative so long recurrent graphs do not hit the recursion limit
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """
    Populate gradients of every requires_grad leaf reachable from a scalar loss.

    Gradients accumulate into ``.grad``; callers zero them between steps.

    Args:
        loss: Scalar tensor

    Raises:
        ShapeError: If the loss is not a scalar
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf or node._retain:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._grad_fn is None:
            continue
        for parent, parent_grad in zip(node._parents, node._grad_fn(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad


def zero_grad(parameters: Sequence[Tensor]) -> None:
    for p in parameters:
        p.zero_grad()


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return (unbroadcast(g / b.data, a.shape),
                unbroadcast(-g * a.data / (b.data ** 2), b.shape))

    return _make(a.data / b.data, (a, b), grad_fn, "div")


def power(a: Tensor, exponent: float) -> Tensor:
    def grad_fn(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(a.data ** exponent, (a,), grad_fn, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def grad_fn(g):
        return (g * out,)

    return _make(out, (a,), grad_fn, "exp")


def log(a: Tensor) -> Tensor:
    def grad_fn(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), grad_fn, "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def grad_fn(g):
        return (g * 0.5 / out,)

    return _make(out, (a,), grad_fn, "sqrt")


def where(mask: np.ndarray, a: Tensor, fill: float) -> Tensor:
    """Replace entries of ``a`` with ``fill`` where ``mask`` is true."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)

    def grad_fn(g):
        return (np.where(mask, 0.0, g),)

    return _make(np.where(mask, fill, a.data), (a,), grad_fn, "where")


# reductions and shape manipulation

def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), grad_fn, "sum")


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    def grad_fn(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), grad_fn, "reshape")


def transpose(a: Tensor, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = np.argsort(axes)

    def grad_fn(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(a.data, axes), (a,), grad_fn, "transpose")


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    basic = _is_basic_index(index)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), grad_fn, "getitem")


def concat(inputs: Sequence[Tensor], axis: int = -1) -> Tensor:
    """
    Concatenate tensors along an axis.

    Args:
        inputs: Tensors whose non-axis dimensions agree
        axis: Concatenation axis

    Returns:
        Concatenated tensor; gradient splits back by slice

    Raises:
        ShapeError: If a non-axis dimension disagrees (names the input index)
    """
    inputs = [as_tensor(t) for t in inputs]
    if not inputs:
        raise ShapeError("concat needs at least one input")
    if len(inputs) == 1:
        return inputs[0]

    reference = inputs[0].shape
    ax = axis % len(reference)
    for i, t in enumerate(inputs[1:], start=1):
        if t.ndim != len(reference) or any(
                t.shape[d] != reference[d] for d in range(len(reference)) if d != ax):
            raise ShapeError(
                f"concat input {i} has shape {t.shape}, incompatible with {reference} along axis {axis}")

    boundaries = np.cumsum([t.shape[ax] for t in inputs])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, boundaries, axis=ax))

    return _make(np.concatenate([t.data for t in inputs], axis=ax), tuple(inputs), grad_fn, "concat")


def stack(inputs: Sequence[Tensor], axis: int = 0) -> Tensor:
    inputs = [as_tensor(t) for t in inputs]
    if not inputs:
        raise ShapeError("stack needs at least one input")
    out = np.stack([t.data for t in inputs], axis=axis)
    ax = axis % out.ndim

    def grad_fn(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(inputs)))

    return _make(out, tuple(inputs), grad_fn, "stack")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product with numpy batch broadcasting over leading dimensions.

    Raises:
        ShapeError: If the inner dimensions differ (names both shapes)
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(np.matmul(a.data, b.data), (a, b), grad_fn, "matmul")


# activations

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def grad_fn(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), grad_fn, "relu")


def sigmoid(a: Tensor) -> Tensor:
    # exp(-|x|) never overflows
    x = a.data
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), grad_fn, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def grad_fn(g):
        return (g * (1.0 - out ** 2),)

    return _make(out, (a,), grad_fn, "tanh")


def _softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.shape[axis] < 1:
        raise ShapeError(f"softmax over an empty axis of shape {a.shape}")
    out = _softmax_array(a.data, axis)

    def grad_fn(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (a,), grad_fn, "softmax")


def activation(a: Tensor, kind: Optional[str]) -> Tensor:
    """
    Apply a named activation.

    Args:
        a: Input tensor
        kind: One of relu, sigmoid, tanh, softmax_lastdim, or None for identity
    """
    if kind is None or kind == "linear":
        return a
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return tanh(a)
    if kind in ("softmax_lastdim", "softmax"):
        return softmax(a, axis=-1)
    raise ValueError(f"Unknown activation '{kind}'. Use one of: {ACTIVATIONS}")


# network primitives

def _with_batch(x: Tensor) -> Tuple[Tensor, bool]:
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected a [time x channels] or [batch x time x channels] input, got {x.shape}")


def conv1d(inputs: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """
    Valid-padding 1-D cross-correlation.

    Args:
        inputs: [time x channels] or [batch x time x channels]
        kernels: [width x channels x filters]
        bias: [filters]
        stride: Positive step between windows

    Returns:
        [(batch x) out_time x filters] with out_time = (time - width) // stride + 1

    Raises:
        ShapeError: If the input is shorter than the kernel or channels differ
    """
    x, squeeze = _with_batch(as_tensor(inputs))
    if stride < 1:
        raise ShapeError(f"conv1d stride must be positive, got {stride}")
    width, channels, filters = kernels.shape
    batch, time, in_channels = x.shape
    if in_channels != channels:
        raise ShapeError(f"conv1d channel mismatch: input {x.shape} vs kernels {kernels.shape}")
    if time < width:
        raise ShapeError(f"conv1d input of length {time} is shorter than kernel width {width}")
    if bias.shape != (filters,):
        raise ShapeError(f"conv1d bias shape {bias.shape} does not match {filters} filters")

    out_time = (time - width) // stride + 1
    # windows: [batch, out_time, channels, width] -> [batch, out_time, width * channels]
    windows = np.lib.stride_tricks.sliding_window_view(x.data, width, axis=1)[:, ::stride]
    cols = np.ascontiguousarray(np.swapaxes(windows, 2, 3)).reshape(batch, out_time, width * channels)
    flat_kernels = kernels.data.reshape(width * channels, filters)
    out = cols @ flat_kernels + bias.data

    def grad_fn(g):
        g_kernels = np.tensordot(cols, g, axes=([0, 1], [0, 1])).reshape(kernels.shape)
        g_bias = g.sum(axis=(0, 1))
        g_cols = (g @ flat_kernels.T).reshape(batch, out_time, width, channels)
        g_x = np.zeros_like(x.data)
        stop = stride * (out_time - 1) + 1
        for w in range(width):
            g_x[:, w:w + stop:stride, :] += g_cols[:, :, w, :]
        return g_x, g_kernels, g_bias

    result = _make(out, (x, kernels, bias), grad_fn, "conv1d")
    return reshape(result, result.shape[1:]) if squeeze else result


def max_pool1d(inputs: Tensor, window: int) -> Tensor:
    """
    Non-overlapping max pooling over the time axis.

    Trailing steps that do not fill a window are dropped. The gradient goes to
    the arg-max of each window, ties resolved to the earliest index.

    Raises:
        ShapeError: If the window is not positive or exceeds the time axis
    """
    x, squeeze = _with_batch(as_tensor(inputs))
    batch, time, channels = x.shape
    if window < 1 or window > time:
        raise ShapeError(f"max_pool1d window {window} invalid for input of length {time}")

    out_time = time // window
    blocks = x.data[:, :out_time * window, :].reshape(batch, out_time, window, channels)
    arg = np.argmax(blocks, axis=2)[:, :, None, :]
    out = np.take_along_axis(blocks, arg, axis=2)[:, :, 0, :]

    def grad_fn(g):
        g_blocks = np.zeros_like(blocks)
        np.put_along_axis(g_blocks, arg, g[:, :, None, :], axis=2)
        g_x = np.zeros_like(x.data)
        g_x[:, :out_time * window, :] = g_blocks.reshape(batch, out_time * window, channels)
        return (g_x,)

    result = _make(out, (x,), grad_fn, "max_pool1d")
    return reshape(result, result.shape[1:]) if squeeze else result


def global_avg_pool(inputs: Tensor) -> Tensor:
    """
    Mean over the time axis: [time x channels] -> [channels].

    Raises:
        ShapeError: If the time axis is empty
    """
    x = as_tensor(inputs)
    if x.ndim < 2:
        raise ShapeError(f"global_avg_pool expects a time axis, got shape {x.shape}")
    if x.shape[-2] == 0:
        raise ShapeError("global_avg_pool over an empty time axis")
    return tensor_mean(x, axis=-2)


def masked_mean_pool(inputs: Tensor, mask: np.ndarray) -> Tensor:
    """
    Mean over the time axis counting only positions where mask is true.

    Args:
        inputs: [batch x time x channels]
        mask: [batch x time] boolean; all-false rows pool to zeros
    """
    weights = np.asarray(mask, dtype=inputs.dtype)
    counts = np.maximum(weights.sum(axis=1, keepdims=True), 1.0)
    scaled = weights / counts
    return tensor_sum(mul(inputs, scaled[:, :, None]), axis=1)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """
    Gather rows of an embedding table.

    Args:
        table: [vocab x dim]
        ids: Integer ids of any shape

    Returns:
        Tensor of shape ids.shape + (dim,); gradient scatter-adds into rows

    Raises:
        ShapeError: If an id is outside [0, vocab)
    """
    ids = np.asarray(ids, dtype=np.int64)
    vocab, dim = table.shape
    if ids.size:
        bad = np.argwhere((ids < 0) | (ids >= vocab))
        if len(bad):
            position = tuple(int(v) for v in bad[0])
            raise ShapeError(
                f"embedding id {int(ids[position])} at position {position} outside vocabulary of size {vocab}")

    def grad_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, dim))
        return (full,)

    out = table.data[ids.reshape(-1)].reshape(ids.shape + (dim,))
    return _make(out, (table,), grad_fn, "embedding")


def dropout(inputs: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """
    Inverted dropout: survivors scale by 1 / (1 - rate); inference is identity.

    Raises:
        ValueError: If rate is outside [0, 1)
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return inputs
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    keep = ((rng.random(inputs.shape) >= rate) * (1.0 / (1.0 - rate))).astype(inputs.dtype)

    def grad_fn(g):
        return (g * keep,)

    return _make(inputs.data * keep, (inputs,), grad_fn, "dropout")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    probabilities = np.exp(out)

    def grad_fn(g):
        return (g - probabilities * np.sum(g, axis=axis, keepdims=True),)

    return _make(out, (a,), grad_fn, "log_softmax")


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """
    Mean softmax cross-entropy with a fused log-sum-exp.

    Args:
        logits: [batch x classes]
        labels: Class indices in [0, classes)

    Returns:
        Scalar tensor

    Raises:
        ValueError: If a label is out of range
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy_loss expects [batch x classes] logits and batch labels, "
                         f"got {logits.shape} and {labels.shape}")
    batch, classes = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")

    shifted = logits.data - np.max(logits.data, axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1))
    rows = np.arange(batch)
    loss = np.mean(lse - shifted[rows, labels])

    def grad_fn(g):
        grad = _softmax_array(logits.data, axis=1)
        grad[rows, labels] -= 1.0
        return (grad * (g / batch),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn, "cross_entropy")
