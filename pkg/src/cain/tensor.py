"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations are recorded on the active :class:`Graph` (an append-only tape) only
when at least one input requires a gradient. Outside a ``with Graph():`` block
every op is a plain forward computation.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from cain.errors import ConfigError, DimensionError, GradientError, UsageError

_local = threading.local()
_ids = itertools.count()


def _active() -> "Graph | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "out", "inputs", "backward")

    def __init__(self, op, out, inputs, backward):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Graph:
    """Append-only record of differentiable operations.

    Used as a context manager; graphs nest per thread. ``kinks`` collects the
    branch decisions of non-smooth ops (ReLU signs, clamps, top-K picks) so the
    gradient checker can skip perturbations that cross one.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.kinks: list[np.ndarray] = []

    def __enter__(self) -> "Graph":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.nodes.append(_Node(op, out, tuple(inputs), backward))

    def backward(self, loss: Tensor, check_finite: bool = True) -> None:
        if loss.data.size != 1:
            raise UsageError(f"backward needs a scalar output, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if check_finite and not np.all(np.isfinite(gi)):
                    raise GradientError(
                        f"non-finite gradient produced by op {node.op!r} "
                        f"for input {inp!r}"
                    )
                # never accumulate in place: backward fns may hand out shared arrays
                inp.grad = gi if inp.grad is None else inp.grad + gi

    def first_nonfinite(self) -> str | None:
        """Name the first recorded op whose forward output is NaN/Inf."""
        for i, node in enumerate(self.nodes):
            if not np.all(np.isfinite(node.out.data)):
                names = ", ".join(repr(t) for t in node.inputs)
                return f"node #{i} op={node.op!r} inputs=[{names}]"
        return None


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    graph = _active()
    if requires and graph is not None:
        graph.record(op, out, inputs, backward)
    return out


def _kink(signature: np.ndarray) -> None:
    graph = _active()
    if graph is not None:
        graph.kinks.append(signature)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    """ReLU with subgradient 0 at 0."""
    positive = a.data > 0
    _kink(positive)
    return _make("relu", np.where(positive, a.data, 0.0), (a,), lambda g: (g * positive,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def log(a: Tensor) -> Tensor:
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    _kink(inside)
    return _make("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make("sum", out, (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise DimensionError(f"transpose needs >= 2 dims, got {a.shape}")
    return _make("transpose", np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def slice_(a: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _make("slice", out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise UsageError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make("concat", out, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# products, reductions over sequences, gathers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim == 2:
        # shared right operand: fold the leading axes of `a` into rows
        k, n = b.shape
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (n,))

        def backward(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make("matmul", out, (a, b), backward)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _make("matmul", out, (a, b), backward)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    Masked-out positions (``mask == False``) get exactly zero weight; a row with
    no valid position yields all zeros.
    """
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    top = np.max(x, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(x - top)
    total = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, total, out=np.zeros_like(e), where=total > 0)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make("softmax", out, (a,), backward)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; backward scatters additively into touched rows."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def backward(g):
        flat = ids.reshape(-1)
        scatter = sparse.csr_matrix(
            (np.ones(flat.size), (flat, np.arange(flat.size))), shape=(table.shape[0], flat.size)
        )
        return (np.asarray(scatter @ g.reshape(flat.size, -1)),)

    return _make("gather", out, (table,), backward)


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Per-batch row selection: ``x[b, index[b, k], :]`` for x of shape [B, T, D]."""
    index = np.asarray(index, dtype=np.int64)
    batch = np.arange(x.shape[0])[:, None]
    out = x.data[batch, index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (np.broadcast_to(batch, index.shape), index), g)
        return (full,)

    return _make("take_rows", out, (x,), backward)


def select_kink(index: np.ndarray) -> None:
    """Register a discrete selection so gradient checks can detect flips."""
    _kink(np.asarray(index))


def unfold(x: Tensor, size: int, stride: int, pad_left: int, pad_right: int) -> Tensor:
    """Sliding windows along the time axis of ``x[..., T, D]``.

    Returns ``[..., T', size * D]`` where window j covers padded rows
    ``j*stride .. j*stride + size - 1``; rows outside ``[0, T)`` read as zero.
    Negative pads crop.
    """
    if stride <= 0:
        raise ConfigError(f"stride must be positive, got {stride}")
    data = x.data
    T, D = data.shape[-2], data.shape[-1]
    lead = data.shape[:-2]
    crop_l, crop_r = max(-pad_left, 0), max(-pad_right, 0)
    pl, pr = max(pad_left, 0), max(pad_right, 0)
    body = data[..., crop_l:T - crop_r, :]
    padded_len = body.shape[-2] + pl + pr
    if size > padded_len:
        raise DimensionError(
            f"filter size {size} exceeds padded length {padded_len} (T={T}): empty output"
        )
    padded = np.zeros(lead + (padded_len, D))
    padded[..., pl:pl + body.shape[-2], :] = body
    n_out = (padded_len - size) // stride + 1
    cols = np.empty(lead + (n_out, size, D))
    span = (n_out - 1) * stride + 1
    for k in range(size):
        cols[..., :, k, :] = padded[..., k:k + span:stride, :]
    out = cols.reshape(lead + (n_out, size * D))

    def backward(g):
        gcols = g.reshape(lead + (n_out, size, D))
        gpad = np.zeros_like(padded)
        for k in range(size):
            gpad[..., k:k + span:stride, :] += gcols[..., :, k, :]
        gx = np.zeros_like(data)
        gx[..., crop_l:T - crop_r, :] = gpad[..., pl:pl + body.shape[-2], :]
        return (gx,)

    return _make("unfold", out, (x,), backward)


def conv1d_temporal(x: Tensor, filt: Tensor, bias: Tensor, stride: int = 1, pad=0) -> Tensor:
    """Temporal convolution as an unrolled windowed matmul.

    ``x`` is ``[T, Din]`` or ``[B, T, Din]``; ``filt`` is ``[fs, Din, Dout]``
    (shared) or ``[B, fs, Din, Dout]`` (one filter per batch row); ``bias`` is
    ``[Dout]`` or ``[B, Dout]``. ``pad`` is an int or a ``(left, right)`` pair.
    Output length is ``floor((T + left + right - fs) / stride) + 1``.
    """
    if stride <= 0:
        raise ConfigError(f"stride must be positive, got {stride}")
    pad_left, pad_right = (pad, pad) if isinstance(pad, int) else pad
    fs, din, dout = filt.shape[-3:]
    if x.shape[-1] != din:
        raise DimensionError(f"conv1d: input {x.shape} does not match filter {filt.shape}")
    cols = unfold(x, fs, stride, pad_left, pad_right)
    w = reshape(filt, filt.shape[:-3] + (fs * din, dout))
    out = matmul(cols, w)
    if bias.ndim == 2:
        bias = reshape(bias, (bias.shape[0], 1, dout))
    return add(out, bias)


# ---------------------------------------------------------------------------
# verification harness


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the computation from the current ``inputs[i].data``. Elements
    whose +/- eps perturbation flips any recorded kink (ReLU sign, clamp,
    top-K pick) are excluded.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise UsageError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    saved = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    try:
        with Graph() as graph:
            out = f()
        if out.data.size != 1:
            raise UsageError(f"grad_check needs a scalar output, got shape {out.shape}")
        graph.backward(out)
        base_kinks = graph.kinks

        def evaluate() -> tuple[float, list[np.ndarray]]:
            with Graph() as g:
                value = float(f().data.reshape(()))
            return value, g.kinks

        worst = 0.0
        for t in inputs:
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp, kp = evaluate()
                flat[i] = orig - eps
                fm, km = evaluate()
                flat[i] = orig
                if _kinks_differ(base_kinks, kp) or _kinks_differ(base_kinks, km):
                    continue
                numeric = (fp - fm) / (2 * eps)
                a = analytic.reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
        return worst
    finally:
        for t, r in zip(inputs, saved):
            t.requires_grad = r


def _kinks_differ(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    if len(a) != len(b):
        return True
    return any(x.shape != y.shape or not np.array_equal(x, y) for x, y in zip(a, b))
