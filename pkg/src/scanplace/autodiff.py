"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation that touches a tensor requiring gradients appends a node to a
GradTape; backward replays the tape in exact reverse construction order.
Construction order is a topological order of the expression graph, so the
reverse sweep sees every consumer of a value before the value itself.
Independent forward passes get independent tapes; combining results of two
live tapes merges them (the graphs were disjoint until that point, so
concatenating their node lists stays topologically ordered).

Broadcasting is deliberately limited to scalar-with-tensor.  Shape mismatches
raise ShapeError immediately instead of silently broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError


class GradTape:
    """Ordered record of performed operations."""

    __slots__ = ("nodes", "_parent")

    def __init__(self):
        self.nodes: list = []   # (inputs tuple, output, backward fn)
        self._parent = None

    def root(self) -> "GradTape":
        tape = self
        while tape._parent is not None:
            tape = tape._parent
        if self._parent is not None:
            self._parent = tape   # path compression
        return tape


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.writeable:
            arr = arr.copy()
        if not np.all(np.isfinite(arr)):
            raise ContractError("tensor data contains non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape: GradTape | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return scalar_pow(self, exponent)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _merged_tape(inputs) -> GradTape:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        root = t.tape.root()
        if tape is None or tape is root:
            tape = root
            continue
        # two live graphs meet: fold the newer node list onto the older tape
        tape.nodes.extend(root.nodes)
        root.nodes = []
        root._parent = tape
    return tape if tape is not None else GradTape()


def _record(data: np.ndarray, inputs: tuple, backward) -> Tensor:
    if not any(t.requires_grad for t in inputs):
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    tape = _merged_tape(inputs)
    out.tape = tape
    tape.nodes.append((inputs, out, backward))
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0 or t.data.size == 1


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape or _is_scalar(a) or _is_scalar(b):
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match "
                     f"(only scalar-with-tensor broadcasting is allowed)")


def _reduce_to(grad: np.ndarray, t: Tensor) -> np.ndarray:
    # gradient for a scalar operand of a broadcast op collapses by summation
    if grad.shape == t.data.shape:
        return grad
    return np.sum(grad).reshape(t.data.shape)


# ---------------------------------------------------------------------------
# elementwise and arithmetic ops


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b, "add")
    data = a.data + b.data

    def backward(grad, a=a, b=b):
        if a.requires_grad:
            a.grad += _reduce_to(grad, a)
        if b.requires_grad:
            b.grad += _reduce_to(grad, b)

    return _record(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b, "sub")
    data = a.data - b.data

    def backward(grad, a=a, b=b):
        if a.requires_grad:
            a.grad += _reduce_to(grad, a)
        if b.requires_grad:
            b.grad += _reduce_to(-grad, b)

    return _record(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b, "mul")
    data = a.data * b.data

    def backward(grad, a=a, b=b):
        if a.requires_grad:
            a.grad += _reduce_to(grad * b.data, a)
        if b.requires_grad:
            b.grad += _reduce_to(grad * a.data, b)

    return _record(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b, "div")
    data = a.data / b.data

    def backward(grad, a=a, b=b):
        if a.requires_grad:
            a.grad += _reduce_to(grad / b.data, a)
        if b.requires_grad:
            b.grad += _reduce_to(-grad * a.data / (b.data * b.data), b)

    return _record(data, (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(grad, a=a):
        if a.requires_grad:
            a.grad += -grad

    return _record(-a.data, (a,), backward)


def scalar_pow(a, exponent: float) -> Tensor:
    """Elementwise power with a constant real exponent."""
    a = _wrap(a)
    c = float(exponent)
    data = a.data ** c

    def backward(grad, a=a, c=c):
        if a.requires_grad:
            a.grad += grad * c * a.data ** (c - 1.0)

    return _record(data, (a,), backward)


def exp(a) -> Tensor:
    a = _wrap(a)
    data = np.exp(a.data)

    def backward(grad, a=a, data=data):
        if a.requires_grad:
            a.grad += grad * data

    return _record(data, (a,), backward)


def log(a) -> Tensor:
    a = _wrap(a)
    if np.any(a.data <= 0):
        raise ContractError("log requires strictly positive input")
    data = np.log(a.data)

    def backward(grad, a=a):
        if a.requires_grad:
            a.grad += grad / a.data

    return _record(data, (a,), backward)


def tanh(a) -> Tensor:
    a = _wrap(a)
    data = np.tanh(a.data)

    def backward(grad, a=a, data=data):
        if a.requires_grad:
            a.grad += grad * (1.0 - data * data)

    return _record(data, (a,), backward)


def sin(a) -> Tensor:
    a = _wrap(a)

    def backward(grad, a=a):
        if a.requires_grad:
            a.grad += grad * np.cos(a.data)

    return _record(np.sin(a.data), (a,), backward)


def sigmoid(a) -> Tensor:
    """Numerically stable logistic; saturates cleanly instead of overflowing."""
    a = _wrap(a)
    x = a.data
    ex = np.exp(-np.abs(x))
    data = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))

    def backward(grad, a=a, data=data):
        if a.requires_grad:
            a.grad += grad * data * (1.0 - data)

    return _record(data, (a,), backward)


def maximum(a, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient flows only where a > floor."""
    a = _wrap(a)
    c = float(floor)
    data = np.maximum(a.data, c)

    def backward(grad, a=a, c=c):
        if a.requires_grad:
            a.grad += grad * (a.data > c)

    return _record(data, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(grad, a=a, b=b):
        if a.requires_grad:
            a.grad += grad @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ grad

    return _record(data, (a, b), backward)


def transpose(a) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")

    def backward(grad, a=a):
        if a.requires_grad:
            a.grad += grad.T

    return _record(a.data.T.copy(), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    data = a.data.reshape(shape)

    def backward(grad, a=a):
        if a.requires_grad:
            a.grad += grad.reshape(a.data.shape)

    return _record(data.copy(), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad, tensors=tensors, offsets=offsets, axis=axis):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                sl = [slice(None)] * grad.ndim
                sl[axis] = slice(offsets[i], offsets[i + 1])
                t.grad += grad[tuple(sl)]

    return _record(data, tuple(tensors), backward)


def gather_rows(a, indices) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into place."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D tensor, got {a.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ContractError(f"row index out of range for {a.shape[0]} rows")
    data = a.data[idx]

    def backward(grad, a=a, idx=idx):
        if a.requires_grad:
            np.add.at(a.grad, idx, grad)

    return _record(data, (a,), backward)


def slice_cols(a, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a 2-D tensor."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols needs a 2-D tensor, got {a.shape}")
    if not 0 <= start <= stop <= a.shape[1]:
        raise ContractError(f"column slice [{start}:{stop}] invalid for {a.shape[1]} columns")
    data = a.data[:, start:stop].copy()

    def backward(grad, a=a, start=start, stop=stop):
        if a.requires_grad:
            a.grad[:, start:stop] += grad

    return _record(data, (a,), backward)


def tile_rows(a, n: int) -> Tensor:
    """Repeat a length-k vector as n identical rows; backward sums over rows."""
    a = _wrap(a)
    vec = a.data.reshape(-1)
    data = np.tile(vec, (n, 1))

    def backward(grad, a=a):
        if a.requires_grad:
            a.grad += grad.sum(axis=0).reshape(a.data.shape)

    return _record(data, (a,), backward)


def tile_cols(a, n: int) -> Tensor:
    """Repeat a length-k vector as n identical columns; backward sums over columns."""
    a = _wrap(a)
    vec = a.data.reshape(-1)
    data = np.tile(vec[:, None], (1, n))

    def backward(grad, a=a):
        if a.requires_grad:
            a.grad += grad.sum(axis=1).reshape(a.data.shape)

    return _record(data, (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def sum(a, axis: int | None = None) -> Tensor:    # noqa: A001 - numpy-style name
    a = _wrap(a)
    data = a.data.sum(axis=axis)

    def backward(grad, a=a, axis=axis):
        if not a.requires_grad:
            return
        if axis is None:
            a.grad += grad
        else:
            a.grad += np.expand_dims(grad, axis=axis)

    return _record(data, (a,), backward)


def mean(a, axis: int | None = None) -> Tensor:
    a = _wrap(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    data = a.data.mean(axis=axis)

    def backward(grad, a=a, axis=axis, count=count):
        if not a.requires_grad:
            return
        if axis is None:
            a.grad += grad / count
        else:
            a.grad += np.expand_dims(grad, axis=axis) / count

    return _record(data, (a,), backward)


def max_along_axis(a, axis: int) -> Tensor:
    """Max over one axis; ties send the gradient to the lowest index."""
    a = _wrap(a)
    idx = np.argmax(a.data, axis=axis)   # argmax picks the first maximum
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis=axis),
                              axis=axis).squeeze(axis=axis)

    def backward(grad, a=a, idx=idx, axis=axis):
        if a.requires_grad:
            expanded = np.zeros_like(a.data)
            np.put_along_axis(expanded, np.expand_dims(idx, axis=axis),
                              np.expand_dims(grad, axis=axis), axis=axis)
            a.grad += expanded

    return _record(data, (a,), backward)


def softmax_along_axis(a, axis: int) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(grad, a=a, data=data, axis=axis):
        if a.requires_grad:
            inner = (grad * data).sum(axis=axis, keepdims=True)
            a.grad += data * (grad - inner)

    return _record(data, (a,), backward)


def l2_normalize(a) -> Tensor:
    """Normalize a 1-D vector to unit Euclidean length."""
    a = _wrap(a)
    if a.data.ndim != 1:
        raise ShapeError(f"l2_normalize needs a 1-D tensor, got {a.shape}")
    norm = float(np.linalg.norm(a.data))
    if norm < 1e-30:
        raise ContractError("cannot l2-normalize a zero vector")
    data = a.data / norm

    def backward(grad, a=a, data=data, norm=norm):
        if a.requires_grad:
            a.grad += (grad - data * np.dot(grad, data)) / norm

    return _record(data, (a,), backward)


def logsumexp_along_axis(a, axis: int) -> Tensor:
    """log(sum(exp(a))) along an axis, computed with the max-shift trick.

    Composed from primitive ops; the max-path subgradients cancel so the
    total gradient is exactly the softmax weights.
    """
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"logsumexp_along_axis needs a 2-D tensor, got {a.shape}")
    m = max_along_axis(a, axis=axis)
    wide = tile_cols(m, a.shape[1]) if axis == 1 else tile_rows(m, a.shape[0])
    return add(m, log(sum(exp(sub(a, wide)), axis=axis)))


# ---------------------------------------------------------------------------
# backward and gradient checking


def backward(loss: Tensor) -> None:
    """Populate .grad for every tensor the loss depends on.

    Gradients are freshly zeroed on every call; they do not accumulate
    across separate backward invocations.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or loss.tape is None:
        raise ContractError("loss does not depend on any tensor requiring gradients")
    tape = loss.tape.root()
    seen = set()
    for inputs, out, _ in tape.nodes:
        for t in inputs:
            if t.requires_grad and id(t) not in seen:
                seen.add(id(t))
                t.grad = np.zeros_like(t.data)
        if id(out) not in seen:
            seen.add(id(out))
            out.grad = np.zeros_like(out.data)
    loss.grad = np.ones_like(loss.data)
    for inputs, out, fn in reversed(tape.nodes):
        fn(out.grad)


@dataclass
class GradcheckFailure:
    tensor: int
    index: tuple
    analytic: float
    numeric: float


@dataclass
class GradcheckReport:
    passed: bool
    max_abs_err: float
    max_rel_err: float
    failures: list = field(default_factory=list)


def gradcheck(f, inputs, eps: float = 1e-5, rtol: float = 1e-4,
              atol: float = 1e-7) -> GradcheckReport:
    """Compare backward gradients of f against central finite differences.

    f maps the input tensor (or list of tensors) to a scalar Tensor.  Every
    element of every input marked requires_grad is perturbed by +-eps; an
    element fails when |analytic - numeric| > atol + rtol * max(|analytic|,
    |numeric|).
    """
    tensors = [inputs] if isinstance(inputs, Tensor) else list(inputs)

    def call():
        out = f(inputs) if isinstance(inputs, Tensor) else f(*tensors)
        if not isinstance(out, Tensor) or out.data.size != 1:
            raise ContractError("gradcheck target must return a scalar Tensor")
        return out

    loss = call()
    backward(loss)
    analytic = [t.grad.copy() if t.requires_grad else None for t in tensors]

    report = GradcheckReport(passed=True, max_abs_err=0.0, max_rel_err=0.0)
    for ti, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        for idx in np.ndindex(t.data.shape):
            keep = t.data[idx]
            t.data[idx] = keep + eps
            up = call().item()
            t.data[idx] = keep - eps
            down = call().item()
            t.data[idx] = keep
            numeric = (up - down) / (2.0 * eps)
            ana = float(analytic[ti][idx])
            err = abs(ana - numeric)
            scale = max(abs(ana), abs(numeric))
            report.max_abs_err = max(report.max_abs_err, err)
            if scale > 0:
                report.max_rel_err = max(report.max_rel_err, err / max(scale, 1e-12))
            if err > atol + rtol * scale:
                report.passed = False
                report.failures.append(GradcheckFailure(ti, idx, ana, numeric))
    return report
