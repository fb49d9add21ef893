"""
Dense float32 tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every op that touches a tensor with
``requires_grad`` records its parents and a backward rule; :func:`backward`
walks that graph in reverse topological order. Only first-order gradients
are supported.

Values are checked after every op: a NaN or Inf raises
:class:`~src.core.errors.NumericalError` instead of propagating silently.

The working dtype is float32. Finite-difference oracles switch the whole
computation to float64 with :func:`precision`.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import ConfigError, NumericalError, ShapeError, TapeError

_state = threading.local()

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def get_dtype() -> type:
    """Active floating dtype for new tensors (per thread)."""
    return getattr(_state, "dtype", np.float32)


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Build tensors without recording the graph."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def precision(dtype: type):
    """Run the enclosed computation in ``dtype`` (float32 or float64)."""
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dtype}")
    prev = get_dtype()
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        bad = int(arr.size - np.isfinite(arr).sum())
        raise NumericalError(
            f"non-finite output from '{op}' ({bad} of {arr.size} values)",
            diagnostics={"op": op, "non_finite": bad, "shape": list(arr.shape)},
        )


class Tensor:
    """
    Node of the autodiff graph.

    Attributes:
        data (np.ndarray): Values, row-major.
        requires_grad (bool): Whether gradients flow into this tensor.
        grad (Optional[np.ndarray]): Gradient buffer, same shape as ``data``.
        name (str): Optional label (parameter name).
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=get_dtype())
        _check_finite(arr, name or "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward_fn: Optional[BackwardFn] = None
        self._op = "leaf"
        self._consumed = False

    # ------------------------------------------------------------------ info
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
    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, cut from the graph."""
        out = Tensor.__new__(Tensor)
        out.__dict__.update(
            data=self.data, requires_grad=False, grad=None, name=self.name,
            _parents=(), _backward_fn=None, _op="detach", _consumed=False,
        )
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # ------------------------------------------------------------ operators
    def __add__(self, other): return add(self, _lift(other))
    def __radd__(self, other): return add(_lift(other), self)
    def __sub__(self, other): return sub(self, _lift(other))
    def __rsub__(self, other): return sub(_lift(other), self)
    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))
    def __rmul__(self, other): return self.__mul__(other)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return getitem(self, idx)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def max(self) -> "Tensor":
        return max_(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Iterable[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    arr = np.asarray(data, dtype=get_dtype())
    _check_finite(arr, op)
    out = Tensor.__new__(Tensor)
    parents = tuple(parents)
    tracked = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.__dict__.update(
        data=arr, requires_grad=tracked, grad=None, name="",
        _parents=parents if tracked else (),
        _backward_fn=backward_fn if tracked else None,
        _op=op, _consumed=False,
    )
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# ---------------------------------------------------------------- elementwise
def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a constant."""
    def backward(g):
        return (g * c,)

    return _result(a.data * c, (a,), backward, "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g,)

    return _result(a.data + c, (a,), backward, "add_scalar")


_GELU_K = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_K * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        d_inner = _GELU_K * (1.0 + 3.0 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * d_inner),)

    return _result(out, (a,), backward, "gelu")


def silu(a: Tensor) -> Tensor:
    x = a.data
    sig = 1.0 / (1.0 + np.exp(-x))

    def backward(g):
        return (g * sig * (1.0 + x * (1.0 - sig)),)

    return _result(x * sig, (a,), backward, "silu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _result(out, (a,), backward, "exp")


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)

    def backward(g):
        with np.errstate(divide="ignore"):
            return (g * 0.5 / out,)

    return _result(out, (a,), backward, "sqrt")


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    if low > high:
        raise ConfigError(f"clamp bounds inverted: {low} > {high}")
    inside = (a.data >= low) & (a.data <= high)

    def backward(g):
        return (np.where(inside, g, 0.0),)

    return _result(np.clip(a.data, low, high), (a,), backward, "clamp")


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Pick ``a`` where ``cond`` holds, else ``b`` (bit-exact selection)."""
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def backward(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _result(out, (a, b), backward, "where")


# ------------------------------------------------------------------ algebra
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product over the last two axes; leading axes broadcast.

    Args:
        a (Tensor): ``[..., m, k]``.
        b (Tensor): ``[..., k, n]``.

    Returns:
        Tensor: ``[..., m, n]``.

    Raises:
        ShapeError: If the inner extents differ or either operand is 1-D.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by subtracting the row max."""
    if a.ndim == 0 or a.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty last axis")
    _check_finite(a.data, "softmax input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (a,), backward, "softmax")


def layernorm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """
    Normalize the last axis to zero mean and unit variance, then apply
    ``gamma * x + beta``.

    Raises:
        ConfigError: If ``eps <= 0``.
        ShapeError: If ``gamma``/``beta`` do not match the last axis.
    """
    if eps <= 0:
        raise ConfigError(f"layernorm eps must be positive, got {eps}")
    width = a.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(f"layernorm affine {gamma.shape}/{beta.shape} vs last dim {width}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        dxhat = g * gamma.data
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (a, gamma, beta), backward, "layernorm")


# ----------------------------------------------------------------- layout
def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc

    def backward(g):
        return (g.reshape(a.shape),)

    return _result(out, (a,), backward, "reshape")


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _result(np.transpose(a.data, axes), (a,), backward, "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    """Basic or advanced indexing; gradients scatter back with ``np.add.at``."""
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(out, (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of nothing")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]} on axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, backward, "concat")


# ------------------------------------------------------------- reductions
def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_(a: Tensor) -> Tensor:
    """Global maximum; the gradient goes to the first maximal entry."""
    if a.size == 0:
        raise ShapeError("max of an empty tensor")
    flat_idx = int(np.argmax(a.data))
    out = a.data.reshape(-1)[flat_idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full.reshape(-1)[flat_idx] = g
        return (full,)

    return _result(out, (a,), backward, "max")


# --------------------------------------------------------------- backward
def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """
    Populate ``grad`` on every ``requires_grad`` ancestor of a scalar root.

    Leaf gradients accumulate across graphs until reset with ``zero_grad``.
    The graph itself is consumed: a second call on the same root raises
    :class:`TapeError` unless :func:`reset_tape` is called in between.

    Raises:
        TapeError: If ``root`` is not a scalar, does not require grad, or the
            graph was already consumed.
        NumericalError: If a gradient is non-finite.
    """
    if root.size != 1:
        raise TapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise TapeError("root does not depend on any tensor that requires grad")
    order = _topological_order(root)
    for node in order:
        if node._consumed:
            raise TapeError("graph already consumed by a previous backward(); call reset_tape()")

    pending = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward_fn is None:
            _check_finite(node.grad, f"grad of {node.name or 'leaf'}")
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg

    for node in order:
        if node._backward_fn is not None:
            node._consumed = True


def reset_tape(root: Tensor) -> None:
    """Re-arm a consumed graph and clear its interior gradients."""
    for node in _topological_order(root):
        if node._backward_fn is not None:
            node._consumed = False
            node.grad = None
