"""Dense tensors with tape-based reverse-mode differentiation.

A `Tensor` wraps a numpy array plus an optional gradient buffer.  Every
differentiable operation records, on the output tensor, the list of
(parent, vjp) pairs needed to push gradients backward; `backward()` on a
scalar replays those records in reverse topological order.  The recorded
graph is rebuilt from scratch on every forward pass, which keeps the
alternating multi-objective training loop simple: no stale state survives
a step.

Training runs in float32; gradient-check tests build float64 graphs.
Dtypes propagate through ops via numpy promotion.

Broadcasting is deliberately limited to scalar-vs-tensor; anything
shape-mismatched beyond that raises `ShapeError`.
"""

import numpy as np

from .errors import ContractError, DomainError, ShapeError

DEFAULT_DTYPE = np.float32
EPS_LOG = 1e-12


class Tensor:
    """n-d array with optional grad buffer and backward record.

    `data` is immutable by convention after construction (optimizers
    update parameters through `assign_`); `grad` is the only mutable
    buffer and accumulates additively across backward paths.
    """

    __slots__ = ("data", "grad", "requires_grad", "_vjps", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._vjps = ()  # tuple of (parent Tensor, vjp callable)
        self._op = "leaf"

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

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._non_scalar()

    def _non_scalar(self):
        raise ContractError(f"expected a scalar tensor, got shape {self.shape}")

    def detach(self):
        """Same data, no graph: gradients stop here."""
        return Tensor(self.data, requires_grad=False)

    def assign_(self, array):
        """In-place parameter update (optimizer use only)."""
        np.copyto(self.data, array)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- convenience operators (constants are wrapped, scalar-only broadcast) --

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean_(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def make_node(data, op, vjps):
    """Record an op output; vjps is [(parent, fn)] kept only for grad parents."""
    out = Tensor(data)
    kept = tuple((p, fn) for p, fn in vjps if p.requires_grad)
    if kept:
        out.requires_grad = True
        out._vjps = kept
    out._op = op
    return out


def toposort(root):
    """Recorded nodes reachable from `root`, parents before children.

    Iterative DFS: the reverse of this order is the replay order for
    backward, visiting each node exactly once.
    """
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._vjps:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Populate `.grad` on every requires_grad tensor reachable from `loss`.

    `loss` must be scalar.  Gradients accumulate additively when a tensor
    feeds multiple paths; a graph with no requires_grad leaves is a no-op.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    seed = np.ones(loss.shape, dtype=loss.dtype)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(toposort(loss)):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node._vjps:
            pg = np.asarray(vjp(g), dtype=parent.dtype)
            # grads are never mutated in place, so views of g are safe to keep
            parent.grad = pg if parent.grad is None else parent.grad + pg


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def _binary_operands(a, b, op):
    # plain numbers adopt the tensor operand's dtype so float32 graphs stay float32
    if isinstance(a, (int, float)) and isinstance(b, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ and neither is scalar")
    return a, b


def _reduce_to(shape, g):
    # undo scalar-vs-tensor broadcast when the parent was the scalar side
    if g.shape != shape:
        return g.sum().reshape(shape)
    return g


def add(a, b):
    a, b = _binary_operands(a, b, "add")
    return make_node(
        a.data + b.data,
        "add",
        [(a, lambda g: _reduce_to(a.shape, g)), (b, lambda g: _reduce_to(b.shape, g))],
    )


def sub(a, b):
    a, b = _binary_operands(a, b, "sub")
    return make_node(
        a.data - b.data,
        "sub",
        [(a, lambda g: _reduce_to(a.shape, g)), (b, lambda g: _reduce_to(b.shape, -g))],
    )


def mul(a, b):
    a, b = _binary_operands(a, b, "mul")
    return make_node(
        a.data * b.data,
        "mul",
        [
            (a, lambda g: _reduce_to(a.shape, g * b.data)),
            (b, lambda g: _reduce_to(b.shape, g * a.data)),
        ],
    )


def negate(a):
    a = as_tensor(a)
    return make_node(-a.data, "negate", [(a, lambda g: -g)])


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return make_node(out_data, "exp", [(a, lambda g: g * out_data)])


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive input (use clamped_log for saturating values)")
    return make_node(np.log(a.data), "log", [(a, lambda g: g / a.data)])


def clamped_log(a, eps=EPS_LOG):
    """log(max(x, eps)), with gradient 1/max(x, eps).

    Below the floor the true subgradient is 0, but a zero there makes
    sigmoid saturation absorbing: a prediction stuck at float32 1.0 or
    0.0 would never receive a corrective signal.  Evaluating the log
    gradient at the clamped point keeps the direction alive (the
    magnitude spike is tamed by RMSProp's normalization).
    """
    a = as_tensor(a)
    clamped = np.maximum(a.data, np.asarray(eps, dtype=a.dtype))
    return make_node(np.log(clamped), "clamped_log", [(a, lambda g: g / clamped)])


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    return make_node(
        a.data @ b.data,
        "matmul",
        [(a, lambda g: g @ b.data.T), (b, lambda g: a.data.T @ g)],
    )


def sum_(a):
    a = as_tensor(a)
    out = np.asarray(a.data.sum(dtype=a.dtype)).reshape(())
    return make_node(out, "sum", [(a, lambda g: np.broadcast_to(g, a.shape))])


def mean_(a):
    a = as_tensor(a)
    n = a.size
    out = np.asarray(a.data.mean(dtype=a.dtype)).reshape(())
    return make_node(out, "mean", [(a, lambda g: np.broadcast_to(g / n, a.shape))])


def reshape(a, shape):
    a = as_tensor(a)
    return make_node(a.data.reshape(shape), "reshape", [(a, lambda g: g.reshape(a.shape))])


def concat(parts, axis=1):
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    vjps = []
    start = 0
    for p in parts:
        width = p.shape[axis]
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(start, start + width)
        vjps.append((p, lambda g, sl=tuple(sl): np.ascontiguousarray(g[sl])))
        start += width
    return make_node(data, "concat", vjps)
