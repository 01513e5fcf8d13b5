"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Every differentiable computation in this package (sampling masks, attention,
reader losses, scorer outputs) is built from the ops defined here.  The engine
is deliberately small: exact-shape or scalar operands only, no broadcasting
tricks, 64-bit floats throughout.

Reductions (``sum``, and the sums inside ``softmax``) use ``math.fsum``, which
is exactly rounded and therefore independent of summation order.  This is what
makes document-permutation equalities elsewhere in the package hold bit-exactly
rather than merely to rounding noise.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "DomainError",
    "as_tensor",
    "constant",
    "add",
    "sub",
    "neg",
    "mul",
    "divide",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "vstack",
    "gather_rows",
    "sum_",
    "mean",
    "exp",
    "log",
    "tanh",
    "softmax",
    "max_elementwise",
    "backward",
    "reset_grads",
]


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class DomainError(ValueError):
    """An input value falls outside an op's mathematical domain."""


def _exact_sum(a: np.ndarray, axis: int | None) -> np.ndarray:
    """Order-independent sum via math.fsum (exactly rounded)."""
    if axis is None:
        return np.float64(math.fsum(a.ravel()))
    moved = np.moveaxis(a, axis, -1)
    flat = moved.reshape(-1, moved.shape[-1])
    out = np.fromiter((math.fsum(row) for row in flat), dtype=np.float64, count=flat.shape[0])
    return out.reshape(moved.shape[:-1])


class Tensor:
    """A node in the computation graph: float64 value, grad buffer, parents.

    ``requires_grad`` marks tensors that should receive gradients; it is
    inherited by results of ops with at least one grad-requiring parent.
    The parent graph is acyclic by construction (ops only reference existing
    tensors).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = np.zeros_like(arr)
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant copy: same value, no parents, no gradient flow."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all semantics live in the module-level ops.
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return divide(self, as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Alias for a non-grad leaf; signals intent at call sites."""
    return Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    # Exact shape match, or one operand a scalar (size 1).  Nothing else.
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match (no broadcasting)")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Collapse a gradient onto a scalar operand's shape."""
    if grad.shape == shape:
        return grad
    return np.asarray(_exact_sum(grad, axis=None)).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "add")
    out_data = a.data + b.data

    def backward_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make(out_data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "sub")
    out_data = a.data - b.data

    def backward_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _make(out_data, (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "mul")
    out_data = a.data * b.data

    def backward_fn(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _make(out_data, (a, b), backward_fn)


def divide(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "divide")
    if np.any(b.data == 0.0):
        idx = np.argwhere(np.atleast_1d(b.data) == 0.0)[0]
        raise DomainError(f"divide: zero divisor at index {tuple(int(i) for i in idx)}")
    out_data = a.data / b.data

    def backward_fn(g):
        return (
            _reduce_to(g / b.data, a.shape),
            _reduce_to(-g * a.data / (b.data * b.data), b.shape),
        )

    return _make(out_data, (a, b), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out_data, (a, b), backward_fn)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expects a 2-d tensor, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old_shape = a.shape
    out_data = a.data.reshape(shape).copy()

    def backward_fn(g):
        return (g.reshape(old_shape),)

    return _make(out_data, (a,), backward_fn)


def concat(tensors) -> Tensor:
    """Concatenate 1-d tensors; backward splits the gradient."""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat: needs at least one tensor")
    for t in tensors:
        if t.data.ndim != 1:
            raise ShapeError(f"concat: expects 1-d tensors, got shape {t.shape}")
    sizes = [t.size for t in tensors]
    out_data = np.concatenate([t.data for t in tensors])

    def backward_fn(g):
        grads = []
        off = 0
        for n in sizes:
            grads.append(g[off:off + n])
            off += n
        return tuple(grads)

    return _make(out_data, tensors, backward_fn)


def vstack(tensors) -> Tensor:
    """Stack 2-d tensors along axis 0; backward splits the row blocks."""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("vstack: needs at least one tensor")
    width = None
    for t in tensors:
        if t.data.ndim != 2:
            raise ShapeError(f"vstack: expects 2-d tensors, got shape {t.shape}")
        if width is None:
            width = t.shape[1]
        elif t.shape[1] != width:
            raise ShapeError(f"vstack: column counts differ ({width} vs {t.shape[1]})")
    rows = [t.shape[0] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=0)

    def backward_fn(g):
        grads = []
        off = 0
        for r in rows:
            grads.append(g[off:off + r])
            off += r
        return tuple(grads)

    return _make(out_data, tensors, backward_fn)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a 2-d tensor (embedding lookup); backward scatter-adds."""
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows: expects a 2-d tensor, got {a.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: indices must be 1-d")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise DomainError(f"gather_rows: index out of range for {a.shape[0]} rows")
    out_data = a.data[idx].copy()

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out_data, (a,), backward_fn)


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    out_data = np.asarray(_exact_sum(a.data, axis))
    in_shape = a.shape

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, in_shape).astype(np.float64),)
        return (np.broadcast_to(np.expand_dims(g, axis), in_shape).astype(np.float64),)

    return _make(out_data, (a,), backward_fn)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return divide(sum_(a, axis), constant(float(n)))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        idx = np.argwhere(np.atleast_1d(a.data) <= 0.0)[0]
        raise DomainError(f"log: non-positive input at index {tuple(int(i) for i in idx)}")
    out_data = np.log(a.data)
    return _make(out_data, (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return _make(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtraction stabilized softmax with the exact Jacobian backward."""
    if not np.all(np.isfinite(a.data)):
        raise DomainError("softmax: input contains non-finite entries")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = np.expand_dims(_exact_sum(e, axis if a.data.ndim else None), axis) \
        if a.data.ndim else np.asarray(_exact_sum(e, None))
    out_data = e / denom

    def backward_fn(g):
        inner = np.expand_dims(_exact_sum(g * out_data, axis), axis) \
            if a.data.ndim else np.asarray(_exact_sum(g * out_data, None))
        return (out_data * (g - inner),)

    return _make(out_data, (a,), backward_fn)


def max_elementwise(*tensors: Tensor) -> Tensor:
    """Elementwise maximum of same-shape tensors.

    Ties route the full gradient to the lowest-index argument; this is the
    documented subgradient choice and keeps repeated runs reproducible.
    """
    if not tensors:
        raise ShapeError("max_elementwise: needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ShapeError(f"max_elementwise: shapes {shape} and {t.shape} differ")
    stacked = np.stack([t.data for t in tensors], axis=0)
    winner = np.argmax(stacked, axis=0)  # np.argmax returns the first (lowest) index on ties
    out_data = np.take_along_axis(stacked, winner[None], axis=0)[0]

    def backward_fn(g):
        return tuple((g * (winner == j)).astype(np.float64) for j in range(len(tensors)))

    return _make(out_data.copy(), (tensors[0],) + tuple(tensors[1:]), backward_fn)


def topo_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order of the graph reachable from root."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into .grad for every reachable tensor.

    root must be scalar-shaped.  Repeated calls accumulate; use reset_grads
    or per-tensor zero_grad to start fresh.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar-shaped, got {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in topo_order(root):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad += g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad:
                continue
            acc = grads.get(id(p))
            if acc is None:
                grads[id(p)] = pg.astype(np.float64, copy=True)
            else:
                acc += pg


def reset_grads(root: Tensor) -> None:
    """Zero the grad buffer of every tensor reachable from root."""
    for node in topo_order(root):
        node.grad[...] = 0.0
