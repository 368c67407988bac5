from __future__ import annotations

from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .utils import Array, IndexArray, Numeric


class Tensor:
    """A dense float64 array that records how it was produced.

    Tensors are nodes of a computation graph built while the forward pass runs. Leaves are the
    trainable parameters, constants are inputs that never receive gradients, and every other node
    keeps its operation tag, its parent tensors in `args`, and the non-tensor operands (axes,
    indices, scalars) in `attrs`. Calling `backward` on a scalar replays the graph in reverse
    topological order and accumulates `grad` on the leaves.

    There is no implicit broadcasting: binary operations require equal shapes, except for Python
    scalars which are applied through `scale` and `shift`.
    """

    class Op(Enum):
        """Tag used to represent the producing operation as a tagged union."""

        # Sources:
        LEAF = "Leaf"
        CONSTANT = "Constant"

        # Operations:
        ADD = "Add"
        MUL = "Multiply"
        SCALE = "Scale"
        SHIFT = "Shift"
        MATMUL = "MatMul"
        RELU = "ReLU"
        SOFTMAX = "Softmax"
        CONCAT = "Concat"
        GATHER = "Gather"
        SEGMENT_SUM = "SegmentSum"
        SUM = "Sum"
        RESHAPE = "Reshape"
        TRANSPOSE = "Transpose"

    def __init__(self, op: Tensor.Op, values: Array, *args: Tensor, **attributes: Any) -> None:
        self.op = op
        self.values = values
        self.args = args
        self.attrs = attributes
        self.grad: Array | None = None
        self.requires_grad = op == Tensor.Op.LEAF or any(arg.requires_grad for arg in args)

    # Constructors
    @classmethod
    def leaf(cls, values: Any, name: str = "") -> Tensor:
        """A trainable tensor. Its `grad` accumulates across `backward` calls until reset.

        Args:
            values: Anything `numpy.asarray` accepts; stored as a float64 copy.
            name: Parameter name used in error messages and checkpoints.
        """
        return cls(cls.Op.LEAF, np.array(values, dtype=np.float64), name=name)

    @classmethod
    def constant(cls, values: Any) -> Tensor:
        """A tensor that takes part in the forward pass but never receives gradients."""
        return cls(cls.Op.CONSTANT, np.array(values, dtype=np.float64))

    @classmethod
    def zeros(cls, *shape: int) -> Tensor:
        return cls.constant(np.zeros(shape))

    # Helpers
    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def ndim(self) -> int:
        return int(self.values.ndim)

    @property
    def name(self) -> str:
        return str(self.attrs.get("name", ""))

    @property
    def is_leaf(self) -> bool:
        return self.op == Tensor.Op.LEAF

    @property
    def gradient(self) -> Array:
        """The accumulated gradient, with zeros when nothing reached this tensor yet."""
        return self.grad if self.grad is not None else np.zeros_like(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.values.reshape(()))

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name}" if self.name else ""
        return f"{self.op.value}(shape={self.shape}{label})"

    # Algebraic operations
    def __add__(self, other: object) -> Tensor:
        if isinstance(other, Tensor):
            return elementwise(self, other, "add")
        if isinstance(other, (int, float)):
            return shift(self, other)
        return NotImplemented

    def __radd__(self, other: object) -> Tensor:
        if isinstance(other, (int, float)):
            return shift(self, other)
        return NotImplemented

    def __mul__(self, other: object) -> Tensor:
        if isinstance(other, Tensor):
            return elementwise(self, other, "mul")
        if isinstance(other, (int, float)):
            return scale(self, other)
        return NotImplemented

    def __rmul__(self, other: object) -> Tensor:
        if isinstance(other, (int, float)):
            return scale(self, other)
        return NotImplemented

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __sub__(self, other: object) -> Tensor:
        if isinstance(other, Tensor):
            return elementwise(self, scale(other, -1.0), "add")
        if isinstance(other, (int, float)):
            return shift(self, -other)
        return NotImplemented

    def __rsub__(self, other: object) -> Tensor:
        if isinstance(other, (int, float)):
            return shift(scale(self, -1.0), other)
        return NotImplemented

    def __truediv__(self, other: object) -> Tensor:
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return NotImplemented

    def __matmul__(self, other: object) -> Tensor:
        if not isinstance(other, Tensor):
            return NotImplemented
        return matmul(self, other)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} needs equal shapes, got {a.shape} and {b.shape}")


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product `a · b`.

    Both operands are matrices, or stacks of matrices with identical leading dimensions, in which
    case the product is taken per stacked pair.

    Raises:
        DimensionError: If the ranks differ, the ranks are below two, the leading dimensions
            differ, or the inner dimensions disagree.
    """
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul cannot combine shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} and {b.shape}")
    return Tensor(Tensor.Op.MATMUL, np.matmul(a.values, b.values), a, b)


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """Pointwise `add` (⊕) or `mul` (∘) of two equally shaped tensors."""
    _check_same_shape(a, b, kind)
    if kind == "add":
        return Tensor(Tensor.Op.ADD, a.values + b.values, a, b)
    if kind == "mul":
        return Tensor(Tensor.Op.MUL, a.values * b.values, a, b)
    raise ContractError(f"Unknown elementwise kind '{kind}'; expected 'add' or 'mul'.")


def scale(a: Tensor, factor: Numeric) -> Tensor:
    return Tensor(Tensor.Op.SCALE, a.values * float(factor), a, factor=float(factor))


def shift(a: Tensor, offset: Numeric) -> Tensor:
    return Tensor(Tensor.Op.SHIFT, a.values + float(offset), a, offset=float(offset))


def relu(a: Tensor) -> Tensor:
    return Tensor(Tensor.Op.RELU, np.maximum(a.values, 0.0), a)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis`, stabilized by subtracting the maximum.

    Entries equal to `-inf` receive exactly zero weight, which is how padded positions are masked.
    Every slice along `axis` needs at least one finite entry.
    """
    axis = _normalize_axis(axis, a.ndim)
    peak = np.max(a.values, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    exps = np.exp(a.values - peak)
    probs = exps / np.sum(exps, axis=axis, keepdims=True)
    return Tensor(Tensor.Op.SOFTMAX, probs, a, axis=axis)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    axis = _normalize_axis(axis, tensors[0].ndim)
    reference = tensors[0].shape
    for tensor in tensors[1:]:
        other = tensor.shape
        if len(other) != len(reference) or any(
            x != y for i, (x, y) in enumerate(zip(reference, other)) if i != axis
        ):
            raise DimensionError(f"concat along axis {axis} cannot join {reference} and {other}")
    values = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = tuple(t.shape[axis] for t in tensors)
    return Tensor(Tensor.Op.CONCAT, values, *tensors, axis=axis, sizes=sizes)


def _as_indices(indices: IndexArray, bound: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    bad = idx[(idx < 0) | (idx >= bound)]
    if bad.size:
        raise IndexError(f"index {int(bad[0])} out of range for {bound} rows")
    return idx


def gather_rows(table: Tensor, indices: IndexArray) -> Tensor:
    """Select rows of `table`; a row selected twice receives its gradient twice.

    Raises:
        IndexError: With the first offending index when any index falls outside the table.
    """
    if table.ndim < 1:
        raise DimensionError(f"gather_rows needs a table of rank >= 1, got {table.shape}")
    idx = _as_indices(indices, table.shape[0])
    return Tensor(Tensor.Op.GATHER, table.values[idx], table, indices=idx)


def segment_sum(rows: Tensor, segments: IndexArray, num_segments: int) -> Tensor:
    """Scatter-add `rows[k]` into output row `segments[k]`; the adjoint of `gather_rows`."""
    if rows.ndim < 1:
        raise DimensionError(f"segment_sum needs rows of rank >= 1, got {rows.shape}")
    idx = _as_indices(segments, num_segments)
    if idx.shape[0] != rows.shape[0]:
        raise DimensionError(f"{idx.shape[0]} segment ids for {rows.shape[0]} rows")
    out = np.zeros((num_segments, *rows.shape[1:]))
    np.add.at(out, idx, rows.values)
    return Tensor(Tensor.Op.SEGMENT_SUM, out, rows, indices=idx)


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum over `axis`, or over everything into a scalar when `axis` is None."""
    if axis is None:
        return Tensor(Tensor.Op.SUM, np.asarray(np.sum(a.values)), a, axis=None)
    axis = _normalize_axis(axis, a.ndim)
    return Tensor(Tensor.Op.SUM, np.sum(a.values, axis=axis), a, axis=axis)


def reshape(a: Tensor, *shape: int) -> Tensor:
    try:
        values = a.values.reshape(shape)
    except ValueError as error:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from error
    return Tensor(Tensor.Op.RESHAPE, values, a)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; by default swap the last two."""
    if axes is None:
        if a.ndim < 2:
            raise DimensionError(f"transpose needs rank >= 2, got {a.shape}")
        axes = (*range(a.ndim - 2), a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"invalid permutation {axes} for shape {a.shape}")
    return Tensor(Tensor.Op.TRANSPOSE, np.transpose(a.values, axes), a, axes=axes)


def broadcast_rows(row: Tensor, count: int) -> Tensor:
    """Repeat a vector `count` times into a `[count, n]` matrix."""
    if row.ndim != 1:
        raise DimensionError(f"broadcast_rows needs a vector, got {row.shape}")
    return gather_rows(reshape(row, 1, row.shape[0]), np.zeros(count, dtype=np.int64))


# Backward rules. Each returns one gradient per parent, in `args` order.
def _swap_last(x: Array) -> Array:
    return np.swapaxes(x, -1, -2)


def _backward_add(node: Tensor, g: Array) -> tuple[Array, ...]:
    return g, g


def _backward_mul(node: Tensor, g: Array) -> tuple[Array, ...]:
    a, b = node.args
    return g * b.values, g * a.values


def _backward_scale(node: Tensor, g: Array) -> tuple[Array, ...]:
    return (g * node.attrs["factor"],)


def _backward_shift(node: Tensor, g: Array) -> tuple[Array, ...]:
    return (g,)


def _backward_matmul(node: Tensor, g: Array) -> tuple[Array, ...]:
    a, b = node.args
    return np.matmul(g, _swap_last(b.values)), np.matmul(_swap_last(a.values), g)


def _backward_relu(node: Tensor, g: Array) -> tuple[Array, ...]:
    return (g * (node.args[0].values > 0.0),)


def _backward_softmax(node: Tensor, g: Array) -> tuple[Array, ...]:
    p = node.values
    inner = np.sum(p * g, axis=node.attrs["axis"], keepdims=True)
    return (p * (g - inner),)


def _backward_concat(node: Tensor, g: Array) -> tuple[Array, ...]:
    bounds = np.cumsum(node.attrs["sizes"])[:-1]
    return tuple(np.split(g, bounds, axis=node.attrs["axis"]))


def _backward_gather(node: Tensor, g: Array) -> tuple[Array, ...]:
    table = node.args[0]
    out = np.zeros_like(table.values)
    np.add.at(out, node.attrs["indices"], g)
    return (out,)


def _backward_segment_sum(node: Tensor, g: Array) -> tuple[Array, ...]:
    return (g[node.attrs["indices"]],)


def _backward_sum(node: Tensor, g: Array) -> tuple[Array, ...]:
    source = node.args[0]
    axis = node.attrs["axis"]
    if axis is None:
        return (np.full(source.shape, float(g)),)
    return (np.broadcast_to(np.expand_dims(g, axis), source.shape).copy(),)


def _backward_reshape(node: Tensor, g: Array) -> tuple[Array, ...]:
    return (g.reshape(node.args[0].shape),)


def _backward_transpose(node: Tensor, g: Array) -> tuple[Array, ...]:
    return (np.transpose(g, np.argsort(node.attrs["axes"])),)


_BACKWARD: dict[Tensor.Op, Callable[[Tensor, Array], tuple[Array, ...]]] = {
    Tensor.Op.ADD: _backward_add,
    Tensor.Op.MUL: _backward_mul,
    Tensor.Op.SCALE: _backward_scale,
    Tensor.Op.SHIFT: _backward_shift,
    Tensor.Op.MATMUL: _backward_matmul,
    Tensor.Op.RELU: _backward_relu,
    Tensor.Op.SOFTMAX: _backward_softmax,
    Tensor.Op.CONCAT: _backward_concat,
    Tensor.Op.GATHER: _backward_gather,
    Tensor.Op.SEGMENT_SUM: _backward_segment_sum,
    Tensor.Op.SUM: _backward_sum,
    Tensor.Op.RESHAPE: _backward_reshape,
    Tensor.Op.TRANSPOSE: _backward_transpose,
}


class GradientTape:
    """The operations reachable from a root tensor, in topological order.

    Replaying the tape walks the nodes from the root back to the leaves, visiting each node once
    and summing the contributions of every consumer before a node's own rule runs.
    """

    def __init__(self, root: Tensor) -> None:
        self.nodes: list[Tensor] = _topological_order(root)
        self.grads: dict[int, Array] = {}

    def replay(self, seed: Array) -> None:
        root = self.nodes[-1]
        self.grads = {id(root): seed}

        for node in reversed(self.nodes):
            g = self.grads.pop(id(node), None)
            if g is None:
                continue

            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue

            rule = _BACKWARD.get(node.op)
            if rule is None:
                continue

            for parent, contribution in zip(node.args, rule(node, g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                previous = self.grads.get(key)
                self.grads[key] = contribution if previous is None else previous + contribution


def _topological_order(root: Tensor) -> list[Tensor]:
    # Iterative post-order; the forward graph of a full model is deeper than the recursion limit.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]

    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.args:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    return order


def backward(loss: Tensor) -> None:
    """Accumulate `∂loss/∂leaf` into the `grad` of every leaf the loss depends on.

    Raises:
        ContractError: If `loss` is not a scalar.
    """
    if loss.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    GradientTape(loss).replay(np.ones(()))
