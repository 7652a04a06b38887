"""Dense 2-D matrix arithmetic with reverse-mode differentiation.

Values are float64 numpy arrays of rank exactly 2. A :class:`Node` wraps one
value together with the rule that pushes its gradient to the nodes it was
computed from; calling :meth:`Node.backward` on a 1x1 node walks that graph in
reverse topological order. Graphs are built per training step and belong to a
single thread.
"""

import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

EPS = 1e-12

Matrix = np.ndarray
Operand = Union["Node", np.ndarray, float, int]


def as_matrix(values, name: str = "matrix") -> Matrix:
    """Return ``values`` as a float64 2-D array (scalars become 1x1, vectors rows)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got {arr.ndim}-D")
    return arr


# =============================================================================
# GRAPH NODES
# =============================================================================


class Node:
    """A matrix value in a computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    # ndarray <op> Node must dispatch to the reflected Node operator
    __array_ufunc__ = None

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward: Optional[Callable[[Matrix], None]] = None,
        requires_grad: Optional[bool] = None,
        name: Optional[str] = None,
    ):
        self.value = as_matrix(value, name or "node")
        self.grad: Optional[Matrix] = None
        self._parents = tuple(parents)
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self._parents)
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def leaf(cls, value, name: Optional[str] = None) -> "Node":
        """A trainable input whose gradient is collected after backward()."""
        matrix = np.array(value, dtype=np.float64, copy=True)
        return cls(matrix, requires_grad=True, name=name)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def gradient(self) -> Matrix:
        """Accumulated gradient; zeros when nothing flowed into this node."""
        if self.grad is None:
            return np.zeros_like(self.value)
        return self.grad

    @property
    def T(self) -> "Node":  # noqa: N802
        return transpose(self)

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def _accumulate(self, g: Matrix) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` of every ancestor with d(self)/d(ancestor)."""
        if self.value.shape != (1, 1):
            raise ContractError(
                f"backward() needs a scalar root, got {self.value.shape}"
            )
        order = _topological_order(self)
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other: Operand) -> "Node":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Node":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Node":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Node":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Node":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Node":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "Node":
        return div(self, other)

    def __neg__(self) -> "Node":
        return neg(self)

    def __matmul__(self, other: Operand) -> "Node":
        return matmul(self, other)

    def __rmatmul__(self, other: Operand) -> "Node":
        return matmul(other, self)

    def __rtruediv__(self, other: Operand) -> "Node":
        return div(other, self)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def _topological_order(root: Node) -> List[Node]:
    order: List[Node] = []
    seen = set()
    stack: List[Tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def const(value) -> Node:
    """Wrap a value as a node that never receives gradient."""
    if isinstance(value, Node):
        return detach(value)
    return Node(value, requires_grad=False)


def _lift(value: Operand) -> Node:
    if isinstance(value, Node):
        return value
    return Node(value, requires_grad=False)


def detach(x: Node) -> Node:
    """Same value, cut from the graph (stop-gradient)."""
    return Node(x.value, requires_grad=False, name=x.name)


def _broadcast_shape(
    op: str, a: Tuple[int, int], b: Tuple[int, int]
) -> Tuple[int, int]:
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise DimensionError(op, a, b)
    return out[0], out[1]


def _unbroadcast(g: Matrix, shape: Tuple[int, int]) -> Matrix:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# =============================================================================
# ELEMENTWISE OPERATIONS
# =============================================================================


def add(a: Operand, b: Operand) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("add", a.shape, b.shape)

    def backward(g: Matrix) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Node(a.value + b.value, (a, b), backward)


def sub(a: Operand, b: Operand) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("sub", a.shape, b.shape)

    def backward(g: Matrix) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return Node(a.value - b.value, (a, b), backward)


def mul(a: Operand, b: Operand) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("mul", a.shape, b.shape)

    def backward(g: Matrix) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.shape))

    return Node(a.value * b.value, (a, b), backward)


def div(a: Operand, b: Operand) -> Node:
    """a / max(b, EPS)."""
    a, b = _lift(a), _lift(b)
    _broadcast_shape("div", a.shape, b.shape)
    denom = np.maximum(b.value, EPS)
    out = a.value / denom

    def backward(g: Matrix) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / denom, a.shape))
        if b.requires_grad:
            local = np.where(b.value >= EPS, -out / denom, 0.0)
            b._accumulate(_unbroadcast(g * local, b.shape))

    return Node(out, (a, b), backward)


def neg(x: Operand) -> Node:
    x = _lift(x)

    def backward(g: Matrix) -> None:
        x._accumulate(-g)

    return Node(-x.value, (x,), backward)


def clamp_min(x: Operand, threshold: float = EPS) -> Node:
    """max(x, threshold); no gradient below the threshold."""
    x = _lift(x)
    passed = x.value >= threshold

    def backward(g: Matrix) -> None:
        x._accumulate(np.where(passed, g, 0.0))

    return Node(np.maximum(x.value, threshold), (x,), backward)


def log(x: Operand) -> Node:
    """Natural log of max(x, EPS)."""
    x = _lift(x)
    clamped = np.maximum(x.value, EPS)

    def backward(g: Matrix) -> None:
        x._accumulate(np.where(x.value >= EPS, g / clamped, 0.0))

    return Node(np.log(clamped), (x,), backward)


def exp(x: Operand) -> Node:
    x = _lift(x)
    out = np.exp(x.value)

    def backward(g: Matrix) -> None:
        x._accumulate(g * out)

    return Node(out, (x,), backward)


def sqrt(x: Operand) -> Node:
    x = _lift(x)
    out = np.sqrt(np.maximum(x.value, 0.0))

    def backward(g: Matrix) -> None:
        x._accumulate(np.where(out > EPS, 0.5 * g / np.maximum(out, EPS), 0.0))

    return Node(out, (x,), backward)


def relu(x: Operand) -> Node:
    x = _lift(x)
    active = x.value > 0.0

    def backward(g: Matrix) -> None:
        x._accumulate(np.where(active, g, 0.0))

    return Node(np.where(active, x.value, 0.0), (x,), backward)


def sigmoid(x: Operand) -> Node:
    """Logistic function, clamped into [EPS, 1 - EPS]."""
    x = _lift(x)
    z = np.exp(-np.abs(x.value))
    raw = np.where(x.value >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))
    out = np.clip(raw, EPS, 1.0 - EPS)
    inside = (raw > EPS) & (raw < 1.0 - EPS)

    def backward(g: Matrix) -> None:
        x._accumulate(np.where(inside, g * raw * (1.0 - raw), 0.0))

    return Node(out, (x,), backward)


_ELEMENTWISE: Dict[str, Callable[..., Node]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "log": log,
    "exp": exp,
    "sqrt": sqrt,
    "clampmin": clamp_min,
}


def elementwise(op: str, *operands, **kwargs) -> Node:
    """Dispatch an elementwise operation by name.

    Binary: add, sub, mul, div. Unary: log, exp, sqrt, clampmin.
    """
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"Unknown elementwise operation: {op}") from None
    return fn(*operands, **kwargs)


# =============================================================================
# STRUCTURAL OPERATIONS
# =============================================================================


def matmul(a: Operand, b: Operand) -> Node:
    a, b = _lift(a), _lift(b)
    if a.cols != b.rows:
        raise DimensionError("matmul", a.shape, b.shape)

    def backward(g: Matrix) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.value.T)
        if b.requires_grad:
            b._accumulate(a.value.T @ g)

    return Node(a.value @ b.value, (a, b), backward)


def transpose(x: Operand) -> Node:
    x = _lift(x)

    def backward(g: Matrix) -> None:
        x._accumulate(g.T)

    return Node(x.value.T, (x,), backward)


def concat_cols(parts: Sequence[Operand]) -> Node:
    """Join matrices with equal row counts side by side."""
    nodes = [_lift(p) for p in parts]
    if not nodes:
        raise ContractError("concat_cols needs at least one operand")
    rows = nodes[0].rows
    for node in nodes[1:]:
        if node.rows != rows:
            raise DimensionError("concat_cols", nodes[0].shape, node.shape)
    bounds = np.cumsum([0] + [n.cols for n in nodes])

    def backward(g: Matrix) -> None:
        for node, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            if node.requires_grad:
                node._accumulate(g[:, lo:hi])

    return Node(np.hstack([n.value for n in nodes]), nodes, backward)


# =============================================================================
# REDUCTIONS
# =============================================================================


def sum_all(x: Operand) -> Node:
    x = _lift(x)

    def backward(g: Matrix) -> None:
        x._accumulate(np.broadcast_to(g, x.shape))

    return Node(x.value.sum(), (x,), backward)


def mean_all(x: Operand) -> Node:
    x = _lift(x)
    count = max(x.value.size, 1)

    def backward(g: Matrix) -> None:
        x._accumulate(np.broadcast_to(g / count, x.shape))

    return Node(x.value.sum() / count, (x,), backward)


def row_sum(x: Operand) -> Node:
    x = _lift(x)

    def backward(g: Matrix) -> None:
        x._accumulate(np.broadcast_to(g, x.shape))

    return Node(x.value.sum(axis=1, keepdims=True), (x,), backward)


def row_mean(x: Operand) -> Node:
    x = _lift(x)
    count = max(x.cols, 1)

    def backward(g: Matrix) -> None:
        x._accumulate(np.broadcast_to(g / count, x.shape))

    return Node(x.value.sum(axis=1, keepdims=True) / count, (x,), backward)


_REDUCTIONS: Dict[str, Callable[[Operand], Node]] = {
    "sum": sum_all,
    "mean": mean_all,
    "row_sum": row_sum,
    "row_mean": row_mean,
}


def reduce(op: str, x: Operand) -> Node:
    """Dispatch a reduction by name (sum, mean, row_sum, row_mean)."""
    try:
        fn = _REDUCTIONS[op]
    except KeyError:
        raise ContractError(f"Unknown reduction: {op}") from None
    return fn(x)


# =============================================================================
# ROW-WISE OPERATIONS
# =============================================================================


def softmax_rows(x: Operand) -> Node:
    x = _lift(x)
    shifted = np.exp(x.value - x.value.max(axis=1, keepdims=True))
    out = shifted / shifted.sum(axis=1, keepdims=True)

    def backward(g: Matrix) -> None:
        x._accumulate(out * (g - (g * out).sum(axis=1, keepdims=True)))

    return Node(out, (x,), backward)


def l2_normalize_rows(x: Operand) -> Node:
    """Rows scaled to unit length; rows with norm <= EPS become zero."""
    x = _lift(x)
    norms = np.sqrt((x.value * x.value).sum(axis=1, keepdims=True))
    live = norms > EPS
    inv = np.where(live, 1.0 / np.maximum(norms, EPS), 0.0)
    out = x.value * inv

    def backward(g: Matrix) -> None:
        along = (g * out).sum(axis=1, keepdims=True)
        x._accumulate((g - out * along) * inv)

    return Node(out, (x,), backward)


def cosine_sim(x: Operand, y: Operand) -> Node:
    """Cosine similarity of two row vectors as a 1x1 node; norms clamped to EPS."""
    x, y = _lift(x), _lift(y)
    if x.shape != y.shape or x.rows != 1:
        raise DimensionError("cosine_sim", x.shape, y.shape)
    dot = sum_all(mul(x, y))
    nx = clamp_min(sqrt(sum_all(mul(x, x))), EPS)
    ny = clamp_min(sqrt(sum_all(mul(y, y))), EPS)
    return div(dot, mul(nx, ny))


def pairwise_cosine(x: Operand) -> Node:
    """n x n matrix of cosine similarities between the rows of ``x``."""
    unit = l2_normalize_rows(x)
    return matmul(unit, transpose(unit))


# =============================================================================
# RANDOM STREAMS
# =============================================================================


@dataclass(frozen=True)
class RngStream:
    """Seeded PCG64 stream.

    Child streams are derived from ``(seed, label)`` through numpy's
    ``SeedSequence`` with a CRC32 spawn key.
    """

    seed: int
    label: str = ""

    def __post_init__(self):
        valid = isinstance(self.seed, (int, np.integer)) and 0 <= int(self.seed) < 2**64
        if not valid:
            raise ContractError(
                f"seed must be an integer in [0, 2**64), got {self.seed!r}"
            )

    def child(self, label: str) -> "RngStream":
        return RngStream(self.seed, f"{self.label}/{label}" if self.label else label)

    def generator(self) -> np.random.Generator:
        key = (zlib.crc32(self.label.encode("utf-8")),) if self.label else ()
        sequence = np.random.SeedSequence(int(self.seed), spawn_key=key)
        return np.random.Generator(np.random.PCG64(sequence))


# =============================================================================
# GRADIENT ORACLE
# =============================================================================


@dataclass
class GradCheckReport:
    """Outcome of comparing backward gradients with central differences."""

    max_rel_error: float
    tol: float
    entries_checked: int
    worst_parameter: Optional[str] = None
    worst_index: Optional[Tuple[int, int]] = None
    per_parameter: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    f: Callable[[Mapping[str, Node]], Node],
    params: Mapping[str, Matrix],
    step: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare autodiff gradients of ``f`` against central finite differences.

    Args:
        f: Builds a 1x1 node from a mapping of parameter nodes.
        params: Parameter values keyed by name; they are not modified.
        step: Finite-difference step h.
        tol: Relative tolerance used by ``report.passed``.
    """
    base = {name: as_matrix(value, name).copy() for name, value in params.items()}
    leaves = {name: Node.leaf(value, name) for name, value in base.items()}
    root = f(leaves)
    if not isinstance(root, Node) or root.value.shape != (1, 1):
        shape = root.value.shape if isinstance(root, Node) else type(root).__name__
        raise ContractError(f"grad_check needs a scalar-valued function, got {shape}")
    root.backward()

    def evaluate(values: Dict[str, Matrix]) -> float:
        leaves = {
            name: Node(v, requires_grad=False, name=name) for name, v in values.items()
        }
        return f(leaves).item()

    report = GradCheckReport(max_rel_error=0.0, tol=tol, entries_checked=0)
    for name, value in base.items():
        analytic = leaves[name].gradient
        worst = 0.0
        for index in np.ndindex(value.shape):
            original = value[index]
            value[index] = original + step
            upper = evaluate(base)
            value[index] = original - step
            lower = evaluate(base)
            value[index] = original
            numeric = (upper - lower) / (2.0 * step)
            err = _relative_error(float(analytic[index]), numeric)
            report.entries_checked += 1
            worst = max(worst, err)
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst_parameter = name
                report.worst_index = (int(index[0]), int(index[1]))
        report.per_parameter[name] = worst
    logger.debug(
        f"grad_check: {report.entries_checked} entries, max rel error "
        f"{report.max_rel_error:.3e} at {report.worst_parameter}{report.worst_index}"
    )
    return report


def collect_gradients(leaves: Mapping[str, Node]) -> Dict[str, Matrix]:
    """Gradients of bound parameter leaves after backward()."""
    return {name: node.gradient for name, node in leaves.items()}
