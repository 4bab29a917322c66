"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a numpy array stored row-major and channel-last (``[N, H, W, C]``
for images). Operations record a [Node][inamp.tensor.Node] holding their inputs
and a vector-Jacobian rule; [Graph][inamp.tensor.Graph] orders those nodes
topologically and runs the backward pass.

Two precisions are available: ``float32`` (the default, used for training) and
``float64`` (used for gradient checking), selected with
[precision][inamp.tensor.precision].
"""

import logging
import os
from contextlib import contextmanager
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .errors import (
    BroadcastError,
    DisconnectedGraph,
    InvalidAxis,
    InvalidEps,
    InvalidShape,
    NonFiniteError,
    NotScalar,
    ShapeMismatch,
)
from .helpers import as_bool

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]
Axes = Union[None, int, Sequence[int]]
VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

PRECISIONS = {"float32": np.float32, "float64": np.float64}

_dtype: type = np.float32
_debug: bool = as_bool(os.environ.get("INAMP__DEBUG", ""))


def default_dtype() -> type:
    """Return the dtype used for newly created tensors."""
    return _dtype


@contextmanager
def precision(kind: str) -> Iterator[None]:
    """Context manager selecting the dtype of newly created tensors.

    Params:
        kind: ``"float32"`` or ``"float64"``.
    """
    global _dtype
    if kind not in PRECISIONS:
        raise ValueError('Invalid precision "%s"' % kind)
    previous = _dtype
    _dtype = PRECISIONS[kind]
    try:
        yield
    finally:
        _dtype = previous


@contextmanager
def debug_mode(enabled: bool = True) -> Iterator[None]:
    """Context manager checking every operation result for NaN/Inf."""
    global _debug
    previous = _debug
    _debug = enabled
    try:
        yield
    finally:
        _debug = previous


class Node:
    """Operation record: the inputs of an output tensor and its local VJP rule."""

    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op: str, inputs: Sequence["Tensor"], vjp: VJP):  # noqa: D107
        self.op = op
        self.inputs = tuple(inputs)
        self.vjp = vjp


class Tensor:
    """Dense n-dimensional array taking part in a differentiation graph.

    Tensors are not modified by operations; only ``grad`` is written, by
    [backward][inamp.tensor.backward], and parameter ``data`` by the optimizer.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(
        self,
        data: Union[np.ndarray, float, Sequence[float]],
        requires_grad: bool = False,
        *,
        node: Optional[Node] = None,
        name: str = "",
    ):
        """Class Constructor.

        Params:
            data: array contents; cast to the current default dtype.
            requires_grad: whether gradients are accumulated for this tensor.
            node: the operation that produced the tensor, if any.
            name: optional label, used in checkpoints and error messages.
        """
        self.data: np.ndarray = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node = node
        self.name = name

    @property
    def shape(self) -> Shape:
        """Dimension sizes."""
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        """Rank."""
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        """Number of elements."""
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        """Return the underlying array."""
        return self.data

    def item(self) -> float:
        """Return the value of a one-element tensor as a float."""
        if self.size != 1:
            raise NotScalar("item() needs a one-element tensor, got %s" % (self.shape,))
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Return a tensor sharing data but outside of any graph."""
        return Tensor(self.data, name=self.name)

    def zero_grad(self) -> None:
        """Drop the accumulated gradient."""
        self.grad = None

    def backward(self) -> None:
        """Populate gradients of every leaf this scalar depends on."""
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":  # noqa: D105
        return ewise("add", self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":  # noqa: D105
        return ewise("sub", self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":  # noqa: D105
        return ewise("mul", self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":  # noqa: D105
        return matmul(self, other)

    def __repr__(self) -> str:  # noqa: D105
        label = " %r" % self.name if self.name else ""
        return "<Tensor%s shape=%s requires_grad=%s>" % (
            label,
            self.shape,
            self.requires_grad,
        )


def make(
    op: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    vjp: VJP,
) -> Tensor:
    """Wrap an operation result, recording a node when gradients are needed.

    Params:
        op: operation name.
        data: result array.
        inputs: input tensors, in the order ``vjp`` returns their gradients.
        vjp: maps the output gradient to one gradient (or None) per input.
    """
    if _debug and not np.all(np.isfinite(data)):
        raise NonFiniteError("%s produced non-finite values" % op)
    requires_grad = any(t.requires_grad for t in inputs)
    return Tensor(
        data,
        requires_grad=requires_grad,
        node=Node(op, inputs, vjp) if requires_grad else None,
    )


class Graph:
    """Topologically ordered operation records reachable from an output tensor."""

    def __init__(self, output: Tensor):
        """Class Constructor.

        Params:
            output: tensor whose history is collected.
        """
        self.output = output
        self.nodes: List[Tensor] = self._toposort(output)

    @staticmethod
    def _toposort(output: Tensor) -> List[Tensor]:
        # iterative post-order DFS; deep graphs would overflow the recursion limit
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor.node is not None:
                for parent in reversed(tensor.node.inputs):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def leaves(self) -> List[Tensor]:
        """Tensors requiring gradients that no operation produced."""
        return [t for t in self.nodes if t.node is None and t.requires_grad]

    def backward(self, seed: np.ndarray) -> None:
        """Propagate ``seed`` from the output to every leaf, visiting each node once."""
        grads: Dict[int, np.ndarray] = {id(self.output): seed}
        for tensor in reversed(self.nodes):
            grad = grads.pop(id(tensor), None)
            if grad is None:
                continue
            if tensor.node is None:
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
                continue
            for parent, g in zip(tensor.node.inputs, tensor.node.vjp(grad)):
                if g is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + g
                else:
                    grads[id(parent)] = g


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into ``grad`` of every requires_grad leaf.

    Repeated calls without resetting the gradients accumulate.
    """
    if loss.size != 1:
        raise NotScalar("backward needs a scalar loss, got shape %s" % (loss.shape,))
    if not loss.requires_grad:
        raise DisconnectedGraph("loss does not depend on any tensor requiring grad")
    graph = Graph(loss)
    if not graph.leaves():
        raise DisconnectedGraph("loss has no leaf requiring grad")
    graph.backward(np.ones_like(loss.data))


# construction


def _check_shape(shape: Sequence[int]) -> Shape:
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise InvalidShape("all dimensions must be >= 1, got %s" % (shape,))
    return shape


def create(
    shape: Sequence[int],
    init: Union[str, float, Sequence[float], np.ndarray, np.random.Generator] = "zeros",
    requires_grad: bool = False,
    name: str = "",
) -> Tensor:
    """Create a tensor.

    Params:
        shape: dimension sizes, each at least one.
        init: ``"zeros"``, a constant, explicit values (flat or shaped, row-major)
            or a ``numpy.random.Generator`` drawing standard normal values.
        requires_grad: whether the tensor is a differentiable leaf.
        name: optional label.
    """
    shape = _check_shape(shape)
    if isinstance(init, str):
        if init != "zeros":
            raise ValueError('Invalid init "%s"' % init)
        data = np.zeros(shape)
    elif isinstance(init, np.random.Generator):
        data = init.standard_normal(shape)
    elif isinstance(init, (int, float)):
        data = np.full(shape, float(init))
    else:
        values = np.asarray(init, dtype=np.float64).ravel()
        if values.size != int(np.prod(shape)):
            raise ShapeMismatch(
                "%d values given for shape %s" % (values.size, shape),
            )
        data = values.reshape(shape)
    return Tensor(data, requires_grad=requires_grad, name=name)


def tensor(
    data: Union[np.ndarray, float, Sequence],
    requires_grad: bool = False,
    name: str = "",
) -> Tensor:
    """Create a tensor from array-like data, keeping its shape."""
    return Tensor(np.array(data), requires_grad=requires_grad, name=name)


# element-wise, matmul, reductions and shape plumbing


def _broadcastable(a: Shape, b: Shape) -> bool:
    if len(b) > len(a):
        return False
    return all(db in (da, 1) for da, db in zip(a[::-1], b[::-1]))


def unbroadcast(grad: np.ndarray, shape: Shape) -> np.ndarray:
    """Sum out the dimensions that broadcasting expanded so grad matches shape."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, d in enumerate(shape) if d == 1 and grad.shape[lead + i] != 1
    )
    return grad.sum(axis=axes).reshape(shape)


def ewise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    """Element-wise ``add``, ``sub`` or ``mul``.

    ``b`` may have size-1 (or missing leading) dimensions where ``a`` does not;
    the result always has ``a``'s shape.
    """
    if not _broadcastable(a.shape, b.shape):
        raise BroadcastError("cannot broadcast %s onto %s" % (b.shape, a.shape))
    if kind == "add":
        data = a.data + b.data

        def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
            return g, unbroadcast(g, b.shape)

    elif kind == "sub":
        data = a.data - b.data

        def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
            return g, -unbroadcast(g, b.shape)

    elif kind == "mul":
        data = a.data * b.data

        def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
            return g * b.data, unbroadcast(g * a.data, b.shape)

    else:
        raise ValueError('Invalid element-wise kind "%s"' % kind)
    return make(kind, data, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise sum."""
    return ewise("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise difference."""
    return ewise("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise product."""
    return ewise("mul", a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``[m, k]`` and ``[k, n]``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("cannot multiply %s by %s" % (a.shape, b.shape))

    def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return g @ b.data.T, a.data.T @ g

    return make("matmul", a.data @ b.data, (a, b), vjp)


def normalize_axes(axes: Axes, ndim: int) -> Tuple[int, ...]:
    """Validate axes for a tensor of rank ``ndim``; None means all axes."""
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    result = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise InvalidAxis("axis %d out of range for rank %d" % (axis, ndim))
        result.append(axis % ndim)
    if len(set(result)) != len(result):
        raise InvalidAxis("repeated axis in %s" % (tuple(axes),))
    return tuple(sorted(result))


def reduce(
    x: Tensor, axes: Axes = None, kind: str = "sum", keepdims: bool = False,
) -> Tensor:
    """Reduce ``x`` over ``axes`` with ``mean``, ``max`` or ``sum``.

    The gradient of ``max`` goes to the first maximizer in row-major order.
    """
    ax = normalize_axes(axes, x.ndim)
    kept_shape = tuple(1 if i in ax else d for i, d in enumerate(x.shape))
    out_shape = kept_shape if keepdims else tuple(
        d for i, d in enumerate(x.shape) if i not in ax
    )
    count = int(np.prod([x.shape[i] for i in ax])) if ax else 1

    if kind in ("sum", "mean"):
        data = x.data.sum(axis=ax, keepdims=True)
        if kind == "mean":
            data = data / count

        def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
            g = np.broadcast_to(g.reshape(kept_shape), x.shape)
            return ((g / count) if kind == "mean" else g.copy(),)

    elif kind == "max":
        rest = tuple(i for i in range(x.ndim) if i not in ax)
        perm = rest + ax
        moved = x.data.transpose(perm).reshape(
            tuple(x.shape[i] for i in rest) + (count,),
        )
        idx = moved.argmax(axis=-1)
        data = np.take_along_axis(moved, idx[..., None], axis=-1)
        data = data.reshape(tuple(x.shape[i] for i in rest))
        data = data.reshape(kept_shape)
        inverse = np.argsort(perm)

        def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
            flat = np.zeros_like(moved)
            g1 = g.reshape(idx.shape + (1,))
            np.put_along_axis(flat, idx[..., None], g1, axis=-1)
            shaped = flat.reshape(tuple(x.shape[i] for i in perm))
            return (shaped.transpose(inverse),)

    else:
        raise ValueError('Invalid reduction kind "%s"' % kind)
    return make(kind, data.reshape(out_shape), (x,), vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Differentiable reshape; the element count must not change."""
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeMismatch("cannot reshape %s into %s" % (x.shape, shape))

    def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (g.reshape(x.shape),)

    return make("reshape", x.data.reshape(shape), (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Differentiable concatenation along ``axis``."""
    if not tensors:
        raise ShapeMismatch("nothing to concatenate")
    ndim = tensors[0].ndim
    (axis,) = normalize_axes(axis, ndim)
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            d != e
            for i, (d, e) in enumerate(zip(t.shape, tensors[0].shape))
            if i != axis
        ):
            raise ShapeMismatch(
                "cannot concatenate %s with %s on axis %d"
                % (tensors[0].shape, t.shape, axis),
            )
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return np.split(g, bounds, axis=axis)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return make("concat", data, tensors, vjp)


# gradient checking


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    tol: float = 1e-4,
) -> float:
    """Compare analytic gradients with central finite differences.

    The check runs in 64-bit mode: parameters are temporarily cast to float64
    and restored afterwards.

    Params:
        f: zero-argument function computing a scalar loss from ``params``.
        params: tensors to perturb; they must have ``requires_grad`` set.
        eps: finite-difference step.
        tol: tolerance reported against in the log.

    Returns:
        max over all entries of ``|analytic - fd| / max(1, |analytic|)``.
    """
    if not eps > 0:
        raise InvalidEps("eps must be > 0, got %r" % eps)
    originals = [(p.data, p.grad) for p in params]
    worst = 0.0
    try:
        with precision("float64"):
            for p in params:
                p.data = p.data.astype(np.float64)
                p.grad = None
            backward(f())
            analytic = [
                np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params
            ]
            for p, a in zip(params, analytic):
                for idx in np.ndindex(p.data.shape):
                    saved = p.data[idx]
                    p.data[idx] = saved + eps
                    plus = f().item()
                    p.data[idx] = saved - eps
                    minus = f().item()
                    p.data[idx] = saved
                    fd = (plus - minus) / (2 * eps)
                    err = abs(a[idx] - fd) / max(1.0, abs(a[idx]))
                    worst = max(worst, float(err))
    finally:
        for p, (data, grad) in zip(params, originals):
            p.data = data
            p.grad = grad
    if worst > tol:
        logger.warning("gradient check error %.3g exceeds tolerance %.3g", worst, tol)
    else:
        logger.debug("gradient check error %.3g", worst)
    return worst
