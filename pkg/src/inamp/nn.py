"""Neural-network layers, parameter initialization and the Adam optimizer.

Images are ``[N, H, W, C]``. Convolution is cross-correlation computed with an
im2col lowering: every output pixel's receptive field becomes one row of a
matrix multiplied by the ``[kh * kw * Cin, Cout]`` kernel matrix. A ``1x1``
kernel therefore maps each pixel's channel vector ``P`` to ``F . P + b``.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ChannelMismatch,
    InvalidLr,
    InvalidShape,
    LabelOutOfRange,
    OddSpatialDim,
    ShapeMismatch,
    SpatialUnderflow,
)
from .tensor import Tensor, add, create, make, matmul, reduce

logger = logging.getLogger(__name__)

PADDINGS = ("same", "valid")
ACTIVATIONS = ("relu", "sigmoid")
POOLS = ("max2x2", "global_avg", "global_max")


@dataclass
class ConvKernel:
    """Convolution weights ``[kh, kw, Cin, Cout]`` and bias ``[Cout]``."""

    weights: Tensor
    bias: Tensor

    def __post_init__(self) -> None:  # noqa: D105
        if self.weights.ndim != 4:
            raise InvalidShape("kernel weights must be [kh, kw, Cin, Cout]")
        if self.bias.shape != (self.weights.shape[3],):
            raise ShapeMismatch(
                "bias %s does not match %d output channels"
                % (self.bias.shape, self.weights.shape[3]),
            )

    @property
    def kh(self) -> int:
        """Kernel height."""
        return self.weights.shape[0]

    @property
    def kw(self) -> int:
        """Kernel width."""
        return self.weights.shape[1]

    @property
    def cin(self) -> int:
        """Input channels."""
        return self.weights.shape[2]

    @property
    def cout(self) -> int:
        """Output channels (filters)."""
        return self.weights.shape[3]

    def parameters(self) -> List[Tensor]:
        """Weights then bias."""
        return [self.weights, self.bias]


@dataclass
class Dense:
    """Fully connected weights ``[d, u]`` and bias ``[u]``."""

    weights: Tensor
    bias: Tensor

    def __post_init__(self) -> None:  # noqa: D105
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeMismatch(
                "dense weights %s and bias %s disagree"
                % (self.weights.shape, self.bias.shape),
            )

    def __call__(self, x: Tensor) -> Tensor:
        """Apply the layer to ``[N, d]`` input."""
        return dense(x, self.weights, self.bias)

    def parameters(self) -> List[Tensor]:
        """Weights then bias."""
        return [self.weights, self.bias]


def _same_padding(size: int, k: int, stride: int) -> Tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def conv2d(
    x: Tensor,
    kernel: ConvKernel,
    stride: int = 1,
    padding: str = "same",
) -> Tensor:
    """2-D cross-correlation plus bias.

    Params:
        x: input ``[N, H, W, Cin]``.
        kernel: weights and bias.
        stride: step between windows, at least one.
        padding: ``"same"`` (zero padding, output ``ceil(H / stride)``) or
            ``"valid"`` (no padding).

    Returns:
        ``[N, H', W', Cout]``.
    """
    if x.ndim != 4:
        raise ShapeMismatch("conv2d input must be [N, H, W, C], got %s" % (x.shape,))
    if stride < 1:
        raise ValueError("stride must be >= 1, got %d" % stride)
    if padding not in PADDINGS:
        raise ValueError('Invalid padding "%s"' % padding)
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.weights.shape
    if cin != kcin:
        raise ChannelMismatch("input has %d channels, kernel expects %d" % (cin, kcin))
    if padding == "valid":
        if h < kh or w < kw:
            raise SpatialUnderflow(
                "input %dx%d is smaller than kernel %dx%d" % (h, w, kh, kw),
            )
        oh, top, bottom = (h - kh) // stride + 1, 0, 0
        ow, left, right = (w - kw) // stride + 1, 0, 0
    else:
        oh, top, bottom = _same_padding(h, kh, stride)
        ow, left, right = _same_padding(w, kw, stride)

    xp = np.pad(x.data, ((0, 0), (top, bottom), (left, right), (0, 0)))
    # [N, H'', W'', Cin, kh, kw] -> strided -> [N, oh, ow, kh, kw, Cin]
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :oh, :ow]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * cin)
    w2 = kernel.weights.data.reshape(kh * kw * cin, cout)
    out = (cols @ w2 + kernel.bias.data).reshape(n, oh, ow, cout)

    def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        g2 = g.reshape(n * oh * ow, cout)
        gw = (cols.T @ g2).reshape(kernel.weights.shape)
        gb = g2.sum(axis=0)
        gcols = (g2 @ w2.T).reshape(n, oh, ow, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[
                    :,
                    i : i + stride * (oh - 1) + 1 : stride,
                    j : j + stride * (ow - 1) + 1 : stride,
                    :,
                ] += gcols[:, :, :, i, j, :]
        return gxp[:, top : top + h, left : left + w, :], gw, gb

    return make("conv2d", out, (x, kernel.weights, kernel.bias), vjp)


def activation(x: Tensor, kind: str) -> Tensor:
    """Element-wise ``relu`` or ``sigmoid``."""
    if kind == "relu":
        mask = x.data > 0

        def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
            return (g * mask,)

        return make("relu", np.where(mask, x.data, 0), (x,), vjp)
    if kind == "sigmoid":
        s = np.exp(-np.logaddexp(0, -x.data))

        def vjp_s(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
            return (g * s * (1 - s),)

        return make("sigmoid", s, (x,), vjp_s)
    raise ValueError('Invalid activation "%s"' % kind)


def relu(x: Tensor) -> Tensor:
    """Rectified linear unit."""
    return activation(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function."""
    return activation(x, "sigmoid")


def pool(x: Tensor, kind: str) -> Tensor:
    """Pooling over ``[N, H, W, C]``.

    ``max2x2`` halves H and W (ties go to the first window element in row-major
    order); ``global_avg`` and ``global_max`` reduce every channel to ``[N, C]``.
    """
    if x.ndim != 4:
        raise ShapeMismatch("pool input must be [N, H, W, C], got %s" % (x.shape,))
    if kind == "global_avg":
        return reduce(x, (1, 2), "mean")
    if kind == "global_max":
        return reduce(x, (1, 2), "max")
    if kind != "max2x2":
        raise ValueError('Invalid pool "%s"' % kind)
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise OddSpatialDim("max2x2 needs even H and W, got %dx%d" % (h, w))
    blocks = (
        x.data.reshape(n, h // 2, 2, w // 2, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, h // 2, w // 2, c, 4)
    )
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        flat = np.zeros_like(blocks)
        np.put_along_axis(flat, idx[..., None], g[..., None], axis=-1)
        grad = (
            flat.reshape(n, h // 2, w // 2, c, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, h, w, c)
        )
        return (grad,)

    return make("max2x2", out, (x,), vjp)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Fully connected layer ``x @ weights + bias``."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeMismatch(
            "dense input %s does not match weights %s" % (x.shape, weights.shape),
        )
    if bias.shape != (weights.shape[1],):
        raise ShapeMismatch(
            "bias %s does not match %d units" % (bias.shape, weights.shape[1]),
        )
    return add(matmul(x, weights), bias)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting the row maximum."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: Tensor, labels: Sequence[int]) -> Tuple[Tensor, Tensor]:
    """Mean softmax cross-entropy.

    Params:
        logits: ``[N, K]`` with ``K >= 2``.
        labels: ``N`` integer labels in ``[0, K)``.

    Returns:
        the scalar loss and the ``[N, K]`` probabilities (outside the graph).
    """
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeMismatch(
            "logits must be [N, K] with K >= 2, got %s" % (logits.shape,),
        )
    y = np.asarray(labels, dtype=np.int64).ravel()
    n, k = logits.shape
    if y.shape != (n,):
        raise ShapeMismatch("%d labels for %d rows" % (y.size, n))
    if np.any(y < 0) or np.any(y >= k):
        raise LabelOutOfRange("labels must be in [0, %d)" % k)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    probs = np.exp(log_probs)
    loss = -log_probs[np.arange(n), y].mean()

    def vjp(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        grad = probs.copy()
        grad[np.arange(n), y] -= 1
        return (grad * (g / n),)

    return make("softmax_xent", np.asarray(loss), (logits,), vjp), Tensor(probs)


def fan_in(shape: Sequence[int]) -> int:
    """Number of inputs feeding one output unit of a kernel or weight matrix."""
    if len(shape) < 2:
        raise InvalidShape("fan-in is undefined for shape %s" % (tuple(shape),))
    return int(np.prod(shape[:-1]))


def init_params(
    shape: Sequence[int],
    scheme: str,
    rng: np.random.Generator,
    *,
    low: float = -0.05,
    high: float = 0.05,
    name: str = "",
) -> Tensor:
    """Draw a trainable parameter tensor.

    Params:
        shape: parameter shape.
        scheme: ``"he"`` (normal with std ``sqrt(2 / fan_in)``), ``"uniform"``
            (on ``[low, high)``) or ``"zeros"``.
        rng: random stream the draws come from.
        low: uniform lower bound.
        high: uniform upper bound.
        name: parameter name.
    """
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise InvalidShape("invalid parameter shape %s" % (shape,))
    if scheme == "he":
        values = rng.normal(0.0, np.sqrt(2.0 / fan_in(shape)), size=shape)
    elif scheme == "uniform":
        if high < low:
            raise ValueError("uniform bounds must satisfy low <= high")
        if high > low:
            values = rng.uniform(low, high, size=shape)
        else:
            values = np.full(shape, low)
    elif scheme == "zeros":
        values = np.zeros(shape)
    else:
        raise ValueError('Invalid init scheme "%s"' % scheme)
    return create(shape, values, requires_grad=True, name=name)


def conv_kernel(
    kh: int,
    kw: int,
    cin: int,
    cout: int,
    rng: np.random.Generator,
    scheme: str = "he",
    name: str = "",
) -> ConvKernel:
    """Initialize a convolution kernel with a zero bias."""
    return ConvKernel(
        init_params((kh, kw, cin, cout), scheme, rng, name=name + "/weights"),
        init_params((cout,), "zeros", rng, name=name + "/bias"),
    )


def dense_layer(
    d: int,
    u: int,
    rng: np.random.Generator,
    scheme: str = "he",
    name: str = "",
) -> Dense:
    """Initialize a fully connected layer with a zero bias."""
    return Dense(
        init_params((d, u), scheme, rng, name=name + "/weights"),
        init_params((u,), "zeros", rng, name=name + "/bias"),
    )


@dataclass
class AdamState:
    """Adam moment estimates for a list of parameters."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        """Zero moments matching ``params``."""
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
) -> Tuple[Sequence[Tensor], AdamState]:
    """One bias-corrected Adam update.

    Parameter arrays are replaced, not modified in place. A missing gradient
    counts as zero.
    """
    if not lr > 0:
        raise InvalidLr("learning rate must be > 0, got %r" % lr)
    if not len(params) == len(grads) == len(state.m) == len(state.v):
        raise ShapeMismatch("params, grads and optimizer state lengths differ")
    for p, g, m in zip(params, grads, state.m):
        if m.shape != p.shape or (g is not None and g.shape != p.shape):
            raise ShapeMismatch("shape mismatch for parameter %r" % p.name)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.t
    c2 = 1 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
            p.data.dtype,
        )
    return params, state


@dataclass
class Adam:
    """Adam optimizer over a fixed parameter list with a mutable learning rate."""

    params: List[Tensor]
    lr: float = 0.01
    state: AdamState = field(init=False)

    def __post_init__(self) -> None:  # noqa: D105
        self.state = AdamState.for_params(self.params)

    def step(self) -> None:
        """Apply the accumulated gradients."""
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr)

    def zero_grad(self) -> None:
        """Drop every parameter's gradient."""
        for p in self.params:
            p.zero_grad()
