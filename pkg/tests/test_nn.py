"""Layer and optimizer tests."""

# ruff: noqa: D103

import numpy as np
import pytest

from inamp.errors import (
    ChannelMismatch,
    InvalidLr,
    InvalidShape,
    LabelOutOfRange,
    OddSpatialDim,
    ShapeMismatch,
    SpatialUnderflow,
)
from inamp.nn import (
    Adam,
    AdamState,
    ConvKernel,
    activation,
    adam_step,
    conv2d,
    conv_kernel,
    dense_layer,
    fan_in,
    init_params,
    pool,
    softmax,
    softmax_xent,
)
from inamp.tensor import backward, create, grad_check, precision, reduce


def test_one_by_one_conv_is_pixelwise_linear():  # type: ignore
    x = create((1, 1, 2, 2), [1, 2, 3, 4])
    kernel = ConvKernel(create((1, 1, 2, 1), [2, -1]), create((1,), [0.5]))
    out = conv2d(x, kernel)
    assert out.shape == (1, 1, 2, 1)
    assert out.data.ravel().tolist() == [0.5, 2.5]


def test_conv_shapes():  # type: ignore
    rng = np.random.default_rng(0)
    x = create((2, 7, 7, 3), rng)
    k = conv_kernel(3, 3, 3, 5, rng)
    assert conv2d(x, k).shape == (2, 7, 7, 5)
    assert conv2d(x, k, stride=2).shape == (2, 4, 4, 5)
    assert conv2d(x, k, padding="valid").shape == (2, 5, 5, 5)
    assert conv2d(x, k, stride=2, padding="valid").shape == (2, 3, 3, 5)


def test_conv_same_padding_matches_manual_sum():  # type: ignore
    x = create((1, 3, 3, 1), range(1, 10))
    k = ConvKernel(create((3, 3, 1, 1), 1.0), create((1,), 0.0))
    out = conv2d(x, k).data[0, :, :, 0]
    assert out.tolist() == [[12, 21, 16], [27, 45, 33], [24, 39, 28]]


def test_conv_errors():  # type: ignore
    rng = np.random.default_rng(0)
    k = conv_kernel(3, 3, 2, 4, rng)
    with pytest.raises(ChannelMismatch):
        conv2d(create((1, 4, 4, 3)), k)
    with pytest.raises(SpatialUnderflow):
        conv2d(create((1, 2, 2, 2)), k, padding="valid")
    with pytest.raises(ShapeMismatch):
        conv2d(create((4, 4, 2)), k)
    with pytest.raises(ValueError):
        conv2d(create((1, 4, 4, 2)), k, padding="full")
    with pytest.raises(ShapeMismatch):
        ConvKernel(create((3, 3, 2, 4)), create((3,)))


def test_conv_gradient():  # type: ignore
    rng = np.random.default_rng(3)
    x = create((1, 4, 5, 2), rng, requires_grad=True)
    k = conv_kernel(3, 3, 2, 2, rng)
    err = grad_check(lambda: reduce(conv2d(x, k, stride=2)), [x, *k.parameters()])
    assert err < 1e-4


def test_activations():  # type: ignore
    x = create((3,), [-1, 0, 2])
    assert activation(x, "relu").data.tolist() == [0, 0, 2]
    s = activation(create((3,), [-1000, 0, 1000]), "sigmoid").data
    assert s.tolist() == pytest.approx([0, 0.5, 1])
    assert np.all(np.isfinite(s))
    with pytest.raises(ValueError):
        activation(x, "tanh")


def test_pool():  # type: ignore
    x = create((1, 2, 4, 1), [1, 2, 5, 6, 3, 4, 7, 8], requires_grad=True)
    out = pool(x, "max2x2")
    assert out.data.ravel().tolist() == [4, 8]
    assert pool(x, "global_avg").data.tolist() == [[4.5]]
    assert pool(x, "global_max").data.tolist() == [[8]]
    backward(reduce(out))
    assert x.grad.ravel().tolist() == [0, 0, 0, 0, 0, 1, 0, 1]
    with pytest.raises(OddSpatialDim):
        pool(create((1, 3, 4, 1)), "max2x2")
    with pytest.raises(ValueError):
        pool(x, "avg2x2")


def test_max_pool_tie_goes_to_first():  # type: ignore
    x = create((1, 2, 2, 1), [1, 1, 1, 1], requires_grad=True)
    backward(reduce(pool(x, "max2x2")))
    assert x.grad.ravel().tolist() == [1, 0, 0, 0]


def test_dense():  # type: ignore
    rng = np.random.default_rng(0)
    layer = dense_layer(4, 3, rng)
    assert layer(create((2, 4), rng)).shape == (2, 3)
    with pytest.raises(ShapeMismatch):
        layer(create((2, 5)))


def test_softmax_xent():  # type: ignore
    logits = create((2, 3), [0, 0, 0, 1000, 0, 0], requires_grad=True)
    loss, probs = softmax_xent(logits, [1, 0])
    assert loss.item() == pytest.approx(np.log(3) / 2, rel=1e-5)
    assert probs.data.sum(axis=1).tolist() == pytest.approx([1, 1])
    backward(loss)
    assert logits.grad[0].tolist() == pytest.approx([1 / 6, -1 / 3, 1 / 6])
    with pytest.raises(LabelOutOfRange):
        softmax_xent(logits, [3, 0])
    with pytest.raises(ShapeMismatch):
        softmax_xent(create((2, 1)), [0, 0])
    with pytest.raises(ShapeMismatch):
        softmax_xent(logits, [0])


def test_softmax_is_shift_invariant():  # type: ignore
    a = np.array([[1.0, 2.0, 3.0]])
    assert softmax(a + 500).tolist()[0] == pytest.approx(softmax(a).tolist()[0])


def test_init_params():  # type: ignore
    rng = np.random.default_rng(0)
    he = init_params((3, 3, 16, 64), "he", rng)
    assert fan_in(he.shape) == 144
    assert he.data.std() == pytest.approx(np.sqrt(2 / 144), rel=0.05)
    u = init_params((100,), "uniform", rng, low=-0.05, high=0.05)
    assert u.data.min() >= -0.05 and u.data.max() < 0.05
    assert init_params((2,), "uniform", rng, low=0.1, high=0.1).data.tolist() == (
        pytest.approx([0.1, 0.1])
    )
    assert not init_params((2, 2), "zeros", rng).data.any()
    with pytest.raises(InvalidShape):
        init_params((0, 2), "he", rng)
    with pytest.raises(ValueError):
        init_params((2,), "uniform", rng, low=1, high=0)
    with pytest.raises(InvalidShape):
        fan_in((4,))


def test_adam_moves_against_gradient():  # type: ignore
    x = create((2,), [1, -1], requires_grad=True)
    opt = Adam([x], lr=0.1)
    backward(reduce(x))
    opt.step()
    # first bias-corrected step has magnitude lr
    assert x.data.tolist() == pytest.approx([0.9, -1.1], rel=1e-5)
    assert opt.state.t == 1
    opt.zero_grad()
    assert x.grad is None


def test_adam_minimizes_quadratic():  # type: ignore
    x = create((3,), [3, -2, 5], requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        backward(reduce(x * x))
        opt.step()
    assert np.abs(x.data).max() < 0.3


def test_adam_rejects_bad_lr():  # type: ignore
    x = create((1,), requires_grad=True)
    with pytest.raises(InvalidLr):
        Adam([x], lr=0.0).step()


def test_one_by_one_conv_matches_pixel_loop():  # type: ignore
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        n, h, w = rng.integers(1, 4, size=3)
        cin, cout = rng.integers(1, 7, size=2)
        with precision("float64"):
            x = create((n, h, w, cin), rng)
            k = conv_kernel(1, 1, int(cin), int(cout), rng)
            k.bias.data = rng.normal(size=int(cout))
            out = conv2d(x, k).data
        f = k.weights.data[0, 0].astype(np.float64)
        b = k.bias.data.astype(np.float64)
        for idx in np.ndindex(int(n), int(h), int(w)):
            expected = x.data[idx].astype(np.float64) @ f + b
            worst = max(worst, float(np.abs(out[idx] - expected).max()))
    assert worst < 1e-6


def test_adam_first_step_closed_form():  # type: ignore
    grads = [np.array([0.5, -2.0, 1e-3]), np.array([[4.0]])]
    with precision("float64"):
        params = [create((3,), [1.0, 2.0, 3.0]), create((1, 1), [-1.0])]
    before = [p.data.copy() for p in params]
    state = AdamState.for_params(params)
    adam_step(params, grads, state, 0.01)
    for p, p0, g in zip(params, before, grads):
        expected = p0 - 0.01 * g / (np.abs(g) + state.eps)
        np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-12)
    assert state.t == 1
