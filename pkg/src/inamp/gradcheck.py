"""Finite-difference checks of every differentiable building block.

Each case builds a small random problem in 64-bit mode and returns the loss
closure with the tensors to perturb. Losses of non-scalar outputs are a fixed
random projection, so every output entry contributes to the gradient.
"""

import logging
from typing import Callable, Dict, List, Tuple

import numpy as np

from .amplifier import (
    InAmpConfig,
    band_attention,
    channel_attention,
    inamp_forward,
    init_inamp,
    spatial_attention,
)
from .errors import ConfigError
from .model import ClassifierConfig, build_classifier
from .nn import activation, conv2d, conv_kernel, dense_layer, pool, softmax_xent
from .rng import Seeds
from .tensor import Tensor, add, create, grad_check, mul, precision, reduce

logger = logging.getLogger(__name__)

Case = Tuple[Callable[[], Tensor], List[Tensor]]

TOLERANCE = 1e-4


def _project(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    w = create(out.shape, rng)
    return lambda t: reduce(mul(t, w))


def _input(shape: Tuple[int, ...], rng: np.random.Generator) -> Tensor:
    return create(shape, rng.uniform(0.1, 1.0, size=shape), requires_grad=True)


def _small_inamp() -> InAmpConfig:
    return InAmpConfig(in_bands=3, out_channels=8, sa_kernel=3, ca_reduction=4)


def conv_case(rng: np.random.Generator) -> Case:
    """Same-padded stride-1 and valid stride-2 convolutions."""
    x = _input((2, 5, 5, 3), rng)
    k = conv_kernel(3, 3, 3, 4, rng, name="conv")
    k.bias.data = rng.normal(size=k.bias.shape)
    same = _project(conv2d(x, k), rng)
    valid = _project(conv2d(x, k, stride=2, padding="valid"), rng)

    def f() -> Tensor:
        return add(same(conv2d(x, k)), valid(conv2d(x, k, stride=2, padding="valid")))

    return f, [x, *k.parameters()]


def activation_case(rng: np.random.Generator) -> Case:
    """Relu and sigmoid."""
    x = create((3, 4), rng, requires_grad=True)
    r = _project(x, rng)
    s = _project(x, rng)
    return lambda: add(r(activation(x, "relu")), s(activation(x, "sigmoid"))), [x]


def pool_case(rng: np.random.Generator) -> Case:
    """2x2 max, global average and global max pooling."""
    x = create((2, 4, 4, 3), rng, requires_grad=True)
    m = _project(pool(x, "max2x2"), rng)
    a = _project(pool(x, "global_avg"), rng)
    g = _project(pool(x, "global_max"), rng)

    def f() -> Tensor:
        total = add(m(pool(x, "max2x2")), a(pool(x, "global_avg")))
        return add(total, g(pool(x, "global_max")))

    return f, [x]


def dense_case(rng: np.random.Generator) -> Case:
    """Fully connected layer."""
    x = create((4, 5), rng, requires_grad=True)
    layer = dense_layer(5, 3, rng, name="dense")
    p = _project(layer(x), rng)
    return lambda: p(layer(x)), [x, *layer.parameters()]


def loss_case(rng: np.random.Generator) -> Case:
    """Softmax cross-entropy."""
    logits = create((4, 3), rng, requires_grad=True)
    labels = [0, 2, 1, 2]
    return lambda: softmax_xent(logits, labels)[0], [logits]


def band_case(rng: np.random.Generator) -> Case:
    """Stacked 1x1 band attention."""
    cfg = _small_inamp()
    params = init_inamp(cfg, rng)
    x = _input((1, 4, 4, 3), rng)
    p = _project(band_attention(x, params, cfg), rng)
    weights = [t for k in params.one_by_one for t in k.parameters()]
    return lambda: p(band_attention(x, params, cfg)), [x, *weights]


def spatial_case(rng: np.random.Generator) -> Case:
    """Spatial attention over eight channels."""
    params = init_inamp(_small_inamp(), rng)
    x = _input((1, 5, 5, 8), rng)
    p = _project(spatial_attention(x, params), rng)
    return lambda: p(spatial_attention(x, params)), [x, *params.sa_conv.parameters()]


def channel_case(rng: np.random.Generator) -> Case:
    """Channel attention over eight channels."""
    params = init_inamp(_small_inamp(), rng)
    x = _input((2, 3, 3, 8), rng)
    p = _project(channel_attention(x, params), rng)
    weights = [*params.ca_fc1.parameters(), *params.ca_fc2.parameters()]
    return lambda: p(channel_attention(x, params)), [x, *weights]


def inamp_case(rng: np.random.Generator) -> Case:
    """The full module with both attentions."""
    cfg = _small_inamp()
    params = init_inamp(cfg, rng)
    x = _input((1, 6, 6, 3), rng)
    p = _project(inamp_forward(x, params, cfg), rng)
    return lambda: p(inamp_forward(x, params, cfg)), [x, *params.parameters()]


def model_case(rng: np.random.Generator) -> Case:
    """Classifier with InAmp on a 4x4 input, through the loss."""
    cfg = ClassifierConfig(
        input_bands=3,
        n_classes=3,
        input_size=4,
        block_widths=[4],
        inamp=_small_inamp(),
    )
    model = build_classifier(cfg, rng)
    x = _input((2, 4, 4, 3), rng)
    return lambda: softmax_xent(model(x), [0, 2])[0], [x, *model.parameters()]


CASES: Dict[str, Callable[[np.random.Generator], Case]] = {
    "conv": conv_case,
    "activation": activation_case,
    "pool": pool_case,
    "dense": dense_case,
    "loss": loss_case,
    "band": band_case,
    "spatial": spatial_case,
    "channel": channel_case,
    "inamp": inamp_case,
    "model": model_case,
}

GROUPS = {
    "all": tuple(CASES),
    "conv": ("conv",),
    "loss": ("loss",),
    "inamp": ("band", "spatial", "channel", "inamp"),
}


def run_checks(module: str = "all", seed: int = 0) -> Dict[str, float]:
    """Maximum relative gradient error of every case in a group."""
    if module not in GROUPS:
        raise ConfigError(
            "unknown module %r, expected one of %s" % (module, sorted(GROUPS)),
        )
    seeds = Seeds(seed)
    result = {}
    for i, name in enumerate(GROUPS[module]):
        with precision("float64"):
            f, params = CASES[name](seeds.stream("init", i))
            result[name] = grad_check(f, params, tol=TOLERANCE)
        logger.info("gradient check %s: %.3g", name, result[name])
    return result
