"""The input amplification (InAmp) module.

InAmp is a front-end placed right after a classifier's input layer. It runs
three successive steps:

1. band attention: stacked ``1x1`` convolutions with relu map every pixel's
   band vector to ``out_channels - n`` deep-pseudo bands (learned spectral
   patterns), which are concatenated after the ``n`` original bands;
2. spatial attention: one sigmoid mask per pixel, computed from the channel
   mean and channel max maps with a ``sa_kernel x sa_kernel`` convolution, scales
   every channel of that pixel;
3. channel attention: one sigmoid weight per channel, computed by a shared
   two-layer MLP over the global average and global max pools, scales every
   pixel of that channel.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .configuration import Configuration, check_schema
from .errors import (
    ChannelMismatch,
    ConfigError,
    IndexOutOfRange,
    ReductionUnderflow,
    ShapeMismatch,
    SpatialMismatch,
)
from .graymap import to_gray, write_pgm
from .nn import (
    ConvKernel,
    Dense,
    conv2d,
    conv_kernel,
    dense_layer,
    pool,
    relu,
    sigmoid,
)
from .tensor import Tensor, add, concat, mul, reduce, reshape

logger = logging.getLogger(__name__)

PREFIX = "inamp"

KINDS = {
    "in_bands": "int",
    "out_channels": "int",
    "n_one_by_one_layers": "int",
    "use_spatial_attention": "bool",
    "use_channel_attention": "bool",
    "sa_kernel": "int",
    "ca_reduction": "int",
    "layer_widths": "ints",
    "concat_all_layers": "bool",
}

SCHEMA = {
    "type": "object",
    "properties": {
        "in_bands": {"type": "integer", "minimum": 1},
        "out_channels": {"type": "integer", "minimum": 2},
        "n_one_by_one_layers": {"type": "integer", "minimum": 1, "maximum": 4},
        "use_spatial_attention": {"type": "boolean"},
        "use_channel_attention": {"type": "boolean"},
        "sa_kernel": {"type": "integer", "minimum": 1},
        "ca_reduction": {"type": "integer", "minimum": 1},
        "layer_widths": {
            "anyOf": [
                {"type": "null"},
                {"type": "array", "items": {"type": "integer", "minimum": 1}},
            ],
        },
        "concat_all_layers": {"type": "boolean"},
    },
    "required": ["in_bands"],
}


@dataclass
class InAmpConfig:
    """Structure of an InAmp module."""

    in_bands: int
    out_channels: int = 32
    n_one_by_one_layers: int = 2
    use_spatial_attention: bool = True
    use_channel_attention: bool = True
    sa_kernel: int = 7
    ca_reduction: int = 8
    # explicit filter count per 1x1 layer; defaults to out_channels - in_bands each
    layer_widths: Optional[List[int]] = None
    # pseudo bands are every layer's output concatenated instead of the last one's
    concat_all_layers: bool = False

    def __post_init__(self) -> None:  # noqa: D105
        check_schema(asdict(self), SCHEMA)
        if self.out_channels <= self.in_bands:
            raise ConfigError(
                "out_channels (%d) must exceed in_bands (%d)"
                % (self.out_channels, self.in_bands),
            )
        if self.ca_hidden < 1:
            raise ReductionUnderflow(
                "%d channels // reduction %d leaves no hidden units"
                % (self.out_channels, self.ca_reduction),
            )
        self.widths()

    @property
    def pseudo_bands(self) -> int:
        """Number of deep-pseudo bands, ``out_channels - in_bands``."""
        return self.out_channels - self.in_bands

    @property
    def ca_hidden(self) -> int:
        """Hidden width of the channel attention MLP."""
        return self.out_channels // self.ca_reduction

    def widths(self) -> List[int]:
        """Filter count of every 1x1 layer."""
        m, layers = self.pseudo_bands, self.n_one_by_one_layers
        if self.layer_widths is None:
            if not self.concat_all_layers:
                return [m] * layers
            if m < layers:
                raise ConfigError("%d pseudo bands cannot be split over %d layers"
                                  % (m, layers))
            return [m // layers + (1 if i < m % layers else 0) for i in range(layers)]
        widths = list(self.layer_widths)
        if len(widths) != layers:
            raise ConfigError(
                "layer_widths has %d entries for %d layers" % (len(widths), layers),
            )
        produced = sum(widths) if self.concat_all_layers else widths[-1]
        if produced != m:
            raise ConfigError(
                "layer widths %s produce %d pseudo bands, expected %d"
                % (widths, produced, m),
            )
        return widths

    @property
    def variant(self) -> str:
        """Attention variant label: None, CA, SA or CA & SA."""
        ca, sa = self.use_channel_attention, self.use_spatial_attention
        if ca and sa:
            return "CA & SA"
        return "CA" if ca else ("SA" if sa else "None")

    def to_dict(self) -> Dict[str, Any]:
        """Flat mapping of the configuration, suitable for key=value files."""
        result = asdict(self)
        if result["layer_widths"] is None:
            del result["layer_widths"]
        return result

    @classmethod
    def from_config(cls, cfg: Configuration) -> "InAmpConfig":
        """Build from a configuration holding the keys of ``KINDS``."""
        values = cfg.resolve(KINDS, _defaults())
        if values["in_bands"] is None:
            raise ConfigError("in_bands is required")
        return cls(**values)


def _defaults() -> Dict[str, Any]:
    return {
        "in_bands": None,
        "out_channels": 32,
        "n_one_by_one_layers": 2,
        "use_spatial_attention": True,
        "use_channel_attention": True,
        "sa_kernel": 7,
        "ca_reduction": 8,
        "layer_widths": None,
        "concat_all_layers": False,
    }


@dataclass
class InAmpParams:
    """Trainable parameters of an InAmp module."""

    one_by_one: List[ConvKernel]
    sa_conv: ConvKernel
    ca_fc1: Dense
    ca_fc2: Dense
    names: Dict[str, Tensor] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:  # noqa: D105
        if any(k.kh != 1 or k.kw != 1 for k in self.one_by_one):
            raise ShapeMismatch("band attention kernels must be 1x1")
        self.names = self.named_parameters()

    def named_parameters(self) -> Dict[str, Tensor]:
        """Parameters keyed by checkpoint name, in a fixed order."""
        result: Dict[str, Tensor] = {}
        for i, k in enumerate(self.one_by_one):
            result["%s/band/%d/weights" % (PREFIX, i)] = k.weights
            result["%s/band/%d/bias" % (PREFIX, i)] = k.bias
        result[PREFIX + "/sa/weights"] = self.sa_conv.weights
        result[PREFIX + "/sa/bias"] = self.sa_conv.bias
        result[PREFIX + "/ca/fc1/weights"] = self.ca_fc1.weights
        result[PREFIX + "/ca/fc1/bias"] = self.ca_fc1.bias
        result[PREFIX + "/ca/fc2/weights"] = self.ca_fc2.weights
        result[PREFIX + "/ca/fc2/bias"] = self.ca_fc2.bias
        return result

    def parameters(self) -> List[Tensor]:
        """Every trainable tensor."""
        return list(self.names.values())

    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(p.size for p in self.parameters())


def init_inamp(cfg: InAmpConfig, rng: np.random.Generator) -> InAmpParams:
    """Initialize InAmp parameters.

    The 1x1 layers feed relu and use He initialization; the attention gates use
    ``uniform(-0.05, 0.05)`` so the sigmoids start near 0.5.
    """
    kernels = []
    cin = cfg.in_bands
    for i, width in enumerate(cfg.widths()):
        name = "%s/band/%d" % (PREFIX, i)
        kernels.append(conv_kernel(1, 1, cin, width, rng, name=name))
        cin = width
    c = cfg.out_channels
    return InAmpParams(
        one_by_one=kernels,
        sa_conv=conv_kernel(
            cfg.sa_kernel, cfg.sa_kernel, 2, 1, rng, "uniform", name=PREFIX + "/sa",
        ),
        ca_fc1=dense_layer(c, cfg.ca_hidden, rng, "uniform", name=PREFIX + "/ca/fc1"),
        ca_fc2=dense_layer(cfg.ca_hidden, c, rng, "uniform", name=PREFIX + "/ca/fc2"),
    )


def band_attention(x: Tensor, params: InAmpParams, cfg: InAmpConfig) -> Tensor:
    """Extract deep-pseudo bands with stacked ``1x1`` convolution + relu stages.

    Returns:
        ``[N, H, W, out_channels - n]``; every value is non-negative and each
        output pixel depends only on the same input pixel.
    """
    if x.ndim != 4 or x.shape[3] != cfg.in_bands:
        raise ChannelMismatch(
            "expected [N, H, W, %d] input, got %s" % (cfg.in_bands, x.shape),
        )
    outputs = []
    h = x
    for kernel in params.one_by_one[: cfg.n_one_by_one_layers]:
        h = relu(conv2d(h, kernel))
        outputs.append(h)
    return concat(outputs, axis=3) if cfg.concat_all_layers else h


def concat_bands(x: Tensor, pseudo: Tensor) -> Tensor:
    """Append pseudo bands after the original bands."""
    if x.ndim != 4 or pseudo.ndim != 4 or x.shape[:3] != pseudo.shape[:3]:
        raise SpatialMismatch(
            "bands %s and pseudo bands %s disagree in N, H, W"
            % (x.shape, pseudo.shape),
        )
    return concat([x, pseudo], axis=3)


def spatial_mask(x: Tensor, params: InAmpParams) -> Tensor:
    """Per-pixel gate ``[N, H, W, 1]`` with values in ``(0, 1)``."""
    if x.ndim != 4:
        raise ShapeMismatch("expected [N, H, W, C] input, got %s" % (x.shape,))
    stacked = concat(
        [reduce(x, 3, "mean", keepdims=True), reduce(x, 3, "max", keepdims=True)],
        axis=3,
    )
    return sigmoid(conv2d(stacked, params.sa_conv, padding="same"))


def spatial_attention(x: Tensor, params: InAmpParams) -> Tensor:
    """Scale every channel of each pixel by that pixel's spatial mask."""
    return mul(x, spatial_mask(x, params))


def channel_weights(x: Tensor, params: InAmpParams) -> Tensor:
    """Per-channel gate ``[N, C]`` with values in ``(0, 1)``."""
    if x.ndim != 4:
        raise ShapeMismatch("expected [N, H, W, C] input, got %s" % (x.shape,))
    c = x.shape[3]
    if params.ca_fc1.weights.shape[0] != c:
        raise ChannelMismatch(
            "channel attention expects %d channels, got %d"
            % (params.ca_fc1.weights.shape[0], c),
        )
    if params.ca_fc1.weights.shape[1] < 1:
        raise ReductionUnderflow("channel attention has no hidden units")

    def mlp(v: Tensor) -> Tensor:
        return params.ca_fc2(relu(params.ca_fc1(v)))

    return sigmoid(add(mlp(pool(x, "global_avg")), mlp(pool(x, "global_max"))))


def channel_attention(x: Tensor, params: InAmpParams) -> Tensor:
    """Scale every pixel of each channel by that channel's weight."""
    w = channel_weights(x, params)
    return mul(x, reshape(w, (x.shape[0], 1, 1, x.shape[3])))


def inamp_forward(x: Tensor, params: InAmpParams, cfg: InAmpConfig) -> Tensor:
    """Run the three InAmp steps, ``[N, H, W, n] -> [N, H, W, out_channels]``."""
    out = concat_bands(x, band_attention(x, params, cfg))
    if cfg.use_spatial_attention:
        out = spatial_attention(out, params)
    if cfg.use_channel_attention:
        out = channel_attention(out, params)
    return out


def export_pseudo_bands(
    x_out: Union[Tensor, np.ndarray],
    band_indices: Sequence[int],
    dest: Union[str, Path],
    prefix: str = "pseudo_band",
) -> List[Path]:
    """Write selected channels of one InAmp output as 8-bit graymaps.

    Each channel is min-max normalized to ``[0, 255]``; a constant channel
    becomes an all-zero raster.

    Params:
        x_out: ``[1, H, W, C]`` module output.
        band_indices: channels to export.
        dest: output directory, created if missing.
        prefix: file name prefix; files are ``<prefix>_<index>.pgm``.

    Returns:
        the written paths, in ``band_indices`` order.
    """
    data = x_out.data if isinstance(x_out, Tensor) else np.asarray(x_out)
    if data.ndim != 4 or data.shape[0] != 1:
        raise ShapeMismatch("expected a [1, H, W, C] output, got %s" % (data.shape,))
    c = data.shape[3]
    bad = [i for i in band_indices if not 0 <= i < c]
    if bad:
        raise IndexOutOfRange("band indices %s outside [0, %d)" % (bad, c))
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in band_indices:
        path = dest / ("%s_%02d.pgm" % (prefix, i))
        write_pgm(path, to_gray(data[0, :, :, i]))
        paths.append(path)
    logger.info("exported %d pseudo bands to %s", len(paths), dest)
    return paths


def core_contrast(band: np.ndarray, mask: np.ndarray, threshold: float = 0.9) -> float:
    """Separation of a band inside plume cores from the rest of the image.

    Returns ``|mean(core) - mean(outside)| / std(outside)`` where the core is
    ``mask >= threshold`` and outside is ``mask == 0``; ``inf`` when the outside
    is constant but the means differ, ``0`` when either region is empty.
    """
    band = np.asarray(band, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if band.shape != mask.shape:
        raise ShapeMismatch("band %s and mask %s differ" % (band.shape, mask.shape))
    core = band[mask >= threshold]
    outside = band[mask <= 0]
    if core.size == 0 or outside.size == 0:
        return 0.0
    diff = abs(float(core.mean()) - float(outside.mean()))
    std = float(outside.std())
    if std == 0:
        return float("inf") if diff > 0 else 0.0
    return diff / std
