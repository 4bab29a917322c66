"""Baseline scene classifier with an optional InAmp front-end.

The wiring is ``[InAmp] -> (3x3 conv, relu, max2x2) per block width ->
global average pool -> dense``. Inputs keep their size: the classifier is built
for one square ``input_size`` and rejects anything else instead of resampling.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .amplifier import InAmpConfig, InAmpParams, inamp_forward, init_inamp
from .checkpoint import load_checkpoint, save_checkpoint
from .configuration import Configuration, check_schema, config_from_dict
from .errors import ConfigError, ShapeMismatch
from .nn import ConvKernel, Dense, conv2d, conv_kernel, dense_layer, pool, relu, softmax
from .tensor import Tensor, tensor

logger = logging.getLogger(__name__)

KINDS = {
    "with_inamp": "bool",
    "input_bands": "int",
    "input_size": "int",
    "n_classes": "int",
    "block_widths": "ints",
    "bands": "strs",
}

SCHEMA = {
    "type": "object",
    "properties": {
        "with_inamp": {"type": "boolean"},
        "input_bands": {"type": "integer", "minimum": 1},
        "input_size": {"type": "integer", "minimum": 1},
        "n_classes": {"type": "integer", "minimum": 2},
        "block_widths": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1},
            "minItems": 1,
        },
        "bands": {
            "anyOf": [{"type": "null"}, {"type": "array", "items": {"type": "string"}}],
        },
    },
    "required": ["input_bands", "n_classes"],
}


@dataclass
class ClassifierConfig:
    """Structure of a baseline classifier."""

    input_bands: int
    n_classes: int
    with_inamp: bool = True
    input_size: int = 64
    block_widths: List[int] = field(default_factory=lambda: [32, 64, 128])
    inamp: Optional[InAmpConfig] = None
    # band names of the input, in channel order
    bands: Optional[List[str]] = None

    def __post_init__(self) -> None:  # noqa: D105
        check_schema(
            {k: v for k, v in self.__dict__.items() if k != "inamp"},
            SCHEMA,
        )
        depth = 2 ** len(self.block_widths)
        if self.input_size % depth:
            raise ConfigError(
                "input_size %d is not divisible by %d" % (self.input_size, depth),
            )
        if self.bands is not None and len(self.bands) != self.input_bands:
            raise ConfigError(
                "%d band names for %d input bands"
                % (len(self.bands), self.input_bands),
            )
        if self.with_inamp:
            if self.inamp is None:
                self.inamp = InAmpConfig(in_bands=self.input_bands)
            elif self.inamp.in_bands != self.input_bands:
                raise ConfigError(
                    "InAmp expects %d bands, classifier input has %d"
                    % (self.inamp.in_bands, self.input_bands),
                )

    @property
    def backbone_input(self) -> int:
        """Channel count seen by the first backbone convolution."""
        if self.with_inamp and self.inamp is not None:
            return self.inamp.out_channels
        return self.input_bands

    def to_metadata(self) -> Dict[str, Any]:
        """Flat ``model.*`` / ``inamp.*`` keys describing this configuration."""
        result: Dict[str, Any] = {
            "model.with_inamp": self.with_inamp,
            "model.input_bands": self.input_bands,
            "model.input_size": self.input_size,
            "model.n_classes": self.n_classes,
            "model.block_widths": self.block_widths,
        }
        if self.bands is not None:
            result["model.bands"] = self.bands
        if self.with_inamp and self.inamp is not None:
            result.update(("inamp." + k, v) for k, v in self.inamp.to_dict().items())
        return result

    @classmethod
    def from_config(cls, cfg: Configuration) -> "ClassifierConfig":
        """Build from a configuration with ``model`` and optional ``inamp`` sections."""
        model = cfg.get("model")
        if not isinstance(model, Configuration):
            raise ConfigError("missing model section")
        values = model.resolve(
            KINDS,
            {"with_inamp": True, "input_size": 64, "block_widths": [32, 64, 128]},
        )
        for key in ("input_bands", "n_classes"):
            if values[key] is None:
                raise ConfigError("model.%s is required" % key)
        section = cfg.get("inamp")
        if values["with_inamp"] and isinstance(section, Configuration):
            if "in_bands" not in section:
                section.update({"in_bands": values["input_bands"]})
            values["inamp"] = InAmpConfig.from_config(section)
        return cls(**values)

    @classmethod
    def from_metadata(cls, metadata: Mapping[str, str]) -> "ClassifierConfig":
        """Inverse of [to_metadata][inamp.model.ClassifierConfig.to_metadata]."""
        keys = [k for k in metadata if k.split(".", 1)[0] in ("model", "inamp")]
        return cls.from_config(config_from_dict({k: metadata[k] for k in keys}))


@dataclass
class Classifier:
    """Classifier parameters together with their configuration."""

    cfg: ClassifierConfig
    inamp: Optional[InAmpParams]
    blocks: List[ConvKernel]
    head: Dense

    def groups(self) -> Dict[str, Dict[str, Tensor]]:
        """Named parameters split into ``inamp``, ``backbone`` and ``head``."""
        backbone: Dict[str, Tensor] = {}
        for i, k in enumerate(self.blocks):
            backbone["backbone/%d/weights" % i] = k.weights
            backbone["backbone/%d/bias" % i] = k.bias
        return {
            "inamp": self.inamp.named_parameters() if self.inamp is not None else {},
            "backbone": backbone,
            "head": {"head/weights": self.head.weights, "head/bias": self.head.bias},
        }

    def named_parameters(self) -> Dict[str, Tensor]:
        """Every parameter keyed by checkpoint name."""
        result: Dict[str, Tensor] = {}
        for group in self.groups().values():
            result.update(group)
        return result

    def parameters(self) -> List[Tensor]:
        """Every parameter in checkpoint order."""
        return list(self.named_parameters().values())

    def forward(self, x: Tensor) -> Tensor:
        """Logits ``[N, K]`` of a ``[N, S, S, n]`` batch."""
        size, bands = self.cfg.input_size, self.cfg.input_bands
        if x.ndim != 4 or x.shape[1:] != (size, size, bands):
            raise ShapeMismatch(
                "expected [N, %d, %d, %d] batch, got %s" % (size, size, bands, x.shape),
            )
        h = x
        if self.inamp is not None and self.cfg.inamp is not None:
            h = inamp_forward(h, self.inamp, self.cfg.inamp)
        for kernel in self.blocks:
            h = pool(relu(conv2d(h, kernel)), "max2x2")
        return self.head(pool(h, "global_avg"))

    __call__ = forward


def build_classifier(cfg: ClassifierConfig, rng: np.random.Generator) -> Classifier:
    """Initialize a classifier, drawing parameters from ``rng`` in wiring order."""
    inamp = init_inamp(cfg.inamp, rng) if cfg.with_inamp and cfg.inamp else None
    blocks = []
    cin = cfg.backbone_input
    for i, width in enumerate(cfg.block_widths):
        blocks.append(conv_kernel(3, 3, cin, width, rng, name="backbone/%d" % i))
        cin = width
    head = dense_layer(cin, cfg.n_classes, rng, name="head")
    model = Classifier(cfg, inamp, blocks, head)
    counts = count_parameters(model)
    logger.info(
        "built classifier (%s InAmp): %d parameters",
        "with" if cfg.with_inamp else "without",
        counts["total"],
    )
    return model


def count_parameters(model: Classifier) -> Dict[str, int]:
    """Scalar parameter counts per group plus ``total``."""
    result = {
        name: sum(p.size for p in group.values())
        for name, group in model.groups().items()
    }
    result["total"] = sum(result.values())
    return result


def classify(
    model: Classifier, batch: Union[Tensor, np.ndarray],
) -> Tuple[np.ndarray, np.ndarray]:
    """Class probabilities and predicted labels of a batch.

    Returns:
        ``[N, K]`` probabilities and ``[N]`` labels; ties go to the lowest index.
    """
    x = batch if isinstance(batch, Tensor) else tensor(batch)
    logits = model.forward(x).data.astype(np.float64)
    probs = softmax(logits)
    return probs, np.argmax(probs, axis=1)


def save_classifier(
    path: Union[str, Path],
    model: Classifier,
    extra: Optional[Mapping[str, Any]] = None,
) -> None:
    """Write parameters with the configuration as checkpoint metadata."""
    metadata = model.cfg.to_metadata()
    if extra:
        metadata.update(extra)
    save_checkpoint(path, model.named_parameters(), metadata)


def load_classifier(path: Union[str, Path]) -> Tuple[Classifier, Dict[str, str]]:
    """Rebuild a classifier from a checkpoint written by `save_classifier`."""
    tensors, metadata = load_checkpoint(path)
    cfg = ClassifierConfig.from_metadata(metadata)
    model = build_classifier(cfg, np.random.default_rng(0))
    params = model.named_parameters()
    if set(params) != set(tensors):
        missing = sorted(set(params) ^ set(tensors))
        raise ConfigError("checkpoint does not match its configuration: %s" % missing)
    for name, p in params.items():
        if tensors[name].shape != p.shape:
            raise ShapeMismatch(
                "%s has shape %s, expected %s" % (name, tensors[name].shape, p.shape),
            )
        p.data = tensors[name].astype(p.data.dtype)
    return model, metadata
