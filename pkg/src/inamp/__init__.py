"""python-inamp module."""

from .__about__ import __version__
from .amplifier import (
    InAmpConfig,
    InAmpParams,
    core_contrast,
    export_pseudo_bands,
    inamp_forward,
    init_inamp,
)
from .configuration import (
    Configuration,
    ConfigurationSet,
    config_from_dict,
    config_from_env,
    config_from_file,
    config_from_kv,
    config_from_toml,
    layered,
)
from .dataset import SyntheticSpec, gen_synthetic, read_manifest, split_dataset
from .errors import InAmpError
from .harness import TrainConfig, ablate, compare, evaluate, load_splits, run, train
from .metrics import accuracy, confusion_matrix, fn_rate, kappa
from .model import (
    Classifier,
    ClassifierConfig,
    build_classifier,
    classify,
    load_classifier,
    save_classifier,
)
from .raster import MultiSpectralImage, read_msib, spectral_index, write_msib

__all__ = [
    "Classifier",
    "ClassifierConfig",
    "Configuration",
    "ConfigurationSet",
    "InAmpConfig",
    "InAmpError",
    "InAmpParams",
    "MultiSpectralImage",
    "SyntheticSpec",
    "TrainConfig",
    "__version__",
    "ablate",
    "accuracy",
    "build_classifier",
    "classify",
    "compare",
    "config_from_dict",
    "config_from_env",
    "config_from_file",
    "config_from_kv",
    "config_from_toml",
    "confusion_matrix",
    "core_contrast",
    "evaluate",
    "export_pseudo_bands",
    "fn_rate",
    "gen_synthetic",
    "inamp_forward",
    "init_inamp",
    "kappa",
    "layered",
    "load_classifier",
    "load_splits",
    "read_manifest",
    "read_msib",
    "run",
    "save_classifier",
    "spectral_index",
    "split_dataset",
    "train",
    "write_msib",
]
