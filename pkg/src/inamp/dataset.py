"""Dataset manifests, the synthetic scene generator, splits and imports.

A dataset is a directory of MSIB files plus ``manifest.csv`` with the header
``path,label_index,label_name``; paths are relative to the manifest.
"""

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .configuration import Configuration, check_schema, config_from_kv
from .errors import ChannelMismatch, ConfigError, EmptyManifest
from .helpers import dump_kv
from .raster import (
    DEFAULT_BANDS,
    VISIBLE_BANDS,
    MultiSpectralImage,
    normalize,
    read_msib,
    select_bands,
    write_msib,
)
from .rng import Seeds

logger = logging.getLogger(__name__)

MANIFEST = "manifest.csv"
SPEC_FILE = "spec.txt"
HEADER = ("path", "label_index", "label_name")
SPLITS = ("train", "val", "test")
TRAIN_PERCENT = 64
VAL_PERCENT = 16
MASK_SUFFIX = ".mask.msib"


@dataclass(frozen=True)
class Record:
    """One manifest row."""

    path: str
    label_index: int
    label_name: str


@dataclass
class Manifest:
    """Labelled image files below a root directory."""

    records: List[Record]
    labels: List[str]
    root: Path = field(default_factory=Path)

    def __post_init__(self) -> None:  # noqa: D105
        for r in self.records:
            if not 0 <= r.label_index < len(self.labels):
                raise ConfigError("label index %d outside taxonomy" % r.label_index)
            if self.labels[r.label_index] != r.label_name:
                raise ConfigError(
                    "label %d is %r, record says %r"
                    % (r.label_index, self.labels[r.label_index], r.label_name),
                )

    def __len__(self) -> int:  # noqa: D105
        return len(self.records)

    def path(self, record: Record) -> Path:
        """Absolute location of a record's file."""
        return self.root / record.path

    def subset(self, records: Sequence[Record]) -> "Manifest":
        """Manifest over some of the records, sharing root and taxonomy."""
        return Manifest(list(records), self.labels, self.root)

    def counts(self) -> List[int]:
        """Number of records per label index."""
        result = [0] * len(self.labels)
        for r in self.records:
            result[r.label_index] += 1
        return result


def write_manifest(manifest: Manifest, path: Union[str, Path]) -> None:
    """Write a manifest as CSV."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HEADER)
        for r in manifest.records:
            writer.writerow((r.path, r.label_index, r.label_name))


def read_manifest(path: Union[str, Path]) -> Manifest:
    """Read a manifest; a directory means its ``manifest.csv``.

    The taxonomy is rebuilt from the rows, so label indices must be dense.
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != HEADER:
        raise ConfigError("%s: expected header %s" % (path, ",".join(HEADER)))
    records = [Record(p, int(i), name) for p, i, name in rows[1:]]
    if not records:
        raise EmptyManifest("%s has no records" % path)
    names: Dict[int, str] = {}
    for r in records:
        if names.setdefault(r.label_index, r.label_name) != r.label_name:
            raise ConfigError("label %d has several names" % r.label_index)
    if sorted(names) != list(range(len(names))):
        raise ConfigError("label indices %s are not dense" % sorted(names))
    return Manifest(records, [names[i] for i in range(len(names))], path.parent)


# synthetic scenes


SPEC_KINDS = {
    "seed": "int",
    "per_label": "int",
    "size": "int",
    "bands": "strs",
    "labels": "strs",
    "noise_sigma": "float",
    "plumes_min": "int",
    "plumes_max": "int",
    "axis_min": "float",
    "axis_max": "float",
    "softness": "float",
    "background_low": "float",
    "background_high": "float",
    "background_cells": "int",
    "visible_bands": "strs",
}

SPEC_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer"},
        "per_label": {"type": "integer", "minimum": 1},
        "size": {"type": "integer", "minimum": 4},
        "bands": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "labels": {"type": "array", "items": {"type": "string"}, "minItems": 2},
        "noise_sigma": {"type": "number", "minimum": 0},
        "plumes_min": {"type": "integer", "minimum": 1},
        "plumes_max": {"type": "integer", "minimum": 1},
        "axis_min": {"type": "number", "exclusiveMinimum": 0},
        "axis_max": {"type": "number", "exclusiveMinimum": 0},
        "softness": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "background_low": {"type": "number"},
        "background_high": {"type": "number"},
        "background_cells": {"type": "integer", "minimum": 1},
        "visible_bands": {"type": "array", "items": {"type": "string"}},
    },
}


def _default_signatures() -> Dict[str, List[float]]:
    return {
        "smoke": [0.60, 0.60, 0.60, 0.25, 0.15, 0.10],
        "other_aerosol": [0.60, 0.60, 0.60, 0.65, 0.60, 0.55],
    }


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic scene generator.

    Labels without a signature (``clear`` by default) get no plumes. Every
    plume label shares the same shape distribution, so only the signature
    separates them.
    """

    seed: int = 1
    per_label: int = 10
    size: int = 64
    bands: List[str] = field(default_factory=lambda: list(DEFAULT_BANDS))
    labels: List[str] = field(
        default_factory=lambda: ["clear", "other_aerosol", "smoke"],
    )
    signatures: Dict[str, List[float]] = field(default_factory=_default_signatures)
    noise_sigma: float = 0.02
    plumes_min: int = 1
    plumes_max: int = 3
    # plume semi-axes as fractions of the image side
    axis_min: float = 0.12
    axis_max: float = 0.3
    # fraction of the plume radius over which the blend weight ramps up
    softness: float = 0.3
    background_low: float = 0.05
    background_high: float = 0.45
    background_cells: int = 4
    # plume signatures must agree on these bands
    visible_bands: List[str] = field(default_factory=lambda: list(VISIBLE_BANDS))

    def __post_init__(self) -> None:  # noqa: D105
        values = asdict(self)
        del values["signatures"]
        check_schema(values, SPEC_SCHEMA)
        if self.plumes_max < self.plumes_min:
            raise ConfigError("plumes_max must be >= plumes_min")
        if self.axis_max < self.axis_min:
            raise ConfigError("axis_max must be >= axis_min")
        if self.background_high < self.background_low:
            raise ConfigError("background_high must be >= background_low")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("duplicate labels")
        for name, sig in self.signatures.items():
            if name not in self.labels:
                raise ConfigError("signature for unknown label %r" % name)
            if len(sig) != len(self.bands):
                raise ConfigError(
                    "signature %r has %d values for %d bands"
                    % (name, len(sig), len(self.bands)),
                )
        visible = [self.bands.index(b) for b in self.visible_bands if b in self.bands]
        rows = [np.asarray(s)[visible] for s in self.signatures.values()]
        if rows and any(not np.array_equal(rows[0], r) for r in rows[1:]):
            raise ConfigError(
                "plume signatures differ in the visible bands %s" % self.visible_bands,
            )

    def to_kv(self) -> str:
        """Render as a key=value file."""
        values: Dict[str, Any] = asdict(self)
        del values["signatures"]
        values.update(("signature." + k, v) for k, v in self.signatures.items())
        return dump_kv(values)

    @classmethod
    def from_config(cls, cfg: Configuration) -> "SyntheticSpec":
        """Build from generator keys; ``signature.<label>`` lists per-band values."""
        flat = dict(cfg.as_dict())
        signatures = {
            k.split(".", 1)[1]: cfg.get_list(k, float)
            for k in list(flat)
            if k.startswith("signature.")
        }
        base = Configuration(
            {k: v for k, v in flat.items() if not k.startswith("signature.")},
        )
        defaults = {k: v for k, v in asdict(cls()).items() if k != "signatures"}
        values = base.resolve(SPEC_KINDS, defaults)
        if signatures:
            values["signatures"] = signatures
        return cls(**values)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SyntheticSpec":
        """Read a key=value generator spec file."""
        return cls.from_config(config_from_kv(path, read_from_file=True))


def value_noise(
    rng: np.random.Generator,
    size: int,
    cells: int,
    bands: int,
    low: float,
    high: float,
) -> np.ndarray:
    """Smooth ``size x size x bands`` field interpolated from a coarse random grid."""
    grid = rng.uniform(low, high, size=(cells + 1, cells + 1, bands))
    pos = np.linspace(0.0, cells, size)
    i0 = np.minimum(np.floor(pos).astype(int), cells - 1)
    t = pos - i0
    t = t * t * (3 - 2 * t)
    rows = grid[i0] * (1 - t)[:, None, None] + grid[i0 + 1] * t[:, None, None]
    return rows[:, i0] * (1 - t)[None, :, None] + rows[:, i0 + 1] * t[None, :, None]


def plume_mask(rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    """Blend weights in ``[0, 1]`` of 1 to 3 soft-edged elliptical plumes."""
    n = spec.size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    weight = np.zeros((n, n))
    for _ in range(int(rng.integers(spec.plumes_min, spec.plumes_max + 1))):
        cy, cx = rng.uniform(0, n, size=2)
        a, b = rng.uniform(spec.axis_min, spec.axis_max, size=2) * n
        theta = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        d = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        weight = np.maximum(weight, np.clip((1 - d) / spec.softness, 0.0, 1.0))
    return weight


def synth_image(
    spec: SyntheticSpec, label: str, rng: np.random.Generator,
) -> Tuple[MultiSpectralImage, np.ndarray]:
    """Generate one scene and its plume blend-weight map."""
    c = len(spec.bands)
    values = value_noise(
        rng,
        spec.size,
        spec.background_cells,
        c,
        spec.background_low,
        spec.background_high,
    )
    signature = spec.signatures.get(label)
    if signature is None:
        weight = np.zeros((spec.size, spec.size))
    else:
        weight = plume_mask(rng, spec)
        w = weight[:, :, None]
        values = (1 - w) * values + w * np.asarray(signature)[None, None, :]
    values = values + rng.normal(0.0, spec.noise_sigma, size=values.shape)
    values = np.clip(values, 0.0, 1.0)
    return MultiSpectralImage(values.astype(np.float32), spec.bands), weight


def mask_path(path: Union[str, Path]) -> Path:
    """Location of the plume mask written next to a generated image."""
    path = Path(path)
    return path.with_name(path.stem + MASK_SUFFIX)


def gen_synthetic(spec: SyntheticSpec, out: Union[str, Path]) -> Manifest:
    """Generate a labelled synthetic dataset under ``out``.

    Image ``i`` of label ``k`` draws from its own ``("generate", k, i)`` stream,
    so the output depends only on the spec.
    """
    out = Path(out)
    seeds = Seeds(spec.seed)
    records = []
    for k, label in enumerate(spec.labels):
        (out / label).mkdir(parents=True, exist_ok=True)
        for i in range(spec.per_label):
            img, weight = synth_image(spec, label, seeds.stream("generate", k, i))
            rel = "%s/%s_%04d.msib" % (label, label, i)
            write_msib(img, out / rel)
            mask = MultiSpectralImage(weight[:, :, None], ["blend"])
            write_msib(mask, mask_path(out / rel))
            records.append(Record(rel, k, label))
    manifest = Manifest(records, list(spec.labels), out)
    write_manifest(manifest, out / MANIFEST)
    (out / SPEC_FILE).write_text(spec.to_kv(), encoding="utf-8")
    logger.info("generated %d images in %s", len(records), out)
    return manifest


def split_dataset(manifest: Manifest, seed: int) -> Tuple[Manifest, Manifest, Manifest]:
    """Stratified train / val / test partition.

    Each label's records are shuffled with the ``("split", label)`` stream; the
    first ``floor(0.64 n)`` go to train, the next ``floor(0.16 n)`` to val and
    the rest to test.
    """
    if not manifest.records:
        raise EmptyManifest("cannot split an empty manifest")
    seeds = Seeds(seed)
    parts: Tuple[List[Record], List[Record], List[Record]] = ([], [], [])
    for k in range(len(manifest.labels)):
        rows = [r for r in manifest.records if r.label_index == k]
        order = seeds.stream("split", k).permutation(len(rows))
        n_train = len(rows) * TRAIN_PERCENT // 100
        n_val = len(rows) * VAL_PERCENT // 100
        shuffled = [rows[i] for i in order]
        parts[0].extend(shuffled[:n_train])
        parts[1].extend(shuffled[n_train : n_train + n_val])
        parts[2].extend(shuffled[n_train + n_val :])
    train, val, test = (manifest.subset(p) for p in parts)
    logger.debug("split %d records into %d/%d/%d", len(manifest), len(train),
                 len(val), len(test))
    return train, val, test


def load_images(
    manifest: Manifest,
    bands: Optional[Sequence[str]] = None,
    normalization: str = "fixed_unit",
) -> Tuple[np.ndarray, np.ndarray]:
    """Stack a manifest's images into ``[N, H, W, C]`` float32 and ``[N]`` labels."""
    images = []
    for r in manifest.records:
        img = read_msib(manifest.path(r))
        if bands:
            img = select_bands(img, bands)
        images.append(normalize(img, normalization).values)
    if not images:
        return np.zeros((0, 0, 0, 0), dtype=np.float32), np.zeros(0, dtype=np.int64)
    shapes = {i.shape for i in images}
    if len(shapes) > 1:
        raise ChannelMismatch("images have different shapes: %s" % sorted(shapes))
    labels = np.array([r.label_index for r in manifest.records], dtype=np.int64)
    return np.stack(images), labels


def import_arrays(
    src: Union[str, Path],
    bands: Sequence[str],
    out: Union[str, Path],
) -> Manifest:
    """Convert ``<src>/<label>/<name>.npy`` arrays (``H x W x C``) into a dataset.

    Labels are the sub-directory names in sorted order.
    """
    src, out = Path(src), Path(out)
    labels = sorted(p.name for p in src.iterdir() if p.is_dir())
    records = []
    for k, label in enumerate(labels):
        (out / label).mkdir(parents=True, exist_ok=True)
        for npy in sorted((src / label).glob("*.npy")):
            values = np.load(npy)
            if values.ndim != 3 or values.shape[2] != len(bands):
                raise ChannelMismatch(
                    "%s has shape %s, expected %d bands"
                    % (npy, values.shape, len(bands)),
                )
            rel = "%s/%s.msib" % (label, npy.stem)
            write_msib(MultiSpectralImage(values, list(bands)), out / rel)
            records.append(Record(rel, k, label))
    if not records:
        raise EmptyManifest("no .npy arrays found under %s" % src)
    manifest = Manifest(records, labels, out)
    write_manifest(manifest, out / MANIFEST)
    logger.info("imported %d arrays from %s", len(records), src)
    return manifest
