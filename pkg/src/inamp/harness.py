"""Training, evaluation, ablation and comparison runs.

The schedule decays the learning rate when validation loss stops improving and
stops when validation accuracy stops improving; the weights of the best
validation-accuracy epoch are the ones kept and tested.
"""

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .amplifier import InAmpConfig
from .configuration import Configuration, check_schema, config_from_kv
from .dataset import load_images, read_manifest, split_dataset
from .errors import ConfigError, Divergence, EmptySplit
from .helpers import dump_kv
from .metrics import METRICS, ConfusionMatrix, confusion_matrix, format_row, report
from .model import (
    Classifier,
    ClassifierConfig,
    build_classifier,
    count_parameters,
    save_classifier,
)
from .nn import Adam, softmax_xent
from .raster import flip_values, read_msib
from .rng import Seeds, set_seed
from .tensor import backward, tensor

logger = logging.getLogger(__name__)

REPORT_FILE = "report.txt"
EPOCHS_FILE = "epochs.csv"
EPOCH_HEADER = (
    "epoch",
    "train_loss",
    "train_accuracy",
    "val_loss",
    "val_accuracy",
    "lr",
)
ABLATION_HEADER = ("variant",) + METRICS
COMPARE_HEADER = ("model", "inamp", "params") + METRICS

TRAIN_KINDS = {
    "batch_size": "int",
    "max_epochs": "int",
    "initial_lr": "float",
    "plateau_patience": "int",
    "plateau_factor": "float",
    "early_stop_patience": "int",
    "seed": "int",
    "augmentation": "bool",
    "target_label": "str",
    "bands": "strs",
    "normalization": "str",
}

TRAIN_SCHEMA = {
    "type": "object",
    "properties": {
        "batch_size": {"type": "integer", "minimum": 1},
        "max_epochs": {"type": "integer", "minimum": 1},
        "initial_lr": {"type": "number", "exclusiveMinimum": 0},
        "plateau_patience": {"type": "integer", "minimum": 1},
        "plateau_factor": {
            "type": "number",
            "exclusiveMinimum": 0,
            "exclusiveMaximum": 1,
        },
        "early_stop_patience": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "augmentation": {"type": "boolean"},
        "target_label": {"type": "string"},
        "bands": {
            "anyOf": [{"type": "null"}, {"type": "array", "items": {"type": "string"}}],
        },
        "normalization": {"enum": ["per_band_minmax", "fixed_unit"]},
    },
}


@dataclass
class TrainConfig:
    """Training schedule and data options."""

    batch_size: int = 32
    max_epochs: int = 300
    initial_lr: float = 0.01
    plateau_patience: int = 20
    plateau_factor: float = 0.8
    early_stop_patience: int = 60
    seed: int = 0
    augmentation: bool = True
    target_label: str = "smoke"
    # restrict images to these bands, in this order
    bands: Optional[List[str]] = None
    normalization: str = "fixed_unit"

    def __post_init__(self) -> None:  # noqa: D105
        check_schema(asdict(self), TRAIN_SCHEMA)

    def to_dict(self) -> Dict[str, Any]:
        """Non-empty fields as a flat mapping."""
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_config(cls, cfg: Configuration) -> "TrainConfig":
        """Build from a configuration holding the keys of ``TRAIN_KINDS``."""
        defaults = {f.name: getattr(cls(), f.name) for f in fields(cls)}
        return cls(**cfg.resolve(TRAIN_KINDS, defaults))


@dataclass
class Split:
    """Images ``[N, H, W, C]`` and labels ``[N]``."""

    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:  # noqa: D105
        return int(self.y.shape[0])


@dataclass
class Splits:
    """Train, validation and test data with their taxonomy."""

    train: Split
    val: Split
    test: Split
    labels: List[str]
    bands: List[str]

    def target_index(self, name: str) -> int:
        """Label index of a class name."""
        if name not in self.labels:
            raise ConfigError(
                "unknown label %r, expected one of %s" % (name, self.labels),
            )
        return self.labels.index(name)


def load_splits(
    data: Union[str, Path],
    seed: int,
    bands: Optional[Sequence[str]] = None,
    normalization: str = "fixed_unit",
) -> Splits:
    """Read a dataset directory and split it under ``seed``."""
    manifest = read_manifest(data)
    parts = [
        Split(*load_images(m, bands, normalization))
        for m in split_dataset(manifest, seed)
    ]
    if bands:
        names = list(bands)
    else:
        names = read_msib(manifest.path(manifest.records[0])).bands
    logger.info(
        "loaded %s: %d/%d/%d images, bands %s",
        data, len(parts[0]), len(parts[1]), len(parts[2]), ",".join(names),
    )
    return Splits(parts[0], parts[1], parts[2], list(manifest.labels), names)


class ReduceOnPlateau:
    """Signal a learning-rate decay after ``patience`` epochs without a lower loss."""

    def __init__(self, patience: int, factor: float):
        """Class Constructor.

        Params:
            patience: epochs without strict improvement before a decay.
            factor: multiplier in ``(0, 1)``.
        """
        self.patience = patience
        self.factor = factor
        self.best = float("inf")
        self.wait = 0

    def step(self, loss: float) -> bool:
        """Record one epoch's loss; return whether the rate should decay."""
        if loss < self.best:
            self.best = loss
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience:
            self.wait = 0
            return True
        return False


class EarlyStopping:
    """Track the best score and stop after ``patience`` epochs without a higher one."""

    def __init__(self, patience: int):
        """Class Constructor.

        Params:
            patience: epochs without strict improvement before stopping.
        """
        self.patience = patience
        self.best_score: Optional[float] = None
        self.best_epoch = 0
        self.counter = 0
        self.stop = False

    def step(self, score: float, epoch: int) -> bool:
        """Record one epoch's score; return whether it is a new best."""
        if self.best_score is None or score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        if self.counter >= self.patience:
            self.stop = True
        return False


@dataclass
class EpochRecord:
    """Per-epoch statistics."""

    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    lr: float

    def values(self) -> List[float]:
        """Float columns in CSV order."""
        return [
            self.train_loss,
            self.train_accuracy,
            self.val_loss,
            self.val_accuracy,
            self.lr,
        ]


@dataclass
class TrainReport:
    """Outcome of one training run."""

    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    wall_time: float = 0.0
    test: Dict[str, float] = field(default_factory=dict)
    seed: int = 0
    params: int = 0

    @property
    def lrs(self) -> List[float]:
        """Learning rate of every epoch."""
        return [e.lr for e in self.epochs]


@dataclass
class Evaluation:
    """Predictions and metrics over one split."""

    cm: ConfusionMatrix
    metrics: Dict[str, float]
    predictions: np.ndarray
    probs: np.ndarray


def _batches(n: int, size: int, order: Optional[np.ndarray] = None) -> List[np.ndarray]:
    idx = np.arange(n) if order is None else order
    return [idx[i : i + size] for i in range(0, n, size)]


def _forward(
    model: Classifier, split: Split, batch_size: int,
) -> Tuple[float, np.ndarray]:
    """Mean loss and probabilities of a split, without augmentation."""
    total = 0.0
    probs = []
    for idx in _batches(len(split), batch_size):
        loss, p = softmax_xent(model(tensor(split.x[idx])), split.y[idx])
        total += loss.item() * len(idx)
        probs.append(p.data.astype(np.float64))
    return total / len(split), np.concatenate(probs)


def evaluate(
    model: Classifier,
    split: Split,
    target: int,
    labels: Optional[Sequence[str]] = None,
    batch_size: int = 32,
) -> Evaluation:
    """Classify a split and report accuracy, kappa and the target miss rate."""
    if len(split) == 0:
        raise EmptySplit("cannot evaluate an empty split")
    _, probs = _forward(model, split, batch_size)
    predictions = np.argmax(probs, axis=1)
    cm = confusion_matrix(split.y, predictions, model.cfg.n_classes, labels)
    return Evaluation(cm, report(cm, target), predictions, probs)


def train(
    model: Classifier,
    splits: Splits,
    cfg: TrainConfig,
    checkpoint: Optional[Union[str, Path]] = None,
) -> TrainReport:
    """Train with Adam, plateau decay and early stopping; test the best weights.

    Params:
        model: classifier, trained in place.
        splits: data; every split must be non-empty.
        cfg: schedule.
        checkpoint: where to save the best weights, if given.
    """
    for name in ("train", "val", "test"):
        if len(getattr(splits, name)) == 0:
            raise EmptySplit("%s split is empty" % name)
    target = splits.target_index(cfg.target_label)
    seeds = Seeds(cfg.seed)
    optimizer = Adam(model.parameters(), lr=cfg.initial_lr)
    plateau = ReduceOnPlateau(cfg.plateau_patience, cfg.plateau_factor)
    stopper = EarlyStopping(cfg.early_stop_patience)
    result = TrainReport(seed=cfg.seed, params=count_parameters(model)["total"])
    best = {k: p.data.copy() for k, p in model.named_parameters().items()}
    start = time.perf_counter()
    result.stop_reason = "max_epochs"
    x, y = splits.train.x, splits.train.y
    for epoch in range(1, cfg.max_epochs + 1):
        order = seeds.stream("shuffle", epoch).permutation(len(y))
        flips = seeds.stream("augment", epoch).random((len(y), 2)) < 0.5
        loss_sum = 0.0
        correct = 0
        for b, idx in enumerate(_batches(len(y), cfg.batch_size, order)):
            xb = x[idx]
            if cfg.augmentation:
                xb = np.stack(
                    [
                        flip_values(xi, bool(h), bool(v))
                        for xi, (h, v) in zip(xb, flips[idx])
                    ],
                )
            loss, probs = softmax_xent(model(tensor(xb)), y[idx])
            value = loss.item()
            if not np.isfinite(value):
                result.stop_reason = "divergence"
                result.wall_time = time.perf_counter() - start
                raise Divergence(
                    "non-finite loss at epoch %d batch %d" % (epoch, b), result,
                )
            backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            loss_sum += value * len(idx)
            correct += int(np.sum(np.argmax(probs.data, axis=1) == y[idx]))
            logger.debug("epoch %d batch %d loss %.4f", epoch, b, value)
        val_loss, val_probs = _forward(model, splits.val, cfg.batch_size)
        val_acc = float(np.mean(np.argmax(val_probs, axis=1) == splits.val.y))
        result.epochs.append(
            EpochRecord(epoch, loss_sum / len(y), correct / len(y), val_loss, val_acc,
                        optimizer.lr),
        )
        logger.info(
            "epoch %d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f lr %.3g",
            epoch, loss_sum / len(y), correct / len(y), val_loss, val_acc, optimizer.lr,
        )
        if stopper.step(val_acc, epoch):
            best = {k: p.data.copy() for k, p in model.named_parameters().items()}
        if plateau.step(val_loss):
            optimizer.lr *= cfg.plateau_factor
            logger.info("validation loss plateaued, lr now %.3g", optimizer.lr)
        if stopper.stop:
            result.stop_reason = "early_stop"
            logger.info("validation accuracy flat for %d epochs, stopping",
                        cfg.early_stop_patience)
            break
    for k, p in model.named_parameters().items():
        p.data = best[k]
    result.best_epoch = stopper.best_epoch
    result.wall_time = time.perf_counter() - start
    final = evaluate(model, splits.test, target, splits.labels, cfg.batch_size)
    result.test = final.metrics
    logger.info("best epoch %d, test %s", result.best_epoch,
                ", ".join("%s %.4f" % kv for kv in result.test.items()))
    if checkpoint is not None:
        extra = {"data.labels": splits.labels}
        extra.update(("train." + k, v) for k, v in cfg.to_dict().items())
        save_classifier(checkpoint, model, extra)
    return result


def run(
    model_cfg: ClassifierConfig,
    splits: Splits,
    cfg: TrainConfig,
    checkpoint: Optional[Union[str, Path]] = None,
) -> Tuple[Classifier, TrainReport]:
    """Seed, build and train one classifier."""
    seeds = set_seed(cfg.seed)
    model = build_classifier(model_cfg, seeds.stream("init"))
    return model, train(model, splits, cfg, checkpoint)


# report files


def write_report(report_: TrainReport, dest: Union[str, Path]) -> None:
    """Write ``report.txt`` (key=value) and ``epochs.csv`` into ``dest``."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    values: Dict[str, Any] = {
        "best_epoch": report_.best_epoch,
        "stop_reason": report_.stop_reason,
        "wall_time": report_.wall_time,
        "epochs": len(report_.epochs),
        "seed": report_.seed,
        "params": report_.params,
    }
    values.update(("test." + k, v) for k, v in report_.test.items())
    (dest / REPORT_FILE).write_text(dump_kv(values), encoding="utf-8")
    with open(dest / EPOCHS_FILE, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(EPOCH_HEADER)
        for e in report_.epochs:
            writer.writerow([e.epoch] + [repr(float(v)) for v in e.values()])


def read_report(src: Union[str, Path]) -> TrainReport:
    """Inverse of [write_report][inamp.harness.write_report]."""
    src = Path(src)
    cfg = config_from_kv(src / REPORT_FILE, read_from_file=True)
    with open(src / EPOCHS_FILE, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != EPOCH_HEADER:
        raise ConfigError(
            "%s: expected header %s" % (src / EPOCHS_FILE, ",".join(EPOCH_HEADER)),
        )
    epochs = [EpochRecord(int(r[0]), *(float(v) for v in r[1:])) for r in rows[1:]]
    test = cfg.get("test")
    return TrainReport(
        epochs=epochs,
        best_epoch=cfg.get_int("best_epoch"),
        stop_reason=cfg.get_str("stop_reason"),
        wall_time=cfg.get_float("wall_time"),
        test={k: float(v) for k, v in test.as_dict().items()} if test else {},
        seed=cfg.get_int("seed"),
        params=cfg.get_int("params"),
    )


# ablation and comparison


AXES = ("attention", "layers", "channels")
ATTENTION_VARIANTS = (("None", False, False), ("CA", True, False), ("SA", False, True),
                      ("CA & SA", True, True))
LAYER_COUNTS = (1, 2, 3, 4)
CHANNEL_COUNTS = (16, 24, 32, 40, 48)


def grid(base: ClassifierConfig, axis: str) -> List[Tuple[str, ClassifierConfig]]:
    """Variant label and classifier configuration of every point on an axis."""
    inamp = base.inamp or InAmpConfig(in_bands=base.input_bands)
    if axis == "attention":
        changes = [
            (name, {"use_channel_attention": ca, "use_spatial_attention": sa})
            for name, ca, sa in ATTENTION_VARIANTS
        ]
    elif axis == "layers":
        changes = [(str(n), {"n_one_by_one_layers": n}) for n in LAYER_COUNTS]
    elif axis == "channels":
        changes = [(str(c), {"out_channels": c}) for c in CHANNEL_COUNTS]
    else:
        raise ConfigError("unknown ablation axis %r, expected one of %s" % (axis, AXES))
    return [
        (name, replace(base, with_inamp=True, inamp=replace(inamp, **kw)))
        for name, kw in changes
    ]


def _run_point(
    args: Tuple[ClassifierConfig, Splits, TrainConfig],
) -> Tuple[Dict[str, float], int]:
    _, report_ = run(*args)
    return report_.test, report_.params


@dataclass
class Table:
    """Result rows sharing one header."""

    header: Tuple[str, ...]
    rows: List[List[Any]] = field(default_factory=list)

    def best(self) -> int:
        """Index of the most accurate row, then lowest miss rate, then earliest.

        Undefined (NaN) metrics rank below every defined value.
        """
        acc = self.header.index("accuracy")
        fn = self.header.index("fn_rate")

        def key(i: int) -> Tuple[float, float, int]:
            a, f = float(self.rows[i][acc]), float(self.rows[i][fn])
            return (
                math.inf if math.isnan(a) else -a,
                math.inf if math.isnan(f) else f,
                i,
            )

        return min(range(len(self.rows)), key=key)

    def to_csv(self) -> str:
        """Header plus rows; metrics with four decimals."""
        lines = [",".join(self.header)]
        for row in self.rows:
            lines.append(",".join(
                "%.4f" % v if isinstance(v, float) else str(v) for v in row
            ))
        return "\n".join(lines) + "\n"


def ablate(
    base: ClassifierConfig,
    splits: Splits,
    cfg: TrainConfig,
    axis: str,
    workers: int = 1,
) -> Table:
    """Train one model per grid point under the same seed and splits."""
    points = grid(base, axis)
    jobs = [(model_cfg, splits, cfg) for _, model_cfg in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(job) for job in jobs]
    table = Table(ABLATION_HEADER)
    for (name, _), (metrics, _) in zip(points, results):
        table.rows.append([name] + [metrics[m] for m in METRICS])
        logger.info("ablation %s=%s: %s", axis, name, format_row(name, metrics))
    logger.info("best %s variant: %s", axis, table.rows[table.best()][0])
    return table


def compare(base: ClassifierConfig, splits: Splits, cfg: TrainConfig) -> Table:
    """Train the classifier without and with InAmp under one seed and split."""
    table = Table(COMPARE_HEADER)
    variants = [
        ("no", replace(base, with_inamp=False, inamp=None)),
        ("yes", replace(base, with_inamp=True)),
    ]
    for flag, model_cfg in variants:
        metrics, params = _run_point((model_cfg, splits, cfg))
        table.rows.append(["baseline", flag, params] + [metrics[m] for m in METRICS])
    return table
