"""Command line interface.

Every command accepts ``-v``/``-q`` and ``--config FILE`` (key=value or TOML).
Values are layered: flags override ``INAMP__`` environment variables, which
override the configuration file, which overrides built-in defaults.

Exit codes are 0 on success, 1 for user errors and 2 for internal errors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    List,
    Mapping,
    NoReturn,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from .__about__ import __version__
from .amplifier import core_contrast, export_pseudo_bands, inamp_forward
from .configuration import (
    Configuration,
    ConfigurationSet,
    config_from_dict,
    config_from_kv,
    layered,
)
from .dataset import (
    SyntheticSpec,
    gen_synthetic,
    import_arrays,
    mask_path,
)
from .errors import BadFlag, ConfigError, InAmpError, UnknownCommand
from .gradcheck import GROUPS, TOLERANCE, run_checks
from .graymap import write_pgm
from .harness import (
    AXES,
    Split,
    Splits,
    TrainConfig,
    ablate,
    compare,
    evaluate,
    load_splits,
    write_report,
)
from .harness import (
    run as run_experiment,
)
from .helpers import as_list, dump_kv, parse_kv_line
from .metrics import format_kv
from .model import ClassifierConfig, load_classifier
from .raster import INDICES, normalize, read_msib, select_bands, spectral_index
from .tensor import tensor

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
CHECKPOINT = "model.iawt"
ATTENTION = {
    "none": (False, False),
    "ca": (True, False),
    "sa": (False, True),
    "ca_sa": (True, True),
}


class Parser(argparse.ArgumentParser):
    """Argument parser raising instead of exiting on bad input."""

    def error(self, message: str) -> NoReturn:  # noqa: D102
        if "invalid choice" in message and "command" in message:
            raise UnknownCommand(message)
        raise BadFlag(message)


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    common.add_argument("--config", type=Path, help="key=value or TOML configuration")
    return common


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    g = p.add_argument_group("training")
    g.add_argument("--seed", type=int, dest="train.seed")
    g.add_argument("--batch-size", type=int, dest="train.batch_size")
    g.add_argument("--max-epochs", type=int, dest="train.max_epochs")
    g.add_argument("--initial-lr", type=float, dest="train.initial_lr")
    g.add_argument("--plateau-patience", type=int, dest="train.plateau_patience")
    g.add_argument("--plateau-factor", type=float, dest="train.plateau_factor")
    g.add_argument("--early-stop-patience", type=int, dest="train.early_stop_patience")
    g.add_argument(
        "--augmentation",
        action=argparse.BooleanOptionalAction,
        dest="train.augmentation",
        help="random horizontal and vertical flips",
    )
    g.add_argument("--target-label", dest="train.target_label", help="default smoke")
    g.add_argument("--bands", dest="train.bands", help="comma separated band subset")
    g.add_argument(
        "--normalization",
        choices=("per_band_minmax", "fixed_unit"),
        dest="train.normalization",
    )
    m = p.add_argument_group("model")
    m.add_argument(
        "--with-inamp",
        action=argparse.BooleanOptionalAction,
        dest="model.with_inamp",
        help="place InAmp in front of the backbone (default on)",
    )
    m.add_argument("--block-widths", dest="model.block_widths", help="e.g. 32,64,128")
    m.add_argument("--out-channels", type=int, dest="inamp.out_channels")
    m.add_argument("--layers", type=int, dest="inamp.n_one_by_one_layers")
    m.add_argument("--sa-kernel", type=int, dest="inamp.sa_kernel")
    m.add_argument("--ca-reduction", type=int, dest="inamp.ca_reduction")
    m.add_argument("--attention", choices=sorted(ATTENTION), help="default ca_sa")


def build_parser() -> Parser:
    """Parser with one sub-command per operation."""
    common = _common()
    parser = Parser(prog="inamp", description="Input amplification experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate synthetic data")
    p.add_argument("--out", type=Path, default=Path("data"), help="output directory")
    p.add_argument("--spec", type=Path, help="key=value generator spec file")
    p.add_argument("--seed", type=int, dest="data.seed")
    p.add_argument("--per-label", type=int, dest="data.per_label")
    p.add_argument("--size", type=int, dest="data.size")
    p.add_argument("--noise-sigma", type=float, dest="data.noise_sigma")
    p.add_argument("--bands", dest="data.bands", help="comma separated band names")
    p.add_argument("--labels", dest="data.labels", help="comma separated labels")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train one classifier")
    _train_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--target-label", help="default: the training target")
    p.add_argument("--seed", type=int, help="split seed, default: the training seed")
    p.add_argument("--out", type=Path, help="write metrics.txt and predictions.csv")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train one model per variant")
    _train_flags(p)
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--workers", type=int, default=1, help="parallel processes")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("compare", parents=[common], help="baseline without/with InAmp")
    _train_flags(p)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("viz", parents=[common], help="export pseudo bands as graymaps")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True, help="MSIB image")
    p.add_argument("--bands", help="comma separated channel indices, default all")
    p.add_argument("--mask", type=Path, help="plume mask, default <image>.mask.msib")
    p.add_argument("--out", type=Path, default=Path("viz"), help="output directory")
    p.set_defaults(handler=cmd_viz)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference checks")
    p.add_argument("--module", choices=sorted(GROUPS), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("index", parents=[common], help="spectral index graymap")
    p.add_argument("--image", type=Path, required=True, help="MSIB image")
    p.add_argument("--kind", choices=sorted(INDICES), required=True)
    p.add_argument("--band-map", help="role=band pairs, e.g. swir1=swir2")
    p.add_argument("--out", type=Path, help="graymap path, default <image>.<kind>.pgm")
    p.set_defaults(handler=cmd_index)

    p = sub.add_parser("import", parents=[common], help="convert .npy arrays to MSIB")
    p.add_argument("--src", type=Path, required=True, help="<label>/<name>.npy tree")
    p.add_argument("--bands", required=True, help="comma separated band names")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(handler=cmd_import)
    return parser


def _overrides(args: argparse.Namespace, prefixes: Sequence[str]) -> Dict[str, Any]:
    return {
        k: v
        for k, v in vars(args).items()
        if v is not None and k.split(".", 1)[0] in prefixes
    }


def _experiment(
    args: argparse.Namespace,
) -> Tuple[ClassifierConfig, Splits, TrainConfig]:
    overrides = _overrides(args, ("train", "model", "inamp"))
    if args.attention is not None:
        ca, sa = ATTENTION[args.attention]
        overrides["inamp.use_channel_attention"] = ca
        overrides["inamp.use_spatial_attention"] = sa
    cfg = layered(overrides, args.config)
    train_cfg = TrainConfig.from_config(_section(cfg, "train"))
    splits = load_splits(
        args.data, train_cfg.seed, train_cfg.bands, train_cfg.normalization,
    )
    splits.target_index(train_cfg.target_label)
    assert isinstance(cfg, ConfigurationSet)
    cfg.update(
        {
            "model.input_bands": len(splits.bands),
            "model.n_classes": len(splits.labels),
            "model.input_size": int(splits.train.x.shape[1]),
            "model.bands": splits.bands,
        },
    )
    model_cfg = ClassifierConfig.from_config(cfg)
    return model_cfg, splits, train_cfg


def _section(cfg: Configuration, name: str) -> Configuration:
    sub = cfg.get(name)
    return sub if isinstance(sub, Configuration) else Configuration({})


def cmd_gen_data(args: argparse.Namespace) -> int:
    """Generate a synthetic dataset."""
    overrides = {k[len("data.") :]: v for k, v in _overrides(args, ("data",)).items()}
    cfg = layered(overrides, args.config, "data")
    if args.spec is not None:
        cfg = ConfigurationSet(cfg, config_from_kv(args.spec, read_from_file=True))
    spec = SyntheticSpec.from_config(cfg)
    manifest = gen_synthetic(spec, args.out)
    print("wrote %d images to %s" % (len(manifest), args.out))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Train one classifier and write its checkpoint and report."""
    model_cfg, splits, train_cfg = _experiment(args)
    args.out.mkdir(parents=True, exist_ok=True)
    _, report = run_experiment(model_cfg, splits, train_cfg, args.out / CHECKPOINT)
    write_report(report, args.out)
    print(dump_kv({"test." + k: v for k, v in report.test.items()}), end="")
    return 0


def _metadata_config(metadata: Mapping[str, str], prefix: str) -> Configuration:
    keys = {k: v for k, v in metadata.items() if k.startswith(prefix + ".")}
    return _section(config_from_dict(keys), prefix)


def cmd_eval(args: argparse.Namespace) -> int:
    """Evaluate a checkpoint on one split of a dataset."""
    model, metadata = load_classifier(args.checkpoint)
    train_cfg = TrainConfig.from_config(_metadata_config(metadata, "train"))
    seed = train_cfg.seed if args.seed is None else args.seed
    splits = load_splits(args.data, seed, model.cfg.bands, train_cfg.normalization)
    labels = as_list(metadata.get("data.labels", ""))
    if labels and labels != splits.labels:
        raise ConfigError("checkpoint labels %s differ from data %s"
                          % (labels, splits.labels))
    if args.split == "all":
        parts = [splits.train, splits.val, splits.test]
        split = Split(
            np.concatenate([s.x for s in parts]), np.concatenate([s.y for s in parts]),
        )
    else:
        split = getattr(splits, args.split)
    target = splits.target_index(args.target_label or train_cfg.target_label)
    result = evaluate(model, split, target, splits.labels)
    text = format_kv(result.metrics, result.cm)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "metrics.txt").write_text(text, encoding="utf-8")
        rows = ["index,true,predicted"] + [
            "%d,%d,%d" % (i, t, p)
            for i, (t, p) in enumerate(zip(split.y, result.predictions))
        ]
        (args.out / "predictions.csv").write_text("\n".join(rows) + "\n",
                                                  encoding="utf-8")
    print(text, end="")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    """Train every variant on one ablation axis."""
    if args.workers < 1:
        raise BadFlag("--workers must be >= 1")
    model_cfg, splits, train_cfg = _experiment(args)
    table = ablate(model_cfg, splits, train_cfg, args.axis, args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / ("ablation_%s.csv" % args.axis)).write_text(table.to_csv(),
                                                            encoding="utf-8")
    print(table.to_csv(), end="")
    print("best: %s" % table.rows[table.best()][0])
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    """Train the baseline without and with InAmp."""
    model_cfg, splits, train_cfg = _experiment(args)
    table = compare(model_cfg, splits, train_cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "compare.csv").write_text(table.to_csv(), encoding="utf-8")
    print(table.to_csv(), end="")
    return 0


def cmd_viz(args: argparse.Namespace) -> int:
    """Export pseudo bands of one image and report their plume-core contrast."""
    model, metadata = load_classifier(args.checkpoint)
    if model.inamp is None or model.cfg.inamp is None:
        raise ConfigError("%s has no InAmp module" % args.checkpoint)
    train_cfg = TrainConfig.from_config(_metadata_config(metadata, "train"))
    img = read_msib(args.image)
    if model.cfg.bands:
        img = select_bands(img, model.cfg.bands)
    img = normalize(img, train_cfg.normalization)
    out = inamp_forward(tensor(img.values[None]), model.inamp, model.cfg.inamp)
    channels = out.shape[3]
    indices = as_list(args.bands, int) if args.bands else list(range(channels))
    paths = export_pseudo_bands(out, indices, args.out)
    mask_file = args.mask or mask_path(args.image)
    mask = read_msib(mask_file).values[:, :, 0] if Path(mask_file).exists() else None
    for i, path in zip(indices, paths):
        if mask is None:
            print("%s" % path)
        else:
            contrast = core_contrast(out.data[0, :, :, i], mask)
            print("%s contrast=%.3f" % (path, contrast))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Compare analytic and finite-difference gradients."""
    errors = run_checks(args.module, args.seed)
    for name, err in errors.items():
        print("%-10s %.3e %s" % (name, err, "ok" if err < TOLERANCE else "FAIL"))
    worst = max(errors.values())
    print("max relative error %.3e" % worst)
    return 0 if worst < TOLERANCE else 2


def cmd_index(args: argparse.Namespace) -> int:
    """Write a spectral index map as a graymap, -1 -> 0 and 1 -> 255."""
    img = read_msib(args.image)
    band_map = dict(
        parse_kv_line(pair) for pair in as_list(args.band_map) if args.band_map
    )
    values = spectral_index(img, args.kind, band_map)
    out = args.out or Path(args.image).with_suffix(".%s.pgm" % args.kind)
    write_pgm(out, np.rint((values + 1.0) * 127.5).astype(np.uint8))
    print("%s min=%.4f mean=%.4f max=%.4f"
          % (out, values.min(), values.mean(), values.max()))
    return 0


def cmd_import(args: argparse.Namespace) -> int:
    """Convert a tree of .npy arrays into an MSIB dataset."""
    manifest = import_arrays(args.src, as_list(args.bands), args.out)
    print("imported %d images to %s" % (len(manifest), args.out))
    return 0


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Configure the root logger on standard error."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger().setLevel(level)


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, dispatch the command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except (UnknownCommand, BadFlag) as err:
        parser.print_usage(sys.stderr)
        print("inamp: error: %s" % err, file=sys.stderr)
        return 1
    except SystemExit as err:
        return int(err.code or 0)
    setup_logging(args.verbose, args.quiet)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except (UnknownCommand, BadFlag) as err:
        parser.print_usage(sys.stderr)
        print("inamp: error: %s" % err, file=sys.stderr)
        return 1
    except (InAmpError, OSError) as err:
        logger.error("%s", err)
        return 1
    except Exception:
        logger.exception("internal error")
        return 2


def main() -> None:
    """Console script entry point."""
    sys.exit(run())
