"""Command-line entry point: ``dann <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
divergence. Training options are resolved as flags > ``--config`` file >
built-in defaults; the config file holds plain ``key=value`` lines whose keys
are the long flag names (``mu0``, ``lambda-fixed``, ...).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import analysis
from .checkpoint import CheckpointFormatError, load_model, save_model
from .datasets import (DomainDataset, IdxFormatError, default_input_scale, load_background_directory,
                       load_dataset, make_mnistm, make_shifted_toy, mean_subtract,
                       procedural_backgrounds, save_dataset)
from .engine import TrainingDiverged, epochs_path, evaluate, train, train_semi_supervised
from .network import PRESETS, build_network
from .optim import ADVERSARIAL_MODES, DEFAULT_MAX_NORM, TrainConfig
from .tensor import ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _optional_float(text):
    return None if text.lower() in ("none", "") else float(text)


def _max_norm(text):
    if text.lower() in ("on", "true", "yes"):
        return DEFAULT_MAX_NORM
    if text.lower() in ("off", "false", "no"):
        return None
    return _optional_float(text)


def _optional_int(text):
    return None if text.lower() in ("none", "") else int(text)


def _bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# flag name -> (TrainConfig field, parser)
CONFIG_FLAGS = {
    "epochs": ("epochs", int),
    "batch-size": ("batch_size", int),
    "gamma": ("gamma", float),
    "mu0": ("mu0", float),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "momentum": ("momentum", float),
    "lambda-fixed": ("lambda_fixed", _optional_float),
    "adversarial-mode": ("adversarial_mode", str),
    "max-norm": ("max_norm", _max_norm),
    "dropout-keep": ("dropout_keep", _optional_float),
    "steps-per-epoch": ("steps_per_epoch", _optional_int),
    "per-domain-mean": ("per_domain_mean", _bool),
    "seed": ("seed", int),
}
# non-TrainConfig keys a config file may also set
EXTRA_KEYS = {"preset": str, "domain-head": str, "no-mean-subtract": _bool, "input-scale": float}


def read_config(path):
    """Parse ``key=value`` lines; ``#`` starts a comment. Returns a dict keyed by flag name."""
    values = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("_", "-")
            if key not in CONFIG_FLAGS and key not in EXTRA_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            conv = CONFIG_FLAGS[key][1] if key in CONFIG_FLAGS else EXTRA_KEYS[key]
            try:
                values[key] = conv(value)
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def resolve_train_options(args):
    """Merge defaults, config file and flags into ``(TrainConfig, extras)``."""
    from_file = read_config(args.config) if args.config else {}
    chosen = {}
    for flag, (name, _) in CONFIG_FLAGS.items():
        flag_value = getattr(args, name)
        if flag_value is not None:
            chosen[name] = flag_value
        elif flag in from_file:
            chosen[name] = from_file[flag]
    if getattr(args, "lambda_fixed_none", False):
        chosen["lambda_fixed"] = None
    try:
        cfg = TrainConfig(**chosen)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    extras = {}
    for key in EXTRA_KEYS:
        attr = key.replace("-", "_")
        flag_value = getattr(args, attr)
        extras[attr] = flag_value if flag_value not in (None, False) else from_file.get(key, flag_value)
    if extras["preset"] is None:
        extras["preset"] = "mnist-lenet"
    if extras["preset"] not in PRESETS:
        raise UsageError(f"unknown preset {extras['preset']!r}; choose from {sorted(PRESETS)}")
    if extras["domain_head"] not in (None, "large"):
        raise UsageError(f"domain-head must be 'large', got {extras['domain_head']!r}")
    return cfg, extras


def _align_channels(ds: DomainDataset, channels):
    if ds.images.ndim != 4 or ds.images.shape[1] == channels:
        return ds
    if ds.images.shape[1] != 1:
        raise ShapeError(f"cannot turn {ds.images.shape[1]} channels into {channels}")
    return replace(ds, images=np.repeat(ds.images, channels, axis=1))


def _align_pair(a: DomainDataset, b: DomainDataset):
    if a.images.ndim == 4 and b.images.ndim == 4:
        c = max(a.images.shape[1], b.images.shape[1])
        a, b = _align_channels(a, c), _align_channels(b, c)
    if a.sample_shape != b.sample_shape:
        raise ShapeError(f"source samples {a.sample_shape} vs target samples {b.sample_shape}")
    return a, b


def _prepare(ds, mean, scale=1.0):
    if mean is None and scale == 1.0:
        return ds
    return mean_subtract(ds, np.zeros(ds.sample_shape) if mean is None else mean, scale)[0]


def _balanced(source, target, samples):
    if samples is not None:
        if samples > min(len(source), len(target)):
            raise ValueError(f"--samples {samples} exceeds the smaller set ({min(len(source), len(target))})")
        source, target = source.subset(np.arange(samples)), target.subset(np.arange(samples))
    return source, target


# ---------------------------------------------------------------- subcommands


def cmd_train(args):
    cfg, extras = resolve_train_options(args)
    source = load_dataset(args.source, role="source")
    target = load_dataset(args.target, role="target")
    if source.labels is None:
        raise ValueError(f"{args.source}: source data needs a label file")
    source, target = _align_pair(source, target)
    labeled = None
    if args.semi_labeled_target:
        labeled = load_dataset(args.semi_labeled_target, role="target")
        if labeled.labels is None:
            raise ValueError(f"{args.semi_labeled_target}: labeled target data needs a label file")
        labeled = _align_channels(labeled, target.sample_shape[0]) if target.images.ndim == 4 else labeled
    scale = extras["input_scale"]
    if scale is None:
        scale = default_input_scale(source)
    mean = source_mean = None
    if not extras["no_mean_subtract"]:
        # source mean for both domains; per-domain mode gives each its own and
        # keeps the target mean for evaluation
        mean = source_mean = source.images.mean(axis=0)
        if cfg.per_domain_mean:
            mean = target.images.mean(axis=0)
    source = _prepare(source, source_mean, scale)
    target = _prepare(target, mean, scale)
    if labeled is not None:
        labeled = _prepare(labeled, mean, scale)
    num_classes = max(source.num_classes, labeled.num_classes if labeled is not None else 0)
    if target.labels is not None:
        num_classes = max(num_classes, target.num_classes)
    net = build_network(extras["preset"], source.sample_shape, num_classes, seed=cfg.seed,
                        domain_head=extras["domain_head"], dropout_keep=cfg.dropout_keep)
    net.meta["input_scale"] = scale
    stream = open(args.report, "w", newline="") if args.report else None
    try:
        if labeled is not None:
            net, report = train_semi_supervised(net, source, labeled, target, cfg, step_stream=stream)
        else:
            net, report = train(net, source, target, cfg, step_stream=stream)
    finally:
        if stream is not None:
            stream.close()
    if args.report:
        with open(epochs_path(args.report), "w", newline="") as fh:
            report.write_epochs_csv(fh)
    save_model(net, args.out, mean=mean)
    last = report.epochs[-1] if report.epochs else None
    summary = f"saved {args.out} after {len(report.steps)} steps ({cfg.lambda_mode} lambda)"
    if last is not None:
        summary += f"; source error {last.source_error:.4f}, domain accuracy {last.domain_accuracy:.4f}"
        if last.target_accuracy is not None:
            summary += f", target accuracy {last.target_accuracy:.4f}"
    print(summary)
    return EXIT_OK


def _load_eval_data(args, role="target"):
    spec = f"{args.data},{args.labels}" if args.labels else args.data
    return load_dataset(spec, role=role)


def _model_input(ds, net, mean):
    shape = tuple(net.meta["input_shape"])
    if ds.images.ndim == 4 and len(shape) == 3:
        ds = _align_channels(ds, shape[0])
    if ds.sample_shape != shape:
        raise ShapeError(f"data samples {ds.sample_shape} do not match the network input {shape}")
    return _prepare(ds, mean, net.meta.get("input_scale", 1.0))


def cmd_eval(args):
    net, mean = load_model(args.checkpoint)
    ds = _model_input(_load_eval_data(args), net, mean)
    if ds.labels is None:
        raise ValueError("eval needs class labels (give --labels or a labeled prefix)")
    print(f"accuracy {evaluate(net, ds):.4f} on {len(ds)} samples")
    return EXIT_OK


def cmd_make_mnistm(args):
    digits = load_dataset(args.digits, role="source")
    if digits.images.ndim != 4:
        raise ShapeError(f"{args.digits}: digits must be images, got samples of shape {digits.sample_shape}")
    extents = digits.images.shape[2:]
    count = args.count if args.count is not None else len(digits)
    if args.backgrounds:
        pool = load_background_directory(args.backgrounds, count, extents, seed=args.seed)
    else:
        pool = procedural_backgrounds(count, extents, seed=args.seed)
    out = make_mnistm(digits, pool, seed=args.seed)
    paths = save_dataset(out, args.out)
    print("wrote " + ", ".join(p for p in paths if p))
    return EXIT_OK


def cmd_make_toy(args):
    source, target = make_shifted_toy(args.n, seed=args.seed)
    written = save_dataset(source, f"{args.out}-source") + save_dataset(target, f"{args.out}-target")
    print("wrote " + ", ".join(p for p in written if p))
    return EXIT_OK


def cmd_export_features(args):
    net, mean = load_model(args.checkpoint)
    splits = []
    for role, specs in (("source", args.source or []), ("target", args.target or [])):
        for i, spec in enumerate(specs):
            name = role if len(specs) == 1 else f"{role}{i}"
            splits.append((name, _model_input(load_dataset(spec, role=role), net, mean)))
    if not splits:
        raise UsageError("export-features needs at least one --source or --target")
    rows = analysis.export_features(net, splits, args.out)
    print(f"wrote {rows} rows to {args.out}")
    return EXIT_OK


def cmd_distance(args):
    net, mean = load_model(args.checkpoint)
    source = _model_input(load_dataset(args.source, role="source"), net, mean)
    target = _model_input(load_dataset(args.target, role="target"), net, mean)
    source, target = _balanced(source, target, args.samples)
    est = analysis.proxy_hdh_distance(net.features(source.images), net.features(target.images),
                                      seed=args.seed)
    print(f"domain classifier accuracy {est.domain_classifier_accuracy:.4f}")
    print(f"proxy distance {est.proxy_distance:.4f}")
    if source.labels is not None:
        err = 1.0 - evaluate(net, source)
        print(analysis.bound_report(err, est))
        print(analysis.adaptation_advisory(err, 1.0 - est.domain_classifier_accuracy))
    return EXIT_OK


def cmd_gap(args):
    print(analysis.gap_coverage(args.source_only, args.method, args.train_on_target))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="dann", description="Domain-adversarial training by gradient reversal.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("train", help="train a network on labeled source and unlabeled target data")
    t.add_argument("--source", required=True, help="labeled source data: PREFIX or IMAGES,LABELS")
    t.add_argument("--target", required=True, help="target data: PREFIX or IMAGES[,LABELS]")
    t.add_argument("--semi-labeled-target", help="labeled target samples for semi-supervised mode")
    t.add_argument("--preset", choices=sorted(PRESETS), default=None, help="architecture (default mnist-lenet)")
    t.add_argument("--domain-head", choices=["large"], default=None,
                   help="use the x->1024->1024->2 domain classifier")
    t.add_argument("--no-mean-subtract", action="store_true", default=None,
                   help="skip per-pixel mean subtraction")
    t.add_argument("--input-scale", type=float,
                   help="multiply inputs after mean subtraction (default 1/255 for images, 1 otherwise)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--gamma", type=float)
    t.add_argument("--mu0", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--momentum", type=float)
    lam = t.add_mutually_exclusive_group()
    lam.add_argument("--lambda-fixed", type=float, help="constant lambda instead of the schedule")
    lam.add_argument("--lambda-scheduled", dest="lambda_fixed_none", action="store_true",
                     help="use the lambda schedule even if the config file fixes lambda")
    t.add_argument("--adversarial-mode", choices=ADVERSARIAL_MODES)
    t.add_argument("--max-norm", type=_max_norm, help=f"radius, or 'on' for {DEFAULT_MAX_NORM}")
    t.add_argument("--dropout-keep", type=float)
    t.add_argument("--steps-per-epoch", type=int)
    t.add_argument("--per-domain-mean", action="store_true", default=None)
    t.add_argument("--seed", type=int)
    t.add_argument("--config", help="file of key=value training options")
    t.add_argument("--out", required=True, help="checkpoint path (architecture goes to OUT.json)")
    t.add_argument("--report", help="per-step CSV path; per-epoch CSV is written next to it")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="label accuracy of a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="PREFIX, IMAGES,LABELS or IMAGES (with --labels)")
    e.add_argument("--labels")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("make-mnistm", help="blend digits over color backgrounds")
    m.add_argument("--digits", required=True)
    src = m.add_mutually_exclusive_group(required=True)
    src.add_argument("--backgrounds", help="directory of photos to crop patches from")
    src.add_argument("--procedural", action="store_true", help="use generated texture patches")
    m.add_argument("--count", type=int, help="background patches in the pool (default: one per digit)")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, help="output prefix")
    m.set_defaults(func=cmd_make_mnistm)

    y = sub.add_parser("make-toy", help="write the shifted two-Gaussian toy domains")
    y.add_argument("--n", type=int, default=2000, help="samples per domain")
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True, help="prefix; writes OUT-source-* and OUT-target-*")
    y.set_defaults(func=cmd_make_toy)

    x = sub.add_parser("export-features", help="write feature-extractor outputs as CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--source", action="append", help="source data (repeatable)")
    x.add_argument("--target", action="append", help="target data (repeatable)")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_features)

    d = sub.add_parser("distance", help="proxy H-delta-H distance between held-out domains")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--source", required=True)
    d.add_argument("--target", required=True)
    d.add_argument("--samples", type=int, help="use the first N samples of each domain")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_distance)

    g = sub.add_parser("gap", help="share of the source-only to train-on-target gap covered")
    g.add_argument("source_only", type=float)
    g.add_argument("method", type=float)
    g.add_argument("train_on_target", type=float)
    g.set_defaults(func=cmd_gap)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dann {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"dann {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (IdxFormatError, CheckpointFormatError, ShapeError, ValueError, OSError) as exc:
        print(f"dann {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
