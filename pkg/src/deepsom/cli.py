"""Command-line front end.

Subcommands map onto the run phases: ``pretrain`` builds and runs the
competitive phase, ``assign-labels`` calibrates a checkpoint, ``train``
runs the full protocol, ``eval`` measures a checkpoint, and ``export``
renders figure data.  Every subcommand that writes artifacts also writes a
manifest echoing the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .aplearn import assign_labels, warm_cache
from .checkpoint import (
    checkpoint_from_network,
    load_checkpoint,
    network_from_checkpoint,
    save_checkpoint,
)
from .dataio import take_block
from .errors import ConfigurationError, DeepSomError
from .exports import (
    feature_atlas,
    optimal_stimulus,
    render_usage,
    to_gray,
    usage_histogram,
    write_pgm,
)
from .harness import (
    CURVE_HEADER,
    RunConfig,
    evaluate,
    load_datasets,
    make_config,
    parse_config_text,
    pretrain_only,
    run_experiment,
    write_manifest,
)

# maps dest names that differ from RunConfig field names
_FLAG_FIELDS = {
    "blocks": "n_blocks",
}

_CONFIG_FLAGS = (
    ("--seed", int, "base random seed"),
    ("--r", float, "layer decay parameter"),
    ("--beta", float, "advance/target blend weight"),
    ("--rho-base", float, "supervised base learning rate"),
    ("--blocks", int, "number of learning blocks"),
    ("--block-size", int, "training samples per block"),
    ("--checkpoint-in", str, "checkpoint to start from"),
    ("--checkpoint-out", str, "checkpoint to write"),
    ("--out-dir", str, "artifact directory"),
    ("--train-images", str, "training images (IDX)"),
    ("--train-labels", str, "training labels (IDX)"),
    ("--test-images", str, "test images (IDX)"),
    ("--test-labels", str, "test labels (IDX)"),
)


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key=value config file")
    shared.add_argument("--debug", action="store_true", help="log every trial")
    for flag, typ, help_text in _CONFIG_FLAGS:
        shared.add_argument(flag, type=typ, help=help_text)

    parser = argparse.ArgumentParser(
        prog="deepsom",
        description="Deep self-organizing-map networks with advance propagation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain", parents=[shared], help="competitive phase only")
    sub.add_parser("assign-labels", parents=[shared], help="calibrate a checkpoint")
    sub.add_parser("train", parents=[shared], help="full protocol")
    sub.add_parser("eval", parents=[shared], help="error rate of a checkpoint")
    export = sub.add_parser("export", parents=[shared], help="render figure data")
    export.add_argument(
        "what", choices=("atlas", "usage", "stimulus", "curves"), help="artifact kind"
    )
    export.add_argument("--layer", type=int, default=1, help="1-based layer index")
    export.add_argument("--module", type=int, default=0, help="module index in the layer")
    export.add_argument("--neuron", type=int, default=0, help="neuron index in the module")
    export.add_argument("--run-dir", help="run directory holding curves.csv")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Flags beat config-file values beat defaults."""
    file_values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        file_values = parse_config_text(path.read_text())
    overrides = {}
    for flag, _, _ in _CONFIG_FLAGS:
        dest = flag.lstrip("-").replace("-", "_")
        value = getattr(args, dest)
        if value is not None:
            overrides[_FLAG_FIELDS.get(dest, dest)] = value
    return make_config(file_values, overrides)


def _cmd_pretrain(config: RunConfig) -> int:
    result = pretrain_only(config)
    print(f"checkpoint written: {result}")
    return 0


def _cmd_assign_labels(config: RunConfig) -> int:
    if not config.checkpoint_in:
        raise ConfigurationError("assign-labels needs --checkpoint-in")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.txt", config)
    kernels = config.kernel_params()
    train, _ = load_datasets(config)
    network = network_from_checkpoint(load_checkpoint(config.checkpoint_in))
    subset = take_block(train, config.block_size, config.seed, 0, config.redraw_blocks)
    calibration = train.subset(subset.subset_indices)
    label_map = assign_labels(network, calibration, kernels, config.n_classes)
    cache = warm_cache(network, calibration, label_map, kernels)
    cache.sample_indices[:] = subset.subset_indices[cache.sample_indices]
    target = Path(config.checkpoint_out) if config.checkpoint_out else out / "labeled.dsom"
    save_checkpoint(
        target, checkpoint_from_network(network, label_map, cache.sample_indices)
    )
    print(f"checkpoint written: {target}")
    return 0


def _cmd_train(config: RunConfig) -> int:
    result = run_experiment(config)
    final = result.metrics[-1]
    print(f"error_rate={final.error_rate:.6f}")
    print(f"curves: {result.curves_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_eval(config: RunConfig) -> int:
    if not config.checkpoint_in:
        raise ConfigurationError("eval needs --checkpoint-in")
    stored = load_checkpoint(config.checkpoint_in)
    if stored.label_map is None:
        raise ConfigurationError(
            f"{config.checkpoint_in} has no label map; run assign-labels first"
        )
    network = network_from_checkpoint(stored)
    _, validation = load_datasets(config)
    error = evaluate(network, validation, stored.label_map, config.kernel_params())
    print(f"error_rate={error:.6f}")
    return 0


def _cmd_export(config: RunConfig, args: argparse.Namespace) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "curves":
        if not args.run_dir:
            raise ConfigurationError("export curves needs --run-dir")
        source = Path(args.run_dir) / "curves.csv"
        if not source.is_file():
            raise ConfigurationError(f"no curves.csv under {args.run_dir}")
        text = source.read_text()
        if not text.startswith(CURVE_HEADER + "\n"):
            raise ConfigurationError(f"{source} is not a curve CSV (bad header)")
        target = out / "curves.csv"
        target.write_text(text)
        print(f"written: {target}")
        return 0
    if not config.checkpoint_in:
        raise ConfigurationError(f"export {args.what} needs --checkpoint-in")
    stored = load_checkpoint(config.checkpoint_in)
    network = network_from_checkpoint(stored)
    if args.what == "atlas":
        layer, module = args.layer - 1, args.module
        if not (0 <= layer < network.n_layers):
            raise ConfigurationError(f"no layer {args.layer} in this network")
        if not (0 <= module < len(network.grids[layer])):
            raise ConfigurationError(f"no module {module} in layer {args.layer}")
        target = out / f"atlas_layer{args.layer}m{module}.pgm"
        write_pgm(target, feature_atlas(network.grids[layer][module]))
    elif args.what == "usage":
        _, validation = load_datasets(config)
        counts = usage_histogram(network, validation.images, config.kernel_params())
        spec = network.last_spec
        target = out / "usage.pgm"
        write_pgm(target, render_usage(counts, spec.som_rows, spec.som_cols))
        lines = ["neuron,count"] + [f"{i},{int(c)}" for i, c in enumerate(counts)]
        (out / "usage_counts.csv").write_text("\n".join(lines) + "\n")
    else:
        image = optimal_stimulus(network, args.layer - 1, args.module, args.neuron)
        target = out / f"stimulus_l{args.layer}m{args.module}n{args.neuron}.pgm"
        write_pgm(target, to_gray(image))
    print(f"written: {target}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        if args.command == "pretrain":
            return _cmd_pretrain(config)
        if args.command == "assign-labels":
            return _cmd_assign_labels(config)
        if args.command == "train":
            return _cmd_train(config)
        if args.command == "eval":
            return _cmd_eval(config)
        return _cmd_export(config, args)
    except DeepSomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
