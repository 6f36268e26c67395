"""Experiment orchestration: run configs, learning blocks, curves, artifacts.

A run is fully described by its manifest (a sorted ``key=value`` echo of the
resolved config).  Replaying a manifest with the same data files reproduces
the checkpoints bit for bit; wall-clock seconds in the curve CSV are the one
field that varies unless a fake clock is injected.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .aplearn import (
    AdvanceCache,
    ApParams,
    LabelMap,
    assign_labels,
    learning_trial,
    warm_cache,
)
from .checkpoint import (
    checkpoint_from_network,
    load_checkpoint,
    network_from_checkpoint,
    save_checkpoint,
)
from .dataio import Dataset, SampleStream, load_idx, take_block
from .errors import ConfigurationError
from .exports import feature_atlas, render_usage, usage_entropy, usage_histogram, write_pgm
from .pretrain import PretrainSchedule, pretrain
from .somcore import KernelParams
from .topology import DeepSomNetwork, reference_layer_specs

logger = logging.getLogger(__name__)

CURVE_HEADER = "block,error_rate,ap_invocations,seconds"


@dataclass
class RunConfig:
    """One experiment, fully resolved.  Defaults reproduce the reference

    protocol: 10,000-iteration staggered pre-training, then 20 blocks of
    10,000 supervised trials each, validated on 10,000 held-out samples.
    """

    train_images: str = "data/train-images-idx3-ubyte"
    train_labels: str = "data/train-labels-idx1-ubyte"
    test_images: str = "data/t10k-images-idx3-ubyte"
    test_labels: str = "data/t10k-labels-idx1-ubyte"
    out_dir: str = "runs/mnist"
    checkpoint_in: str = ""
    checkpoint_out: str = ""
    seed: int = 0
    block_size: int = 10_000
    n_blocks: int = 20
    validation_size: int = 10_000
    n_classes: int = 10
    redraw_blocks: bool = False
    rho_base: float = 0.2
    beta: float = 0.4
    r: float = 0.7
    sigma_out: float = 0.8
    sigma_update: float = 0.4
    pretrain_iterations: int = 10_000
    pretrain_rho_start: float = 1.0
    pretrain_rho_end: float = 0.0
    pretrain_sigma_start: float = 3.5
    pretrain_sigma_end: float = 0.0
    export_atlas: bool = True
    export_usage: bool = True
    log_every: int = 1000

    def kernel_params(self) -> KernelParams:
        return KernelParams(sigma_out=self.sigma_out, sigma_update=self.sigma_update)

    def ap_params(self) -> ApParams:
        return ApParams(
            rho_base=self.rho_base,
            beta=self.beta,
            r=self.r,
            sigma_update=self.sigma_update,
        )

    def schedule(self, n_layers: int) -> PretrainSchedule:
        if n_layers == 1:
            return PretrainSchedule(
                total_iterations=self.pretrain_iterations,
                layer_starts=(0,),
                rho_start=self.pretrain_rho_start,
                rho_end=self.pretrain_rho_end,
                sigma_start=self.pretrain_sigma_start,
                sigma_end=self.pretrain_sigma_end,
            )
        return PretrainSchedule.staggered(
            n_layers,
            self.pretrain_iterations,
            rho_start=self.pretrain_rho_start,
            rho_end=self.pretrain_rho_end,
            sigma_start=self.pretrain_sigma_start,
            sigma_end=self.pretrain_sigma_end,
        )


def _field_types() -> dict:
    defaults = RunConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(RunConfig)}


def _coerce(name: str, raw, target: type):
    if target is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("true", "1", "yes", "on"):
            return True
        if text in ("false", "0", "no", "off"):
            return False
        raise ConfigurationError(f"{name} expects a boolean, got {raw!r}")
    try:
        return target(raw)
    except (TypeError, ValueError):
        raise ConfigurationError(
            f"{name} expects {target.__name__}, got {raw!r}"
        ) from None


def parse_config_text(text: str) -> dict:
    """``key=value`` lines into a string dict.  ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(
                f"config line {lineno} is not key=value: {line.strip()!r}"
            )
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def make_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then config-file values, then explicit flag overrides."""
    types = _field_types()
    resolved = {}
    for source in (file_values or {}), (overrides or {}):
        for key, raw in source.items():
            if key not in types:
                raise ConfigurationError(f"unknown config key {key!r}")
            resolved[key] = _coerce(key, raw, types[key])
    return RunConfig(**resolved)


def manifest_text(config: RunConfig) -> str:
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def write_manifest(path, config: RunConfig) -> None:
    Path(path).write_text(manifest_text(config))


@dataclass
class BlockMetrics:
    """What one learning block produced."""

    block: int
    error_rate: float
    trials: int
    ap_invocations: int
    seconds: float


def curve_line(m: BlockMetrics) -> str:
    return f"{m.block},{m.error_rate:.6f},{m.ap_invocations},{m.seconds:.3f}"


def write_curves(path, rows) -> None:
    lines = [CURVE_HEADER] + [curve_line(m) for m in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_curves(path) -> list:
    """Curve CSV back into BlockMetrics rows."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CURVE_HEADER:
        raise ConfigurationError(f"{path} is not a curve CSV (bad header)")
    rows = []
    for line in lines[1:]:
        block, err, ap, secs = line.split(",")
        rows.append(BlockMetrics(int(block), float(err), -1, int(ap), float(secs)))
    return rows


def thread_count() -> int:
    """Worker cap from DEEPSOM_THREADS; 0 or unset picks the CPU count."""
    raw = os.environ.get("DEEPSOM_THREADS", "0").strip()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(
            f"DEEPSOM_THREADS must be an integer, got {raw!r}"
        ) from None
    if n < 0:
        raise ConfigurationError(f"DEEPSOM_THREADS must be >= 0, got {n}")
    return n if n > 0 else (os.cpu_count() or 1)


def evaluate(
    network: DeepSomNetwork,
    dataset: Dataset,
    label_map: LabelMap,
    kernels: KernelParams,
    chunk: int = 512,
) -> float:
    """Error rate over a dataset; weights are only read.

    Chunks may be classified by parallel workers; the result is a sum of
    per-chunk error counts, so worker scheduling cannot change it.
    """
    spans = [(lo, min(lo + chunk, len(dataset))) for lo in range(0, len(dataset), chunk)]
    neuron_to_class = label_map.neuron_to_class

    def span_errors(span):
        lo, hi = span
        winners, _ = network.forward_batch(dataset.images[lo:hi], kernels)
        preds = neuron_to_class[winners[:, 0]]
        return int(np.count_nonzero(preds != dataset.labels[lo:hi]))

    workers = min(thread_count(), len(spans))
    if workers <= 1:
        wrong = sum(span_errors(s) for s in spans)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            wrong = sum(pool.map(span_errors, spans))
    return wrong / len(dataset)


def run_block(
    network: DeepSomNetwork,
    stream: SampleStream,
    validation: Dataset,
    cache: AdvanceCache,
    label_map: LabelMap,
    params: ApParams,
    kernels: KernelParams,
    block_index: int = 1,
    n_trials: int = 10_000,
    clock=time.perf_counter,
) -> BlockMetrics:
    """One learning block: supervised trials, then a full validation pass."""
    t0 = clock()
    ap_count = 0
    for _ in range(n_trials):
        image, label, idx = stream.next_sample()
        outcome = learning_trial(
            network, image, label, cache, label_map, params, kernels, sample_index=idx
        )
        ap_count += int(outcome.ap_invoked)
    error = evaluate(network, validation, label_map, kernels)
    return BlockMetrics(block_index, error, n_trials, ap_count, clock() - t0)


def load_datasets(config: RunConfig) -> tuple[Dataset, Dataset]:
    """Training set and the fixed validation subset of the test set."""
    train = load_idx(config.train_images, config.train_labels)
    test = load_idx(config.test_images, config.test_labels)
    if config.validation_size > len(test):
        raise ConfigurationError(
            f"validation_size {config.validation_size} exceeds the "
            f"{len(test)}-sample test set"
        )
    return train, test.subset(np.arange(config.validation_size))


def _restore_cache(cache_indices: np.ndarray, train: Dataset, n_classes: int) -> AdvanceCache:
    cache = AdvanceCache(n_classes)
    for c, idx in enumerate(cache_indices):
        cache.refresh(c, train.images[int(idx)], int(idx))
    return cache


def _save_atomic(path, cp) -> None:
    tmp = Path(path).with_name(Path(path).name + ".tmp")
    save_checkpoint(tmp, cp)
    os.replace(tmp, path)


def write_run_exports(
    network: DeepSomNetwork,
    validation: Dataset,
    kernels: KernelParams,
    out_dir,
    atlas: bool = True,
    usage: bool = True,
) -> None:
    out = Path(out_dir)
    if atlas:
        write_pgm(out / "atlas_layer1.pgm", feature_atlas(network.grids[0][0]))
    if usage:
        counts = usage_histogram(network, validation.images, kernels)
        spec = network.last_spec
        write_pgm(out / "usage.pgm", render_usage(counts, spec.som_rows, spec.som_cols))
        lines = ["neuron,count"] + [f"{i},{int(c)}" for i, c in enumerate(counts)]
        (out / "usage_counts.csv").write_text("\n".join(lines) + "\n")
        logger.info("usage entropy %.4f nats", usage_entropy(counts))


def _fresh_network(config: RunConfig, specs, image_shape, pad) -> DeepSomNetwork:
    if specs is None:
        return DeepSomNetwork.build(reference_layer_specs(), seed=config.seed)
    return DeepSomNetwork.build(
        specs, seed=config.seed, image_shape=image_shape, pad=pad
    )


def pretrain_only(
    config: RunConfig, specs=None, image_shape=(28, 28), pad=1
) -> Path:
    """Competitive phase alone; returns the written checkpoint path."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.txt", config)
    train, _ = load_datasets(config)
    network = _fresh_network(config, specs, image_shape, pad)
    stream = take_block(train, config.block_size, config.seed, 0, config.redraw_blocks)
    pretrain(
        network,
        stream,
        config.schedule(network.n_layers),
        config.kernel_params(),
        log_every=config.log_every,
    )
    target = Path(config.checkpoint_out) if config.checkpoint_out else out / "pretrained.dsom"
    _save_atomic(target, checkpoint_from_network(network))
    return target


@dataclass
class ExperimentResult:
    config: RunConfig
    metrics: list
    network: DeepSomNetwork
    label_map: LabelMap
    cache: AdvanceCache
    curves_path: Path
    checkpoint_path: Path


def run_experiment(
    config: RunConfig,
    specs=None,
    image_shape=(28, 28),
    pad=1,
    clock=time.perf_counter,
) -> ExperimentResult:
    """The whole protocol: competitive phase, calibration, learning blocks.

    ``specs=None`` builds the reference topology; explicit specs override
    it (the geometry arguments then apply).  Starting from ``checkpoint_in``
    skips whatever the checkpoint already contains (weights always; label
    map and advance cache when present).  Curves and the final checkpoint
    are rewritten after every block, so a killed run leaves consistent
    artifacts behind.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.txt", config)
    kernels = config.kernel_params()
    params = config.ap_params()
    train, validation = load_datasets(config)

    stored = None
    if config.checkpoint_in:
        stored = load_checkpoint(config.checkpoint_in)
        network = network_from_checkpoint(stored)
        logger.info("restored %d-layer network from %s", network.n_layers, config.checkpoint_in)
    else:
        network = _fresh_network(config, specs, image_shape, pad)
        stream = take_block(train, config.block_size, config.seed, 0, config.redraw_blocks)
        pretrain(
            network,
            stream,
            config.schedule(network.n_layers),
            kernels,
            log_every=config.log_every,
        )

    subset0 = take_block(train, config.block_size, config.seed, 0, config.redraw_blocks)
    calibration = train.subset(subset0.subset_indices)
    if stored is not None and stored.label_map is not None:
        label_map = stored.label_map
    else:
        label_map = assign_labels(network, calibration, kernels, config.n_classes)
    if stored is not None and stored.cache_indices is not None:
        cache = _restore_cache(stored.cache_indices, train, label_map.n_classes)
    else:
        cache = warm_cache(network, calibration, label_map, kernels)
        # warm_cache indexes into the calibration subset; rebase onto the
        # training set so checkpointed indices survive a reload
        cache.sample_indices[:] = subset0.subset_indices[cache.sample_indices]
    if stored is None:
        _save_atomic(
            out / "pretrained.dsom",
            checkpoint_from_network(network, label_map, cache.sample_indices),
        )

    curves_path = out / "curves.csv"
    final_path = Path(config.checkpoint_out) if config.checkpoint_out else out / "final.dsom"
    t0 = clock()
    baseline = evaluate(network, validation, label_map, kernels)
    metrics = [BlockMetrics(0, baseline, 0, 0, clock() - t0)]
    write_curves(curves_path, metrics)
    logger.info("block 0 error=%.4f (baseline)", baseline)

    for b in range(1, config.n_blocks + 1):
        stream = take_block(train, config.block_size, config.seed, b, config.redraw_blocks)
        m = run_block(
            network,
            stream,
            validation,
            cache,
            label_map,
            params,
            kernels,
            block_index=b,
            n_trials=config.block_size,
            clock=clock,
        )
        metrics.append(m)
        write_curves(curves_path, metrics)
        _save_atomic(
            final_path, checkpoint_from_network(network, label_map, cache.sample_indices)
        )
        logger.info(
            "block %d error=%.4f ap=%d (%.1fs)", b, m.error_rate, m.ap_invocations, m.seconds
        )
    if config.n_blocks == 0:
        _save_atomic(
            final_path, checkpoint_from_network(network, label_map, cache.sample_indices)
        )

    write_run_exports(
        network,
        validation,
        kernels,
        out,
        atlas=config.export_atlas,
        usage=config.export_usage,
    )
    return ExperimentResult(
        config, metrics, network, label_map, cache, curves_path, final_path
    )
