"""Binary network snapshots.

Layout, all multi-byte fields little-endian:

    magic `DSOM`, version byte,
    base_seed, image_rows, image_cols, pad, n_layers   (u64 each),
    per layer: map_rows, map_cols, rf, stride, input_dim, som_rows, som_cols,
    per layer: weight block, float64 row-major (modules, neurons, inputs),
    per layer: one guard counter per module (u64),
    label-map flag byte [+ class count and neuron ids as u64],
    cache flag byte [+ class count as u64 and sample indices as i64].

A checkpoint restores weights bit for bit; the guard counters carry the
degenerate-row replacement stream so a resumed run continues exactly where
the saved one stopped.  Cached advance images are not stored: their sample
indices are re-resolved against the training set on resume.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aplearn import LabelMap
from .errors import CheckpointError
from .topology import DeepSomNetwork, LayerSpec

MAGIC = b"DSOM"
VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to reconstruct a network mid-experiment."""

    base_seed: int
    image_shape: tuple
    pad: int
    specs: tuple
    layer_weights: list
    guard_counts: list
    label_map: LabelMap | None = None
    cache_indices: np.ndarray | None = None
    version: int = VERSION


def checkpoint_from_network(
    network: DeepSomNetwork,
    label_map: LabelMap | None = None,
    cache_indices: np.ndarray | None = None,
) -> Checkpoint:
    return Checkpoint(
        base_seed=network.base_seed,
        image_shape=network.topology.image_shape,
        pad=network.topology.pad,
        specs=network.topology.specs,
        layer_weights=network.layer_weights,
        guard_counts=[
            np.array([g.guard_count for g in layer], dtype=np.uint64)
            for layer in network.grids
        ],
        label_map=label_map,
        cache_indices=None if cache_indices is None else np.asarray(cache_indices),
    )


def network_from_checkpoint(cp: Checkpoint) -> DeepSomNetwork:
    """Rebuild a live network; weights are copied, guard streams restored."""
    network = DeepSomNetwork.build(
        cp.specs, seed=cp.base_seed, image_shape=cp.image_shape, pad=cp.pad, init="empty"
    )
    for l, weights in enumerate(cp.layer_weights):
        if network.layer_weights[l].shape != weights.shape:
            raise CheckpointError(
                f"layer {l + 1} weight block has shape {weights.shape}, topology "
                f"needs {network.layer_weights[l].shape}"
            )
        network.layer_weights[l][:] = weights
        for mi, grid in enumerate(network.grids[l]):
            grid.guard_count = int(cp.guard_counts[l][mi])
    return network


def save_checkpoint(path, cp: Checkpoint) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", cp.version))
        f.write(
            struct.pack(
                "<QQQQQ",
                cp.base_seed,
                cp.image_shape[0],
                cp.image_shape[1],
                cp.pad,
                len(cp.specs),
            )
        )
        for spec in cp.specs:
            f.write(
                struct.pack(
                    "<QQQQQQQ",
                    spec.map_rows,
                    spec.map_cols,
                    spec.rf,
                    spec.stride,
                    spec.input_dim,
                    spec.som_rows,
                    spec.som_cols,
                )
            )
        for weights in cp.layer_weights:
            f.write(np.ascontiguousarray(weights, dtype="<f8").tobytes())
        for counts in cp.guard_counts:
            f.write(np.ascontiguousarray(counts, dtype="<u8").tobytes())
        if cp.label_map is None:
            f.write(b"\x00")
        else:
            f.write(b"\x01")
            f.write(struct.pack("<Q", cp.label_map.n_classes))
            f.write(
                np.ascontiguousarray(cp.label_map.class_to_neuron, dtype="<u8").tobytes()
            )
        if cp.cache_indices is None:
            f.write(b"\x00")
        else:
            f.write(b"\x01")
            f.write(struct.pack("<Q", len(cp.cache_indices)))
            f.write(np.ascontiguousarray(cp.cache_indices, dtype="<i8").tobytes())


class _Cursor:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, size: int) -> bytes:
        need = self.pos + size
        if need > len(self.raw):
            raise CheckpointError(
                f"{self.path}: truncated at byte {len(self.raw)}, need {need} "
                f"({need - len(self.raw)} missing)"
            )
        chunk = self.raw[self.pos : need]
        self.pos = need
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"no such checkpoint: {p}")
    raw = p.read_bytes()
    cur = _Cursor(raw, p)
    magic = cur.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"{p}: bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = cur.unpack("<B")
    if version != VERSION:
        raise CheckpointError(f"{p}: unsupported version {version}, expected {VERSION}")
    base_seed, rows, cols, pad, n_layers = cur.unpack("<QQQQQ")
    if n_layers < 1 or n_layers > 1024:
        raise CheckpointError(f"{p}: implausible layer count {n_layers}")
    specs = []
    for l in range(n_layers):
        mr, mc, rf, stride, dim, sr, sc = cur.unpack("<QQQQQQQ")
        try:
            specs.append(
                LayerSpec(
                    int(mr), int(mc), rf=int(rf), stride=int(stride),
                    input_dim=int(dim), som_rows=int(sr), som_cols=int(sc),
                )
            )
        except Exception as e:
            raise CheckpointError(f"{p}: bad geometry for layer {l + 1}: {e}") from e
    specs = tuple(specs)
    layer_weights = []
    for spec in specs:
        count = spec.n_modules * spec.som_neurons * spec.input_dim
        block = cur.take(count * 8)
        w = np.frombuffer(block, dtype="<f8").reshape(
            spec.n_modules, spec.som_neurons, spec.input_dim
        )
        layer_weights.append(w.astype(np.float64))
    guard_counts = []
    for spec in specs:
        block = cur.take(spec.n_modules * 8)
        guard_counts.append(np.frombuffer(block, dtype="<u8").copy())
    (have_map,) = cur.unpack("<B")
    label_map = None
    if have_map == 1:
        (n_classes,) = cur.unpack("<Q")
        ids = np.frombuffer(cur.take(int(n_classes) * 8), dtype="<u8").astype(np.int64)
        label_map = LabelMap(ids, specs[-1].som_neurons)
    elif have_map != 0:
        raise CheckpointError(f"{p}: bad label-map flag {have_map}")
    (have_cache,) = cur.unpack("<B")
    cache_indices = None
    if have_cache == 1:
        (n_classes,) = cur.unpack("<Q")
        cache_indices = np.frombuffer(cur.take(int(n_classes) * 8), dtype="<i8").copy()
    elif have_cache != 0:
        raise CheckpointError(f"{p}: bad cache flag {have_cache}")
    if cur.pos != len(raw):
        raise CheckpointError(
            f"{p}: {len(raw) - cur.pos} unexpected trailing bytes"
        )
    for l, w in enumerate(layer_weights):
        if not np.all(np.isfinite(w)):
            raise CheckpointError(f"{p}: non-finite weights in layer {l + 1}")
    return Checkpoint(
        base_seed=int(base_seed),
        image_shape=(int(rows), int(cols)),
        pad=int(pad),
        specs=specs,
        layer_weights=layer_weights,
        guard_counts=guard_counts,
        label_map=label_map,
        cache_indices=cache_indices,
        version=version,
    )


def expected_file_size(specs, has_label_map: bool, n_classes: int, has_cache: bool) -> int:
    """Exact byte size a checkpoint of this shape will occupy on disk."""
    size = 4 + 1 + 5 * 8 + len(specs) * 7 * 8
    for spec in specs:
        size += spec.n_weights * 8 + spec.n_modules * 8
    size += 1 + (8 + n_classes * 8 if has_label_map else 0)
    size += 1 + (8 + n_classes * 8 if has_cache else 0)
    return size
