"""Image and label file loading plus deterministic sample streams.

The on-disk format is the classic big-endian binary used for handwritten
digit sets: a magic number, dimension counts, then raw unsigned bytes.
Files ending in ``.gz`` are decompressed transparently.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataFormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

_SUBSET_TAG = 0x5B5E
_ORDER_TAG = 0x0D3E


def _read_bytes(path) -> bytes:
    p = Path(path)
    if not p.exists():
        raise DataFormatError(f"no such file: {p}")
    opener = gzip.open if p.suffix == ".gz" else open
    try:
        with opener(p, "rb") as f:
            return f.read()
    except (OSError, EOFError) as e:
        raise DataFormatError(f"cannot read {p}: {e}") from e


@dataclass(frozen=True)
class Dataset:
    """Aligned images and labels: ``(n, rows, cols)`` float64 in [0, 1] and
    ``(n,)`` int64 class ids."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.images.ndim != 3:
            raise DataFormatError(
                f"images must be (n, rows, cols), got shape {self.images.shape}"
            )
        if len(self.images) != len(self.labels):
            raise DataFormatError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices])


def load_idx(image_path, label_path) -> Dataset:
    """Load an image file and its label file into one aligned dataset.

    Pixel bytes are scaled to [0, 1] by dividing by 255.  Every structural
    problem (bad magic, truncation, count mismatch, out-of-range label)
    raises with the byte offset or count that is wrong.
    """
    raw = _read_bytes(image_path)
    if len(raw) < 16:
        raise DataFormatError(
            f"{image_path}: header needs 16 bytes, file has {len(raw)}"
        )
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise DataFormatError(
            f"{image_path}: magic 0x{magic:08x} at offset 0, expected 0x{IMAGE_MAGIC:08x}"
        )
    expected = count * rows * cols
    payload = len(raw) - 16
    if payload != expected:
        diff = expected - payload
        detail = f"{diff} missing" if diff > 0 else f"{-diff} extra"
        raise DataFormatError(
            f"{image_path}: payload is {payload} bytes, expected {expected} ({detail})"
        )
    images = (
        np.frombuffer(raw, dtype=np.uint8, offset=16)
        .reshape(count, rows, cols)
        .astype(np.float64)
        / 255.0
    )

    raw = _read_bytes(label_path)
    if len(raw) < 8:
        raise DataFormatError(f"{label_path}: header needs 8 bytes, file has {len(raw)}")
    magic, label_count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise DataFormatError(
            f"{label_path}: magic 0x{magic:08x} at offset 0, expected 0x{LABEL_MAGIC:08x}"
        )
    payload = len(raw) - 8
    if payload != label_count:
        diff = label_count - payload
        detail = f"{diff} missing" if diff > 0 else f"{-diff} extra"
        raise DataFormatError(
            f"{label_path}: payload is {payload} bytes, expected {label_count} ({detail})"
        )
    if label_count != count:
        raise DataFormatError(
            f"{label_path} holds {label_count} labels but {image_path} holds {count} images"
        )
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise DataFormatError(
            f"{label_path}: label {labels[bad[0]]} at index {bad[0]} outside 0..9"
        )
    return Dataset(images, labels.astype(np.int64))


def write_idx_images(path, images: np.ndarray) -> None:
    """Write a [0, 1] image stack back to the binary format (bytes 0..255)."""
    images = np.asarray(images)
    n, rows, cols = images.shape
    data = np.rint(images * 255.0).clip(0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(data.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


class SampleStream:
    """Endless deterministic stream over a fixed subset of a dataset.

    The subset is chosen once from ``seed``; each full pass presents it in a
    fresh permutation drawn from ``(seed, block_index, pass)``, so two
    streams with the same arguments replay the same sequence sample for
    sample.
    """

    def __init__(self, dataset: Dataset, subset: np.ndarray, seed: int, block_index: int):
        self._dataset = dataset
        self._subset = subset
        self._seed = seed
        self._block = block_index
        self._pass = 0
        self._cursor = 0
        self._order = self._fresh_order()

    def _fresh_order(self) -> np.ndarray:
        rng = np.random.default_rng((self._seed, _ORDER_TAG, self._block, self._pass))
        return self._subset[rng.permutation(len(self._subset))]

    @property
    def subset_indices(self) -> np.ndarray:
        return self._subset.copy()

    def next_sample(self):
        """Next ``(image, label, dataset_index)`` triple."""
        if self._cursor >= len(self._order):
            self._pass += 1
            self._cursor = 0
            self._order = self._fresh_order()
        i = int(self._order[self._cursor])
        self._cursor += 1
        return self._dataset.images[i], int(self._dataset.labels[i]), i

    def __iter__(self):
        while True:
            yield self.next_sample()


def take_block(
    dataset: Dataset,
    block_size: int,
    seed: int,
    block_index: int = 0,
    redraw: bool = False,
) -> SampleStream:
    """Stream over one training block.

    A single seed-determined permutation of the dataset backs every block.
    By default each block reuses its first ``block_size`` entries (one fixed
    subset, reshuffled per block); with ``redraw=True`` block ``k`` instead
    reads the window starting at ``k * block_size``, wrapping around.
    """
    n = len(dataset)
    if block_size < 1 or block_size > n:
        raise ConfigurationError(
            f"block size {block_size} outside 1..{n} for this dataset"
        )
    perm = np.random.default_rng((seed, _SUBSET_TAG)).permutation(n)
    start = (block_index * block_size) % n if redraw else 0
    subset = perm.take(range(start, start + block_size), mode="wrap")
    return SampleStream(dataset, subset, seed, block_index)
