"""Layered network structure and the forward pass.

A network is a stack of layers; each layer is a rectangular map of identical
SOM modules.  The first layer's modules read normalized pixel patches cut
from a zero-padded image.  A later layer either slides a window over the
previous layer's map grid (one module per window position) or, when the
window covers the whole previous grid, connects every module to everything
below.  A module's input vector is the concatenation of the shared
activation values of the modules in its window, in row-major window order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DataFormatError, NumericError
from .somcore import KernelParams, SomGrid, kernel_table, normalize_rows


@dataclass(frozen=True)
class LayerSpec:
    """Geometry of one layer.

    ``map_rows x map_cols`` modules, each a ``som_rows x som_cols`` grid of
    neurons with ``input_dim`` weights per neuron.  ``rf`` is the window side
    (pixels for the first layer, previous-layer modules otherwise) and
    ``stride`` its step.
    """

    map_rows: int
    map_cols: int
    rf: int
    stride: int
    input_dim: int
    som_rows: int = 10
    som_cols: int = 10

    def __post_init__(self) -> None:
        for name in ("map_rows", "map_cols", "rf", "stride", "input_dim", "som_rows", "som_cols"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")

    @property
    def n_modules(self) -> int:
        return self.map_rows * self.map_cols

    @property
    def som_neurons(self) -> int:
        return self.som_rows * self.som_cols

    @property
    def n_weights(self) -> int:
        return self.n_modules * self.som_neurons * self.input_dim


def reference_layer_specs() -> tuple[LayerSpec, ...]:
    """The five-layer reference topology for 28x28 images padded to 30x30."""
    return (
        LayerSpec(7, 7, rf=6, stride=4, input_dim=36),
        LayerSpec(5, 5, rf=3, stride=1, input_dim=900),
        LayerSpec(5, 5, rf=5, stride=1, input_dim=2500),
        LayerSpec(5, 5, rf=5, stride=1, input_dim=2500),
        LayerSpec(1, 1, rf=5, stride=1, input_dim=2500),
    )


@dataclass
class NetworkTopology:
    """Validated wiring between layers.

    ``wiring[l]`` maps each module of layer ``l`` to the flat indices of its
    source modules in layer ``l - 1`` (``None`` for the first layer);
    ``full_coverage[l]`` marks layers whose window spans the whole previous
    grid, where every module shares the same flattened input.
    """

    specs: tuple[LayerSpec, ...]
    image_shape: tuple[int, int]
    pad: int
    wiring: list
    full_coverage: list


def _window_positions(extent: int, rf: int, stride: int, what: str, layer: int) -> int:
    if rf > extent:
        raise ConfigurationError(
            f"layer {layer}: window side {rf} exceeds its input extent {extent} ({what})"
        )
    if (extent - rf) % stride != 0:
        raise ConfigurationError(
            f"layer {layer}: stride {stride} leaves {(extent - rf) % stride} uncovered "
            f"{what} (extent {extent}, window {rf})"
        )
    return (extent - rf) // stride + 1


def build_topology(
    specs: tuple[LayerSpec, ...] | list,
    image_shape: tuple[int, int] = (28, 28),
    pad: int = 1,
) -> NetworkTopology:
    """Check layer geometry end to end and derive the wiring tables."""
    specs = tuple(specs)
    if not specs:
        raise ConfigurationError("a network needs at least one layer")
    if pad < 0:
        raise ConfigurationError(f"pad must be >= 0, got {pad}")
    h, w = image_shape
    if h < 1 or w < 1:
        raise ConfigurationError(f"image shape must be positive, got {image_shape}")

    wiring: list = [None]
    full_coverage = [False]

    first = specs[0]
    pr = _window_positions(h + 2 * pad, first.rf, first.stride, "pixel rows", 1)
    pc = _window_positions(w + 2 * pad, first.rf, first.stride, "pixel cols", 1)
    if (pr, pc) != (first.map_rows, first.map_cols):
        raise ConfigurationError(
            f"layer 1: window positions {pr}x{pc} do not match its {first.map_rows}x"
            f"{first.map_cols} map grid"
        )
    if first.input_dim != first.rf * first.rf:
        raise ConfigurationError(
            f"layer 1: input_dim {first.input_dim} != rf^2 = {first.rf * first.rf}"
        )

    for l in range(1, len(specs)):
        spec, prev = specs[l], specs[l - 1]
        layer = l + 1
        pr = _window_positions(prev.map_rows, spec.rf, spec.stride, "module rows", layer)
        pc = _window_positions(prev.map_cols, spec.rf, spec.stride, "module cols", layer)
        if (pr, pc) == (1, 1):
            # the window spans the entire previous grid
            expected = prev.n_modules * prev.som_neurons
            if spec.input_dim != expected:
                raise ConfigurationError(
                    f"layer {layer}: input_dim {spec.input_dim} != previous layer's "
                    f"{prev.n_modules} modules x {prev.som_neurons} neurons = {expected}"
                )
            table = np.tile(np.arange(prev.n_modules), (spec.n_modules, 1))
            wiring.append(table)
            full_coverage.append(True)
            continue
        if (pr, pc) != (spec.map_rows, spec.map_cols):
            raise ConfigurationError(
                f"layer {layer}: window positions {pr}x{pc} match neither its "
                f"{spec.map_rows}x{spec.map_cols} map grid nor full coverage"
            )
        expected = spec.rf * spec.rf * prev.som_neurons
        if spec.input_dim != expected:
            raise ConfigurationError(
                f"layer {layer}: input_dim {spec.input_dim} != rf^2 x {prev.som_neurons} "
                f"neurons = {expected}"
            )
        table = np.empty((spec.n_modules, spec.rf * spec.rf), dtype=np.int64)
        for mr in range(spec.map_rows):
            for mc in range(spec.map_cols):
                r0, c0 = mr * spec.stride, mc * spec.stride
                block = [
                    (r0 + dr) * prev.map_cols + (c0 + dc)
                    for dr in range(spec.rf)
                    for dc in range(spec.rf)
                ]
                table[mr * spec.map_cols + mc] = block
        wiring.append(table)
        full_coverage.append(False)

    return NetworkTopology(specs, (h, w), pad, wiring, full_coverage)


def extract_patches(
    image: np.ndarray, rf: int, stride: int, pad: int, out_rows: int, out_cols: int
) -> np.ndarray:
    """Cut a padded image into unit-normalized patch vectors.

    Returns ``(out_rows * out_cols, rf * rf)``, row-major both across patch
    positions and within each patch.  All-zero patches stay zero.
    """
    canvas = np.zeros((image.shape[0] + 2 * pad, image.shape[1] + 2 * pad))
    canvas[pad : pad + image.shape[0], pad : pad + image.shape[1]] = image
    win = sliding_window_view(canvas, (rf, rf))[::stride, ::stride]
    if win.shape[:2] != (out_rows, out_cols):
        raise ConfigurationError(
            f"patch grid {win.shape[0]}x{win.shape[1]} does not match expected "
            f"{out_rows}x{out_cols}"
        )
    patches = win.reshape(out_rows * out_cols, rf * rf).copy()
    norms = np.linalg.norm(patches, axis=1)
    nz = norms > 0.0
    patches[nz] /= norms[nz, None]
    return patches


def extract_patches_batch(
    images: np.ndarray, rf: int, stride: int, pad: int, out_rows: int, out_cols: int
) -> np.ndarray:
    """Batch form of `extract_patches`: ``(batch, n_patches, rf * rf)``."""
    b, h, w = images.shape
    canvas = np.zeros((b, h + 2 * pad, w + 2 * pad))
    canvas[:, pad : pad + h, pad : pad + w] = images
    win = sliding_window_view(canvas, (rf, rf), axis=(1, 2))[:, ::stride, ::stride]
    patches = win.reshape(b, out_rows * out_cols, rf * rf).copy()
    norms = np.linalg.norm(patches, axis=2)
    np.divide(patches, norms[:, :, None], out=patches, where=norms[:, :, None] > 0.0)
    return patches


@dataclass
class NetworkState:
    """Everything one pass produced, layer by layer.

    ``inputs[l]`` is ``(n_modules, input_dim)``, ``winners[l]`` is
    ``(n_modules,)`` flat neuron indices, ``values[l]`` is
    ``(n_modules, som_neurons)`` shared activations.  ``tag`` records which
    kind of pass built it: "plain", "advance", or "blended".
    """

    tag: str
    inputs: list
    winners: list
    values: list


class DeepSomNetwork:
    """A stack of SOM layers with its weights and per-module grids."""

    def __init__(
        self,
        topology: NetworkTopology,
        layer_weights: list,
        grids: list,
        base_seed: int,
    ):
        self.topology = topology
        self.layer_weights = layer_weights
        self.grids = grids
        self.base_seed = base_seed

    @classmethod
    def build(
        cls,
        specs,
        seed: int = 0,
        image_shape: tuple[int, int] = (28, 28),
        pad: int = 1,
        init: str = "random",
    ) -> "DeepSomNetwork":
        """Construct a network, drawing initial weights from ``seed``.

        One contiguous ``(n_modules, som_neurons, input_dim)`` array per
        layer holds the weights; module grids are views into it.  With
        ``init="empty"`` the arrays are allocated but not filled (for
        checkpoint loading).
        """
        topology = build_topology(specs, image_shape, pad)
        rng = np.random.default_rng(seed)
        layer_weights = []
        grids = []
        for l, spec in enumerate(topology.specs):
            shape = (spec.n_modules, spec.som_neurons, spec.input_dim)
            if init == "random":
                w = rng.uniform(-1.0, 1.0, size=shape)
            elif init == "empty":
                w = np.empty(shape)
            else:
                raise ConfigurationError(f"unknown init mode {init!r}")
            layer_weights.append(w)
            layer_grids = []
            for mi in range(spec.n_modules):
                grid = SomGrid(
                    spec.som_rows,
                    spec.som_cols,
                    spec.input_dim,
                    w[mi],
                    guard_entropy=(seed, l, mi),
                )
                if init == "random":
                    normalize_rows(grid)
                layer_grids.append(grid)
            grids.append(layer_grids)
        return cls(topology, layer_weights, grids, seed)

    @property
    def n_layers(self) -> int:
        return len(self.topology.specs)

    @property
    def last_spec(self) -> LayerSpec:
        return self.topology.specs[-1]

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.topology.image_shape:
            raise DataFormatError(
                f"image has shape {image.shape}, expected {self.topology.image_shape}"
            )
        if not np.all(np.isfinite(image)):
            raise NumericError("non-finite pixel values")
        return image

    def first_layer_patches(self, image: np.ndarray) -> np.ndarray:
        spec = self.topology.specs[0]
        return extract_patches(
            self._check_image(image),
            spec.rf,
            spec.stride,
            self.topology.pad,
            spec.map_rows,
            spec.map_cols,
        )

    def layer_step(self, l: int, X: np.ndarray, sigma_out: float, shared: bool = False):
        """Responses, winners, and shared values for one layer.

        ``X`` is ``(n_modules, input_dim)``; with ``shared=True`` all rows
        are identical and one stacked product serves every module.
        """
        spec = self.topology.specs[l]
        w = self.layer_weights[l]
        if shared:
            u = (w.reshape(-1, spec.input_dim) @ X[0]).reshape(
                spec.n_modules, spec.som_neurons
            )
        else:
            u = np.matmul(w, X[:, :, None])[:, :, 0]
        if np.isnan(u).any():
            raise NumericError(f"NaN in layer {l + 1} responses")
        winners = np.argmax(u, axis=1)
        values = kernel_table(spec.som_rows, spec.som_cols, sigma_out)[winners]
        return u, winners, values

    def gather(self, l: int, prev_values: np.ndarray) -> np.ndarray:
        """Unit-normalized input vectors for layer ``l`` from the values below.

        Module inputs are unit vectors at every boundary, as layer-1 patch
        vectors are; responses stay cosine similarities and update steps
        stay bounded by their rate.  An all-zero gather stays zero.
        """
        spec = self.topology.specs[l]
        if self.topology.full_coverage[l]:
            flat = prev_values.reshape(-1)
            norm = np.linalg.norm(flat)
            if norm > 0.0:
                flat = flat / norm
            return np.broadcast_to(flat, (spec.n_modules, flat.size))
        X = prev_values[self.topology.wiring[l]].reshape(spec.n_modules, -1)
        norms = np.linalg.norm(X, axis=1)
        nz = norms > 0.0
        X[nz] /= norms[nz, None]
        return X

    def forward(self, image: np.ndarray, params: KernelParams, tag: str = "plain") -> NetworkState:
        """One image up through every layer under winners-share-all."""
        inputs, winners, values = [], [], []
        prev = None
        for l in range(self.n_layers):
            if l == 0:
                X = self.first_layer_patches(image)
            else:
                X = self.gather(l, prev)
            shared = l > 0 and self.topology.full_coverage[l]
            _, win, val = self.layer_step(l, X, params.sigma_out, shared=shared)
            inputs.append(X)
            winners.append(win)
            values.append(val)
            prev = val
        return NetworkState(tag, inputs, winners, values)

    def forward_batch(self, images: np.ndarray, params: KernelParams):
        """Winners and responses of the last layer for a stack of images.

        Returns ``(winners, responses)`` shaped ``(batch, last_modules)`` and
        ``(batch, last_modules, last_som_neurons)``.  Feed it modest chunks;
        intermediate activations for huge batches do not fit in memory.
        """
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 3 or images.shape[1:] != self.topology.image_shape:
            raise DataFormatError(
                f"image stack has shape {images.shape}, expected "
                f"(batch, {self.topology.image_shape[0]}, {self.topology.image_shape[1]})"
            )
        if not np.all(np.isfinite(images)):
            raise NumericError("non-finite pixel values")
        b = images.shape[0]
        spec0 = self.topology.specs[0]
        prev = extract_patches_batch(
            images, spec0.rf, spec0.stride, self.topology.pad, spec0.map_rows, spec0.map_cols
        )
        u = None
        winners = None
        for l, spec in enumerate(self.topology.specs):
            w = self.layer_weights[l]
            if l == 0:
                x = prev
            elif self.topology.full_coverage[l]:
                x = None
            else:
                x = prev[:, self.topology.wiring[l]].reshape(b, spec.n_modules, -1)
                norms = np.linalg.norm(x, axis=2)
                np.divide(x, norms[:, :, None], out=x, where=norms[:, :, None] > 0.0)
            if x is None:
                flat = prev.reshape(b, -1)
                norms = np.linalg.norm(flat, axis=1, keepdims=True)
                flat = np.divide(flat, norms, out=flat.copy(), where=norms > 0.0)
                u = (flat @ w.reshape(-1, spec.input_dim).T).reshape(
                    b, spec.n_modules, spec.som_neurons
                )
            else:
                u = np.einsum("mnd,bmd->bmn", w, x, optimize=True)
            if np.isnan(u).any():
                raise NumericError(f"NaN in layer {l + 1} responses")
            winners = u.argmax(axis=2)
            prev = kernel_table(spec.som_rows, spec.som_cols, params.sigma_out)[winners]
        return winners, u
