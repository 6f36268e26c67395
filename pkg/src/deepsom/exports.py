"""Figure-data exporters: weight atlases, usage maps, optimal stimuli, PGM.

Everything here renders network internals into plain binary PGM images or
count vectors; nothing mutates the network.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError
from .somcore import KernelParams, SomGrid
from .topology import DeepSomNetwork

GRAY_MID = 128


def pgm_bytes(image: np.ndarray) -> bytes:
    """Encode an 8-bit grayscale array as binary (P5) PGM."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ConfigurationError(f"PGM needs a 2-d array, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise ConfigurationError(f"PGM needs uint8 pixels, got {image.dtype}")
    h, w = image.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(pgm_bytes(image))


def to_gray(values: np.ndarray) -> np.ndarray:
    """Min-max scale any float array to uint8; constant arrays become mid-gray."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.full(values.shape, GRAY_MID, dtype=np.uint8)
    return np.rint((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def feature_atlas(grid: SomGrid) -> np.ndarray:
    """Tile a grid's weight rows as square patches with 1-pixel separators.

    Each patch is min-max scaled on its own; separator lines are black.  A
    10x10 grid of 36-weight rows renders as 71x71 pixels.
    """
    side = math.isqrt(grid.input_dim)
    if side * side != grid.input_dim:
        raise ConfigurationError(
            f"weight rows of length {grid.input_dim} are not square patches"
        )
    cell = side + 1
    canvas = np.zeros((grid.rows * cell + 1, grid.cols * cell + 1), dtype=np.uint8)
    for j in range(grid.n_neurons):
        r, c = divmod(j, grid.cols)
        patch = grid.weights[j].reshape(side, side)
        canvas[1 + r * cell : 1 + r * cell + side, 1 + c * cell : 1 + c * cell + side] = (
            to_gray(patch)
        )
    return canvas


def usage_histogram(
    network: DeepSomNetwork,
    images: np.ndarray,
    params: KernelParams,
    chunk: int = 512,
) -> np.ndarray:
    """How often each last-layer neuron wins over an image stack."""
    if network.last_spec.n_modules != 1:
        raise ConfigurationError(
            f"usage counts need one final module, the last layer has "
            f"{network.last_spec.n_modules}"
        )
    counts = np.zeros(network.last_spec.som_neurons, dtype=np.int64)
    images = np.asarray(images, dtype=np.float64)
    for lo in range(0, len(images), chunk):
        winners, _ = network.forward_batch(images[lo : lo + chunk], params)
        counts += np.bincount(winners[:, 0], minlength=len(counts))
    return counts


def render_usage(counts: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Counts as a grayscale grid map, brightest at the most-used neuron."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size != rows * cols:
        raise ConfigurationError(
            f"{counts.size} counts do not fill a {rows}x{cols} grid"
        )
    peak = counts.max()
    if peak == 0:
        return np.zeros((rows, cols), dtype=np.uint8)
    return np.rint(counts / peak * 255.0).astype(np.uint8).reshape(rows, cols)


def usage_entropy(counts: np.ndarray) -> float:
    """Shannon entropy (nats) of the usage distribution."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


class StimulusProjector:
    """Backprojects neurons into input space, caching whole layers.

    A first-layer neuron's stimulus is its weight patch placed at its
    module's receptive-field location (clipped where padding falls outside
    the image).  A deeper neuron's stimulus is the weight-weighted sum of
    its input neurons' stimuli, with every pixel divided by the number of
    contributing source modules that cover it.
    """

    def __init__(self, network: DeepSomNetwork):
        self.network = network
        h, w = network.topology.image_shape
        self._pixels = h * w
        self._stacks: list = [None] * network.n_layers
        self._regions: list = [None] * network.n_layers

    def _base_level(self) -> None:
        net = self.network
        spec = net.topology.specs[0]
        h, w = net.topology.image_shape
        pad = net.topology.pad
        stack = np.zeros((spec.n_modules, spec.som_neurons, self._pixels))
        region = np.zeros((spec.n_modules, self._pixels), dtype=bool)
        for mi in range(spec.n_modules):
            pr, pc = divmod(mi, spec.map_cols)
            r0, c0 = pr * spec.stride - pad, pc * spec.stride - pad
            rows = [r for r in range(r0, r0 + spec.rf) if 0 <= r < h]
            cols = [c for c in range(c0, c0 + spec.rf) if 0 <= c < w]
            canvas = stack[mi].reshape(spec.som_neurons, h, w)
            patches = net.layer_weights[0][mi].reshape(spec.som_neurons, spec.rf, spec.rf)
            for r in rows:
                for c in cols:
                    canvas[:, r, c] = patches[:, r - r0, c - c0]
            mask = region[mi].reshape(h, w)
            mask[np.ix_(rows, cols)] = True
        self._stacks[0] = stack
        self._regions[0] = region

    def _lift(self, l: int) -> None:
        net = self.network
        spec = net.topology.specs[l]
        prev_stack = self._stacks[l - 1]
        prev_region = self._regions[l - 1]
        prev_neurons = net.topology.specs[l - 1].som_neurons
        stack = np.empty((spec.n_modules, spec.som_neurons, self._pixels))
        region = np.zeros((spec.n_modules, self._pixels), dtype=bool)
        for mi in range(spec.n_modules):
            sources = net.topology.wiring[l][mi]
            gathered = prev_stack[sources].reshape(-1, self._pixels)
            w = net.layer_weights[l][mi]
            raw = w @ gathered
            # a source module covers a pixel for neuron j only when j has
            # some nonzero weight into that module
            contributes = (
                np.abs(w.reshape(spec.som_neurons, len(sources), prev_neurons)).max(axis=2)
                > 0.0
            )
            coverage = contributes.astype(np.float64) @ prev_region[sources].astype(np.float64)
            stack[mi] = raw / np.maximum(coverage, 1.0)
            region[mi] = coverage.max(axis=0) > 0.0
        self._stacks[l] = stack
        self._regions[l] = region

    def _ensure(self, l: int) -> None:
        if self._stacks[l] is not None:
            return
        if l == 0:
            self._base_level()
            return
        self._ensure(l - 1)
        self._lift(l)

    def raw_stimulus(self, layer: int, module: int, neuron: int) -> np.ndarray:
        """Unscaled backprojection of one neuron, shaped like the image."""
        net = self.network
        if not (0 <= layer < net.n_layers):
            raise ConfigurationError(f"no layer {layer + 1} in a {net.n_layers}-layer network")
        spec = net.topology.specs[layer]
        if not (0 <= module < spec.n_modules):
            raise ConfigurationError(
                f"layer {layer + 1} has {spec.n_modules} modules, no module {module}"
            )
        if not (0 <= neuron < spec.som_neurons):
            raise ConfigurationError(
                f"modules in layer {layer + 1} have {spec.som_neurons} neurons, "
                f"no neuron {neuron}"
            )
        self._ensure(layer)
        return self._stacks[layer][module, neuron].reshape(net.topology.image_shape)


def optimal_stimulus(
    network: DeepSomNetwork, layer: int, module: int, neuron: int
) -> np.ndarray:
    """Min-max scaled input-space image of what one neuron codes."""
    raw = StimulusProjector(network).raw_stimulus(layer, module, neuron)
    lo, hi = float(raw.min()), float(raw.max())
    if hi == lo:
        return np.full(raw.shape, 0.5)
    return (raw - lo) / (hi - lo)
