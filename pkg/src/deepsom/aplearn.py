"""Supervised learning by advance propagation.

After pre-training, each class claims one last-layer neuron.  A trial shows
the network one target image.  When the prediction is right, every layer is
pulled toward what it just saw, with deeper layers moving faster.  When it
is wrong, the same update is applied in reverse, and the network then
re-processes the target under the lingering after-effect of a cached,
previously correct image of the required class: each layer's input is a
convex blend of the advance pass and the fresh pass, and the blended pass
winners drive one more positive update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import CalibrationError, ConfigurationError, DataFormatError
from .somcore import KernelParams, competitive_update
from .topology import DeepSomNetwork, NetworkState

logger = logging.getLogger(__name__)

UNASSIGNED = -1


@dataclass(frozen=True)
class ApParams:
    """Supervised-phase learning constants.

    ``rho_base`` is the base step, ``beta`` the advance share in the blend,
    ``r`` the per-layer decay (layer l of n scales by ``r**(n-l)``), and
    ``sigma_update`` the update neighbourhood width.  The layer count comes
    from the network itself.
    """

    rho_base: float = 0.2
    beta: float = 0.4
    r: float = 0.7
    sigma_update: float = 0.4

    def __post_init__(self) -> None:
        if self.rho_base < 0.0 or not np.isfinite(self.rho_base):
            raise ConfigurationError(f"rho_base must be >= 0, got {self.rho_base!r}")
        if not (0.0 <= self.beta <= 1.0):
            raise ConfigurationError(f"beta must be in [0, 1], got {self.beta!r}")
        if not (0.0 <= self.r <= 1.0):
            raise ConfigurationError(f"r must be in [0, 1], got {self.r!r}")
        if self.sigma_update < 0.0 or not np.isfinite(self.sigma_update):
            raise ConfigurationError(
                f"sigma_update must be finite and >= 0, got {self.sigma_update!r}"
            )


def layer_rates(params: ApParams, n_layers: int) -> list[float]:
    """Effective step size per layer: ``r**(n-l) * rho_base`` for l = 1..n.

    ``0**0 == 1``, so ``r=0`` leaves only the last layer learning.
    """
    return [(params.r ** (n_layers - l)) * params.rho_base for l in range(1, n_layers + 1)]


@dataclass(frozen=True)
class LabelMap:
    """Bijection from classes to their claimed last-layer neurons."""

    class_to_neuron: np.ndarray
    n_neurons: int

    def __post_init__(self) -> None:
        c2n = np.asarray(self.class_to_neuron, dtype=np.int64)
        object.__setattr__(self, "class_to_neuron", c2n)
        if c2n.ndim != 1 or c2n.size < 1:
            raise ConfigurationError("class_to_neuron must be a non-empty vector")
        if len(np.unique(c2n)) != len(c2n):
            raise ConfigurationError("classes must claim distinct neurons")
        if c2n.min() < 0 or c2n.max() >= self.n_neurons:
            raise ConfigurationError(
                f"neuron indices must lie in 0..{self.n_neurons - 1}"
            )

    @property
    def n_classes(self) -> int:
        return len(self.class_to_neuron)

    @cached_property
    def neuron_to_class(self) -> np.ndarray:
        inverse = np.full(self.n_neurons, UNASSIGNED, dtype=np.int64)
        inverse[self.class_to_neuron] = np.arange(self.n_classes)
        inverse.flags.writeable = False
        return inverse

    def class_of(self, neuron: int) -> int:
        return int(self.neuron_to_class[neuron])


def _require_single_output_module(network: DeepSomNetwork) -> None:
    if network.last_spec.n_modules != 1:
        raise ConfigurationError(
            f"classification needs one final module, the last layer has "
            f"{network.last_spec.n_modules}"
        )


def assign_labels(
    network: DeepSomNetwork,
    dataset,
    params: KernelParams,
    n_classes: int = 10,
    chunk: int = 512,
) -> LabelMap:
    """Give each class the last-layer neuron that wins most often for it.

    Winner counts over the calibration set fill an (n_neurons, n_classes)
    table; cells are visited in descending count order (ties toward lower
    class, then lower neuron) and a cell claims its neuron for its class
    when both are still free.
    """
    _require_single_output_module(network)
    if len(dataset) == 0:
        raise CalibrationError("calibration subset is empty")
    if int(dataset.labels.max()) >= n_classes or int(dataset.labels.min()) < 0:
        raise CalibrationError(
            f"labels outside 0..{n_classes - 1} in the calibration subset"
        )
    n_neurons = network.last_spec.som_neurons
    counts = np.zeros((n_neurons, n_classes), dtype=np.int64)
    for lo in range(0, len(dataset), chunk):
        images = dataset.images[lo : lo + chunk]
        labels = dataset.labels[lo : lo + chunk]
        winners, _ = network.forward_batch(images, params)
        np.add.at(counts, (winners[:, 0], labels), 1)
    distinct = int(np.count_nonzero(counts.sum(axis=1)))
    if distinct < n_classes:
        raise CalibrationError(
            f"only {distinct} distinct winning neurons for {n_classes} classes; "
            "the map is too collapsed to calibrate"
        )
    return LabelMap(greedy_assignment(counts), n_neurons)


def greedy_assignment(counts: np.ndarray) -> np.ndarray:
    """Resolve a winner-count table to one distinct neuron per class."""
    n_neurons, n_classes = counts.shape
    cells = sorted(
        ((int(counts[j, c]), c, j) for j in range(n_neurons) for c in range(n_classes)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    class_to_neuron = np.full(n_classes, -1, dtype=np.int64)
    taken = np.zeros(n_neurons, dtype=bool)
    remaining = n_classes
    for _, c, j in cells:
        if class_to_neuron[c] >= 0 or taken[j]:
            continue
        class_to_neuron[c] = j
        taken[j] = True
        remaining -= 1
        if remaining == 0:
            break
    return class_to_neuron


def classify(network: DeepSomNetwork, image, label_map: LabelMap, params: KernelParams) -> int:
    """Predicted class for one image, or the unassigned marker (-1)."""
    _require_single_output_module(network)
    state = network.forward(image, params)
    return label_map.class_of(int(state.winners[-1][0]))


def classify_batch(
    network: DeepSomNetwork,
    images: np.ndarray,
    label_map: LabelMap,
    params: KernelParams,
    chunk: int = 512,
) -> np.ndarray:
    """Predictions for a stack of images, -1 where the winner is unassigned."""
    _require_single_output_module(network)
    images = np.asarray(images, dtype=np.float64)
    preds = np.empty(len(images), dtype=np.int64)
    for lo in range(0, len(images), chunk):
        winners, _ = network.forward_batch(images[lo : lo + chunk], params)
        preds[lo : lo + chunk] = label_map.neuron_to_class[winners[:, 0]]
    return preds


class AdvanceCache:
    """One recent correctly classified exemplar per class.

    ``ages[c]`` counts trials since class ``c`` was refreshed;
    ``sample_indices[c]`` remembers where the cached image came from in its
    dataset (-1 when unknown).
    """

    def __init__(self, n_classes: int):
        if n_classes < 1:
            raise ConfigurationError(f"need at least one class, got {n_classes}")
        self._images: list = [None] * n_classes
        self.sample_indices = np.full(n_classes, -1, dtype=np.int64)
        self.ages = np.zeros(n_classes, dtype=np.int64)

    @property
    def n_classes(self) -> int:
        return len(self._images)

    def has(self, cls: int) -> bool:
        return self._images[cls] is not None

    def entry(self, cls: int) -> np.ndarray:
        img = self._images[cls]
        if img is None:
            raise CalibrationError(f"no cached advance input for class {cls}")
        return img

    def refresh(self, cls: int, image: np.ndarray, sample_index: int = -1) -> None:
        self._images[cls] = np.array(image, dtype=np.float64)
        self.sample_indices[cls] = sample_index
        self.ages[cls] = 0

    def tick(self) -> None:
        self.ages += 1


def warm_cache(
    network: DeepSomNetwork,
    dataset,
    label_map: LabelMap,
    params: KernelParams,
    chunk: int = 512,
) -> AdvanceCache:
    """Fill the advance cache from a labeled subset.

    Each class caches its first correctly classified sample; a class with no
    correct sample falls back to the one whose last-layer response at the
    class's own neuron is largest.
    """
    _require_single_output_module(network)
    n = len(dataset)
    n_classes = label_map.n_classes
    winners = np.empty(n, dtype=np.int64)
    responses = np.empty((n, network.last_spec.som_neurons))
    for lo in range(0, n, chunk):
        w, u = network.forward_batch(dataset.images[lo : lo + chunk], params)
        winners[lo : lo + chunk] = w[:, 0]
        responses[lo : lo + chunk] = u[:, 0, :]
    preds = label_map.neuron_to_class[winners]
    cache = AdvanceCache(n_classes)
    for c in range(n_classes):
        members = np.nonzero(dataset.labels == c)[0]
        if members.size == 0:
            raise DataFormatError(f"class {c} has no samples in the warm-up subset")
        correct = members[preds[members] == c]
        if correct.size:
            pick = int(correct[0])
        else:
            pick = int(members[np.argmax(responses[members, label_map.class_to_neuron[c]])])
        cache.refresh(c, dataset.images[pick], pick)
    return cache


def blend(advance: np.ndarray, target: np.ndarray, beta: float) -> np.ndarray:
    """Convex combination ``beta * advance + (1 - beta) * target``."""
    advance = np.asarray(advance, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if advance.shape != target.shape:
        raise ConfigurationError(
            f"cannot blend shapes {advance.shape} and {target.shape}"
        )
    if not (0.0 <= beta <= 1.0):
        raise ConfigurationError(f"beta must be in [0, 1], got {beta!r}")
    return beta * advance + (1.0 - beta) * target


def ap_pass(
    network: DeepSomNetwork,
    target_image,
    advance_state: NetworkState,
    params: ApParams,
    kernels: KernelParams,
) -> NetworkState:
    """Process the target under the after-effect of the advance pass.

    Layer by layer, the input is the blend of the advance pass's output
    below with the current pass's output below (patch vectors at the first
    layer), renormalized so blended inputs are unit vectors like any other
    module input, then the usual response and winners-share-all activation.
    The result is a full state tagged "blended"; its winners generally
    differ from blending the two separate passes.
    """
    if len(advance_state.values) != network.n_layers:
        raise ConfigurationError(
            f"advance state covers {len(advance_state.values)} layers, network has "
            f"{network.n_layers}"
        )
    inputs, winners, values = [], [], []
    for l in range(network.n_layers):
        if l == 0:
            target_patches = network.first_layer_patches(target_image)
            x = blend(advance_state.inputs[0], target_patches, params.beta)
            norms = np.linalg.norm(x, axis=1)
            nz = norms > 0.0
            x[nz] /= norms[nz, None]
        else:
            below = blend(advance_state.values[l - 1], values[l - 1], params.beta)
            x = network.gather(l, below)
        shared = l > 0 and network.topology.full_coverage[l]
        _, win, val = network.layer_step(l, x, kernels.sigma_out, shared=shared)
        inputs.append(x)
        winners.append(win)
        values.append(val)
    return NetworkState("blended", inputs, winners, values)


def ap_update(
    network: DeepSomNetwork,
    state: NetworkState,
    params: ApParams,
    sign: int = 1,
) -> None:
    """One depth-decayed neighbourhood update at every layer.

    Each module moves around its winner from ``state`` toward (or, with
    ``sign=-1``, away from) its input vector in ``state``, at the layer's
    effective rate from `layer_rates`.
    """
    rates = layer_rates(params, network.n_layers)
    for l in range(network.n_layers):
        if rates[l] == 0.0:
            continue
        winners, inputs = state.winners[l], state.inputs[l]
        for mi, grid in enumerate(network.grids[l]):
            competitive_update(
                grid, int(winners[mi]), inputs[mi], rates[l], params.sigma_update, sign
            )


@dataclass(frozen=True)
class TrialOutcome:
    """What one supervised trial did."""

    predicted: int
    was_correct: bool
    ap_invoked: bool
    cache_refreshed: bool

    def __post_init__(self) -> None:
        if self.ap_invoked and self.was_correct:
            raise ConfigurationError("a correct trial cannot invoke the blended pass")


def learning_trial(
    network: DeepSomNetwork,
    image,
    label: int,
    cache: AdvanceCache,
    label_map: LabelMap,
    params: ApParams,
    kernels: KernelParams,
    sample_index: int = -1,
) -> TrialOutcome:
    """One supervised trial on one labeled image.

    Correct prediction: positive update from the plain pass at every layer,
    then this sample becomes its class's cached advance input.  Incorrect:
    the same update reversed, then the cached advance input for the required
    label is forwarded and the blended pass drives one positive update.  The
    prediction is never re-read within the trial.
    """
    _require_single_output_module(network)
    state = network.forward(image, kernels)
    predicted = label_map.class_of(int(state.winners[-1][0]))
    cache.tick()
    if predicted == label:
        ap_update(network, state, params, sign=1)
        cache.refresh(label, image, sample_index)
        outcome = TrialOutcome(predicted, True, False, True)
    else:
        ap_update(network, state, params, sign=-1)
        advance_state = network.forward(cache.entry(label), kernels, tag="advance")
        blended = ap_pass(network, image, advance_state, params, kernels)
        ap_update(network, blended, params, sign=1)
        outcome = TrialOutcome(predicted, False, True, False)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(
            "trial idx=%d label=%d pred=%d correct=%s ap=%s",
            sample_index,
            label,
            predicted,
            str(outcome.was_correct).lower(),
            str(outcome.ap_invoked).lower(),
        )
    return outcome
