"""Layer-wise competitive pre-training with staggered critical periods.

Lower layers start learning first; each deeper layer switches on after a
fixed share of the run so it always reads inputs that have already begun to
stabilize.  Within its own window a layer's learning rate and neighbourhood
width ramp linearly from their start to end values.  The deepest layer is
left untouched: supervised learning later shapes it from scratch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataio import SampleStream
from .errors import ConfigurationError
from .somcore import KernelParams, SomGrid, competitive_update
from .topology import DeepSomNetwork

logger = logging.getLogger(__name__)


def ramp(step: int, total: int, start: float, end: float) -> float:
    """Linear interpolation from ``start`` at step 0 to ``end`` at the last step."""
    if total < 1:
        raise ConfigurationError(f"ramp needs at least one step, got {total}")
    if not (0 <= step < total):
        raise ConfigurationError(f"step {step} outside 0..{total - 1}")
    if total == 1:
        return start
    return start + (end - start) * (step / (total - 1))


@dataclass(frozen=True)
class PretrainSchedule:
    """When each layer learns and how fast.

    ``layer_starts[l]`` is the first iteration at which layer ``l`` updates,
    or ``None`` for a layer excluded from pre-training.  An active layer's
    rates ramp over its own window, which runs from its start to the end of
    the whole run.
    """

    total_iterations: int = 10_000
    layer_starts: tuple = (0, 2_500, 5_000, 7_500, None)
    rho_start: float = 1.0
    rho_end: float = 0.0
    sigma_start: float = 3.5
    sigma_end: float = 0.0

    def __post_init__(self) -> None:
        if self.total_iterations < 1:
            raise ConfigurationError(
                f"total_iterations must be >= 1, got {self.total_iterations}"
            )
        for l, s in enumerate(self.layer_starts):
            if s is None:
                continue
            if not (0 <= s < self.total_iterations):
                raise ConfigurationError(
                    f"layer {l + 1} start {s} outside 0..{self.total_iterations - 1}"
                )

    @classmethod
    def staggered(
        cls,
        n_layers: int,
        total_iterations: int = 10_000,
        rho_start: float = 1.0,
        rho_end: float = 0.0,
        sigma_start: float = 3.5,
        sigma_end: float = 0.0,
    ) -> "PretrainSchedule":
        """Evenly staggered starts for all layers but the last.

        With ``n_layers`` layers, layer ``l`` (0-based) starts at
        ``l * total / (n_layers - 1)`` and the final layer never trains.
        """
        if n_layers < 2:
            raise ConfigurationError(
                "staggered schedules need at least two layers; pass explicit "
                "layer_starts for smaller networks"
            )
        starts = tuple(
            l * total_iterations // (n_layers - 1) for l in range(n_layers - 1)
        ) + (None,)
        return cls(
            total_iterations=total_iterations,
            layer_starts=starts,
            rho_start=rho_start,
            rho_end=rho_end,
            sigma_start=sigma_start,
            sigma_end=sigma_end,
        )

    def active(self, layer: int, iteration: int) -> bool:
        start = self.layer_starts[layer]
        return start is not None and iteration >= start

    def rates(self, layer: int, iteration: int) -> tuple[float, float]:
        """(learning rate, neighbourhood sigma) at this iteration."""
        start = self.layer_starts[layer]
        if start is None or iteration < start:
            raise ConfigurationError(
                f"layer {layer + 1} is not active at iteration {iteration}"
            )
        window = self.total_iterations - start
        step = iteration - start
        return (
            ramp(step, window, self.rho_start, self.rho_end),
            ramp(step, window, self.sigma_start, self.sigma_end),
        )


def pretrain(
    network: DeepSomNetwork,
    stream: SampleStream,
    schedule: PretrainSchedule,
    params: KernelParams,
    log_every: int = 0,
) -> DeepSomNetwork:
    """Run the competitive phase in place and return the network.

    Each iteration draws one sample, runs a full forward pass, and applies
    the neighbourhood update to every currently active layer at that
    layer's own ramped rate and width.
    """
    if len(schedule.layer_starts) != network.n_layers:
        raise ConfigurationError(
            f"schedule covers {len(schedule.layer_starts)} layers, network has "
            f"{network.n_layers}"
        )
    for it in range(schedule.total_iterations):
        image, _, _ = stream.next_sample()
        state = network.forward(image, params)
        for l in range(network.n_layers):
            if not schedule.active(l, it):
                continue
            rho, sigma = schedule.rates(l, it)
            winners, inputs = state.winners[l], state.inputs[l]
            for mi, grid in enumerate(network.grids[l]):
                competitive_update(grid, int(winners[mi]), inputs[mi], rho, sigma)
        if log_every and (it + 1) % log_every == 0:
            mask = "".join(
                "1" if schedule.active(l, it) else "0" for l in range(network.n_layers)
            )
            ramped = [
                schedule.rates(l, it)
                for l in range(network.n_layers)
                if schedule.active(l, it)
            ]
            logger.info(
                "pretrain iter=%d layer_active=%s rho=%s sigma=%s",
                it + 1,
                mask,
                ",".join(f"{rho:.3f}" for rho, _ in ramped),
                ",".join(f"{sigma:.3f}" for _, sigma in ramped),
            )
    return network


def neighbor_similarity(grid: SomGrid) -> float:
    """Mean cosine similarity between grid-adjacent weight rows.

    Adjacency is 4-connected.  Rows are unit norm in a trained map, but the
    cosine is computed explicitly so the probe is meaningful on any grid.
    """
    w = grid.weights.reshape(grid.rows, grid.cols, grid.input_dim)
    norms = np.linalg.norm(w, axis=2)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = w / safe[:, :, None]
    total, count = 0.0, 0
    if grid.cols > 1:
        total += float(np.sum(unit[:, :-1] * unit[:, 1:]))
        count += grid.rows * (grid.cols - 1)
    if grid.rows > 1:
        total += float(np.sum(unit[:-1, :] * unit[1:, :]))
        count += (grid.rows - 1) * grid.cols
    if count == 0:
        raise ConfigurationError("similarity needs a grid with at least two neurons")
    return total / count
