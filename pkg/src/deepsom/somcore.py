"""Single self-organizing-map primitives.

A module is a rectangular grid of neurons whose weight rows live in one
``(n_neurons, input_dim)`` float64 array.  Activation is winners-share-all:
the neuron with the largest inner product fires at 1.0 and its grid
neighbours fire at a Gaussian fraction of that.  Learning pulls the winner's
neighbourhood toward the input and renormalizes each touched row to unit
length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, NumericError

# Gaussian neighbourhood factors below this cannot move a unit-norm row by a
# representable amount, so those rows are skipped entirely during updates.
KERNEL_CUTOFF = 1e-12

# A row whose norm falls below this after an update carries no usable
# direction and is replaced by a fresh random unit vector.
NORM_GUARD = 1e-12

_GUARD_TAG = 0xD50A


@dataclass(frozen=True)
class KernelParams:
    """Widths of the two Gaussian neighbourhoods.

    ``sigma_out`` shapes the shared activation around the winner;
    ``sigma_update`` shapes the learning neighbourhood.  Both are in grid
    units.
    """

    sigma_out: float = 0.8
    sigma_update: float = 0.4

    def __post_init__(self) -> None:
        if not (self.sigma_out > 0.0) or not np.isfinite(self.sigma_out):
            raise ConfigurationError(
                f"sigma_out must be a positive finite number, got {self.sigma_out!r}"
            )
        if self.sigma_update < 0.0 or not np.isfinite(self.sigma_update):
            raise ConfigurationError(
                f"sigma_update must be finite and >= 0, got {self.sigma_update!r}"
            )

    def sigma(self, which: str) -> float:
        if which == "out":
            return self.sigma_out
        if which == "update":
            return self.sigma_update
        raise ConfigurationError(f"unknown kernel selector {which!r}")


@dataclass
class ActivationResult:
    """Output of one module for one input: the winner and all shared values."""

    winner_index: int
    values: np.ndarray


@lru_cache(maxsize=None)
def squared_grid_distances(rows: int, cols: int) -> np.ndarray:
    """All-pairs squared Euclidean distance between grid positions.

    Returns a read-only ``(rows*cols, rows*cols)`` float64 matrix indexed by
    flat neuron index (row-major).
    """
    if rows < 1 or cols < 1:
        raise ConfigurationError(f"grid must be at least 1x1, got {rows}x{cols}")
    idx = np.arange(rows * cols)
    r = idx // cols
    c = idx % cols
    d2 = (r[:, None] - r[None, :]) ** 2 + (c[:, None] - c[None, :]) ** 2
    d2 = d2.astype(np.float64)
    d2.flags.writeable = False
    return d2


def grid_distance(a: int, b: int, rows: int, cols: int) -> float:
    """Euclidean distance between two flat neuron indices on the grid."""
    n = rows * cols
    if not (0 <= a < n and 0 <= b < n):
        raise ConfigurationError(
            f"neuron indices {a}, {b} out of range for a {rows}x{cols} grid"
        )
    return float(np.sqrt(squared_grid_distances(rows, cols)[a, b]))


@lru_cache(maxsize=None)
def kernel_table(rows: int, cols: int, sigma: float) -> np.ndarray:
    """Gaussian neighbourhood factors ``exp(-d^2 / (2 sigma^2))`` for every
    (winner, neuron) pair.  Row ``w`` is the activation profile when ``w``
    wins; the diagonal is exactly 1.0.

    ``sigma == 0`` degenerates to an indicator: 1.0 at the winner, 0.0
    elsewhere.
    """
    if sigma < 0.0 or not np.isfinite(sigma):
        raise ConfigurationError(f"sigma must be finite and >= 0, got {sigma!r}")
    d2 = squared_grid_distances(rows, cols)
    if sigma == 0.0:
        k = (d2 == 0.0).astype(np.float64)
    else:
        k = np.exp(d2 / (-2.0 * sigma * sigma))
    k.flags.writeable = False
    return k


@dataclass
class SomGrid:
    """One map: geometry plus its weight rows.

    ``weights`` may be a view into a larger layer array; updates mutate it in
    place.  ``guard_entropy`` seeds the stream that replaces degenerate rows,
    and ``guard_count`` advances that stream so replacements never repeat.
    """

    rows: int
    cols: int
    input_dim: int
    weights: np.ndarray
    guard_entropy: tuple[int, ...] = (0,)
    guard_count: int = 0

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ConfigurationError(
                f"grid must be at least 1x1, got {self.rows}x{self.cols}"
            )
        if self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be >= 1, got {self.input_dim}")
        expected = (self.rows * self.cols, self.input_dim)
        if self.weights.shape != expected:
            raise ConfigurationError(
                f"weight array has shape {self.weights.shape}, expected {expected}"
            )

    @property
    def n_neurons(self) -> int:
        return self.rows * self.cols

    @classmethod
    def random(
        cls,
        rows: int,
        cols: int,
        input_dim: int,
        rng: np.random.Generator,
        guard_entropy: tuple[int, ...] = (0,),
    ) -> "SomGrid":
        """Fresh grid with rows drawn uniform in [-1, 1) and unit-normalized."""
        weights = rng.uniform(-1.0, 1.0, size=(rows * cols, input_dim))
        grid = cls(rows, cols, input_dim, weights, guard_entropy=guard_entropy)
        normalize_rows(grid)
        return grid

    def _fresh_row(self) -> np.ndarray:
        rng = np.random.default_rng(
            (*self.guard_entropy, _GUARD_TAG, self.guard_count)
        )
        self.guard_count += 1
        row = rng.uniform(-1.0, 1.0, size=self.input_dim)
        norm = np.linalg.norm(row)
        while norm < NORM_GUARD:  # pragma: no cover - astronomically unlikely
            rng = np.random.default_rng(
                (*self.guard_entropy, _GUARD_TAG, self.guard_count)
            )
            self.guard_count += 1
            row = rng.uniform(-1.0, 1.0, size=self.input_dim)
            norm = np.linalg.norm(row)
        return row / norm


def inner_products(grid: SomGrid, x: np.ndarray) -> np.ndarray:
    """Response of every neuron to ``x``: one inner product per weight row."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (grid.input_dim,):
        raise ConfigurationError(
            f"input has shape {x.shape}, expected ({grid.input_dim},)"
        )
    u = grid.weights @ x
    if not np.all(np.isfinite(u)):
        raise NumericError("non-finite inner products; check weights and input")
    return u


def wsa_output(
    u: np.ndarray,
    rows: int,
    cols: int,
    params: KernelParams,
    which: str = "out",
) -> ActivationResult:
    """Winners-share-all activation for one response vector.

    The largest entry of ``u`` names the winner (lowest index wins ties);
    the winner outputs exactly 1.0 and every other neuron outputs the
    Gaussian factor for its grid distance to the winner.  ``which`` selects
    the output kernel (``"out"``) or the update kernel (``"update"``).
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (rows * cols,):
        raise ConfigurationError(
            f"response vector has shape {u.shape}, expected ({rows * cols},)"
        )
    if np.isnan(u).any():
        raise NumericError("NaN in response vector")
    winner = int(np.argmax(u))
    values = kernel_table(rows, cols, params.sigma(which))[winner].copy()
    return ActivationResult(winner_index=winner, values=values)


def normalize_rows(grid: SomGrid) -> None:
    """Scale every weight row to unit L2 norm, replacing degenerate rows."""
    _renormalize(grid, np.arange(grid.n_neurons))


def _renormalize(grid: SomGrid, indices: np.ndarray) -> None:
    w = grid.weights
    norms = np.linalg.norm(w[indices], axis=1)
    bad = norms < NORM_GUARD
    if bad.any():
        for i in indices[bad]:
            w[i] = grid._fresh_row()
        indices = indices[~bad]
        norms = norms[~bad]
    if indices.size:
        w[indices] /= norms[:, None]


def competitive_update(
    grid: SomGrid,
    winner: int,
    x: np.ndarray,
    rate: float,
    sigma: float,
    sign: int = 1,
) -> None:
    """Pull the winner's neighbourhood toward ``x`` and renormalize.

    Each row ``j`` within reach moves by
    ``sign * rate * exp(-d(winner, j)^2 / (2 sigma^2)) * x`` and is then
    scaled back to unit norm.  ``sign=-1`` pushes away instead.  Rows whose
    Gaussian factor is below ``KERNEL_CUTOFF`` are left bit-identical, as is
    the whole grid when ``rate == 0``.
    """
    if rate < 0.0 or not np.isfinite(rate):
        raise ConfigurationError(f"rate must be finite and >= 0, got {rate!r}")
    if sign not in (1, -1):
        raise ConfigurationError(f"sign must be +1 or -1, got {sign!r}")
    if not (0 <= winner < grid.n_neurons):
        raise ConfigurationError(
            f"winner index {winner} out of range for {grid.n_neurons} neurons"
        )
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (grid.input_dim,):
        raise ConfigurationError(
            f"input has shape {x.shape}, expected ({grid.input_dim},)"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite input to competitive update")
    if rate == 0.0:
        return
    k = kernel_table(grid.rows, grid.cols, sigma)[winner]
    touched = np.nonzero(k >= KERNEL_CUTOFF)[0]
    grid.weights[touched] += (sign * rate) * k[touched, None] * x[None, :]
    _renormalize(grid, touched)
