"""Uniform quantization grids and the Kronecker index map.

Each axis spans [-rho * sigma, +rho * sigma] split into ``card - 2`` equal
cells, with a half-infinite tail cell on either side. A point of R^n maps to
the composite index of ``delta^{pi_1} (x) ... (x) delta^{pi_n}``, first axis
most significant.

Indices are 1-based at every public interface. Values that fall exactly on a
boundary belong to the lower-indexed cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Sequence

import numpy as np

from .lgss import SteadyStateStats, Trajectory

__all__ = [
    "AxisGrid",
    "QuantizerGrid",
    "build_grid",
    "quantize_axis",
    "composite_index",
    "decompose_index",
    "cell_center",
    "quantize_trajectory",
    "write_grid",
    "read_grid",
]


@dataclass(frozen=True)
class AxisGrid:
    cardinality: int
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if int(self.cardinality) != self.cardinality or self.cardinality < 3:
            raise ValueError(f"cardinality must be an integer >= 3, got {self.cardinality}")
        if not np.isfinite(self.lower) or not np.isfinite(self.upper) or self.upper <= self.lower:
            raise ValueError(f"need finite lower < upper, got [{self.lower}, {self.upper}]")
        object.__setattr__(self, "cardinality", int(self.cardinality))
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))

    @property
    def width(self) -> float:
        return (self.upper - self.lower) / (self.cardinality - 2)

    @property
    def inner_boundaries(self) -> np.ndarray:
        """m^1 .. m^{card-1}; m^0 = -inf and m^card = +inf are implicit."""
        b = self.lower + np.arange(self.cardinality - 1) * self.width
        b[-1] = self.upper
        return b

    @property
    def boundaries(self) -> np.ndarray:
        return np.concatenate([[-np.inf], self.inner_boundaries, [np.inf]])

    @property
    def centers(self) -> np.ndarray:
        """Cell representatives, 0-based array over cells 1..card.

        Tail cells get pseudo-centers half a width beyond the finite range.
        """
        h = self.width
        inner = self.inner_boundaries
        mids = 0.5 * (inner[:-1] + inner[1:])
        return np.concatenate([[self.lower - 0.5 * h], mids, [self.upper + 0.5 * h]])

    def quantize(self, values) -> np.ndarray:
        """Vectorized cell lookup, returning 1-based indices."""
        v = np.asarray(values, dtype=float)
        if np.isnan(v).any():
            raise ValueError("cannot quantize NaN")
        card = self.cardinality
        b = self.inner_boundaries
        with np.errstate(invalid="ignore", over="ignore"):
            t = np.ceil((v - self.lower) / self.width)
        t = np.clip(np.nan_to_num(t, nan=0.0, posinf=card - 1, neginf=0.0), 0, card - 1).astype(np.int64)
        # t counts the boundaries strictly below v; repair rounding by one step
        down = (t > 0) & (v <= b[np.maximum(t - 1, 0)])
        t = t - down
        up = (t < card - 1) & (v > b[np.minimum(t, card - 2)])
        t = t + up
        return t + 1


@dataclass(frozen=True)
class QuantizerGrid:
    state_axes: tuple[AxisGrid, ...]
    output_axes: tuple[AxisGrid, ...]
    rho: float = float("nan")

    def __post_init__(self) -> None:
        object.__setattr__(self, "state_axes", tuple(self.state_axes))
        object.__setattr__(self, "output_axes", tuple(self.output_axes))

    @property
    def state_cards(self) -> tuple[int, ...]:
        return tuple(a.cardinality for a in self.state_axes)

    @property
    def output_cards(self) -> tuple[int, ...]:
        return tuple(a.cardinality for a in self.output_axes)

    @property
    def state_count(self) -> int:
        return prod(self.state_cards)

    @property
    def output_count(self) -> int:
        return prod(self.output_cards)

    def quantize_states(self, states) -> np.ndarray:
        """Composite 1-based state index for each row of `states`."""
        X = np.atleast_2d(np.asarray(states, dtype=float))
        per_axis = np.stack([ax.quantize(X[:, p]) for p, ax in enumerate(self.state_axes)], axis=1)
        return _composite(per_axis, self.state_cards)

    def quantize_outputs(self, outputs) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(outputs, dtype=float))
        per_axis = np.stack([ax.quantize(Y[:, p]) for p, ax in enumerate(self.output_axes)], axis=1)
        return _composite(per_axis, self.output_cards)

    def state_axis_indices(self) -> np.ndarray:
        """(N, n) array of 1-based per-axis indices, row j-1 for composite j."""
        return _all_tuples(self.state_cards)

    def output_axis_indices(self) -> np.ndarray:
        return _all_tuples(self.output_cards)

    def state_centers(self) -> np.ndarray:
        """(N, n) cell representatives in composite order."""
        return _centers(self.state_axes, self.state_axis_indices())

    def output_centers(self) -> np.ndarray:
        return _centers(self.output_axes, self.output_axis_indices())

    def zero_state_index(self) -> int:
        return int(self.quantize_states(np.zeros((1, len(self.state_axes))))[0])


def _all_tuples(cards: Sequence[int]) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(1, c + 1) for c in cards], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _centers(axes, tuples: np.ndarray) -> np.ndarray:
    return np.stack([ax.centers[tuples[:, p] - 1] for p, ax in enumerate(axes)], axis=1)


def _composite(per_axis: np.ndarray, cards: Sequence[int]) -> np.ndarray:
    idx = np.zeros(per_axis.shape[0], dtype=np.int64)
    for p, c in enumerate(cards):
        idx = idx * c + (per_axis[:, p] - 1)
    return idx + 1


def build_grid(stats: SteadyStateStats, rho: float, state_cards: Sequence[int], output_cards: Sequence[int]) -> QuantizerGrid:
    """Grids spanning +/- rho stationary standard deviations on every axis."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    sx = np.asarray(stats.state_std, dtype=float)
    sy = np.asarray(stats.output_std, dtype=float)
    if len(state_cards) != sx.size or len(output_cards) != sy.size:
        raise ValueError("cardinality lists must match the state and output dimensions")
    state_axes = tuple(AxisGrid(int(c), -rho * s, rho * s) for c, s in zip(state_cards, sx))
    output_axes = tuple(AxisGrid(int(c), -rho * s, rho * s) for c, s in zip(output_cards, sy))
    return QuantizerGrid(state_axes, output_axes, float(rho))


def quantize_axis(grid: AxisGrid, value: float) -> int:
    return int(grid.quantize(np.float64(value)))


def composite_index(axis_indices: Sequence[int], cardinalities: Sequence[int]) -> int:
    if len(axis_indices) != len(cardinalities):
        raise ValueError("axis_indices and cardinalities differ in length")
    idx = 0
    for i, c in zip(axis_indices, cardinalities):
        if not 1 <= i <= c:
            raise ValueError(f"axis index {i} outside 1..{c}")
        idx = idx * c + (i - 1)
    return idx + 1


def decompose_index(composite: int, cardinalities: Sequence[int]) -> tuple[int, ...]:
    total = prod(cardinalities)
    if not 1 <= composite <= total:
        raise ValueError(f"composite index {composite} outside 1..{total}")
    rest = composite - 1
    out = []
    for c in reversed(cardinalities):
        out.append(rest % c + 1)
        rest //= c
    return tuple(reversed(out))


def cell_center(grid: QuantizerGrid, composite_state_index: int) -> np.ndarray:
    t = decompose_index(composite_state_index, grid.state_cards)
    return np.array([ax.centers[i - 1] for ax, i in zip(grid.state_axes, t)])


def quantize_trajectory(grid: QuantizerGrid, traj: Trajectory) -> np.ndarray:
    """(K, 2) array of 1-based (state index, output index) pairs."""
    return np.stack([grid.quantize_states(traj.states), grid.quantize_outputs(traj.outputs)], axis=1)


def write_grid(grid: QuantizerGrid, path) -> None:
    lines = [f"{len(grid.state_axes)} {len(grid.output_axes)} {grid.rho!r}"]
    for ax in grid.state_axes + grid.output_axes:
        lines.append(f"{ax.cardinality} {ax.lower!r} {ax.upper!r} {ax.width!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid(path) -> QuantizerGrid:
    with open(path) as fh:
        rows = [line.split() for line in fh if line.strip()]
    n, m, rho = int(rows[0][0]), int(rows[0][1]), float(rows[0][2])
    axes = [AxisGrid(int(r[0]), float(r[1]), float(r[2])) for r in rows[1 : 1 + n + m]]
    return QuantizerGrid(tuple(axes[:n]), tuple(axes[n:]), rho)
