"""Exhaustive Monte Carlo training of the HMM matrices by event counting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .lgss import SsmModel, simulate_batch, solve_steady_state, stationary_sqrt
from .quantizer import QuantizerGrid

__all__ = [
    "CountMatrix",
    "HmmModel",
    "accumulate_counts",
    "normalize",
    "normalize_columns",
    "train_naive",
    "train_naive_factors",
    "write_model",
    "read_model",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CountMatrix:
    """Sparse nonnegative integer counts, conditioning index on the columns."""

    rows: int
    cols: int
    entries: sp.csc_matrix = None

    def __post_init__(self) -> None:
        if self.entries is None:
            mat = sp.csc_matrix((self.rows, self.cols), dtype=np.int64)
        else:
            mat = sp.csc_matrix(self.entries, dtype=np.int64)
            if mat.shape != (self.rows, self.cols):
                raise ValueError(f"entries have shape {mat.shape}, expected {(self.rows, self.cols)}")
        mat.sum_duplicates()
        mat.eliminate_zeros()
        object.__setattr__(self, "entries", mat)

    @classmethod
    def from_events(cls, rows: int, cols: int, row_idx, col_idx) -> "CountMatrix":
        """Count 0-based (row, col) events."""
        r = np.asarray(row_idx, dtype=np.int64)
        c = np.asarray(col_idx, dtype=np.int64)
        coo = sp.coo_matrix((np.ones(r.size, dtype=np.int64), (r, c)), shape=(rows, cols))
        return cls(rows, cols, coo.tocsc())

    def merge(self, other: "CountMatrix") -> "CountMatrix":
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise ValueError("cannot merge count matrices of different shapes")
        return CountMatrix(self.rows, self.cols, self.entries + other.entries)

    __add__ = merge

    def get(self, i: int, j: int) -> int:
        """Count at 1-based (i, j)."""
        return int(self.entries[i - 1, j - 1])

    def total(self) -> int:
        return int(self.entries.sum())

    def column_totals(self) -> np.ndarray:
        return np.asarray(self.entries.sum(axis=0)).ravel()

    @property
    def nnz(self) -> int:
        return self.entries.nnz


@dataclass(eq=False)
class HmmModel:
    """Column-stochastic transition (N x N) and measurement (M x N) matrices.

    Matrices are scipy CSC with 0-based storage; column ``j - 1`` is the
    distribution conditioned on state ``j``.
    """

    transition: sp.csc_matrix
    measurement: sp.csc_matrix
    state_factors: Optional[list] = None
    measurement_factors: Optional[list] = None
    grid: Optional[QuantizerGrid] = None
    unvisited_transition_cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    unvisited_measurement_cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    # transition counts (naive) or the standard columns (structured)
    training: Optional[object] = None
    # optional matrix-free stand-in for `transition`, same product semantics
    transition_operator: Optional[object] = None

    def __post_init__(self) -> None:
        self.transition = sp.csc_matrix(self.transition, dtype=float)
        self.measurement = sp.csc_matrix(self.measurement, dtype=float)
        N = self.transition.shape[0]
        if self.transition.shape != (N, N) or self.measurement.shape[1] != N:
            raise ValueError("transition must be N x N and measurement M x N")
        if self.grid is not None and (self.grid.state_count, self.grid.output_count) != (N, self.measurement.shape[0]):
            raise ValueError("model dimensions do not match the grid")

    @property
    def state_count(self) -> int:
        return self.transition.shape[0]

    @property
    def output_count(self) -> int:
        return self.measurement.shape[0]

    def check_invariants(self, tol: float = 1e-9) -> None:
        for name, mat in (("transition", self.transition), ("measurement", self.measurement)):
            if mat.nnz and (mat.data.min() < 0 or mat.data.max() > 1 + tol):
                raise AssertionError(f"{name} has entries outside [0, 1]")
            sums = np.asarray(mat.sum(axis=0)).ravel()
            live = sums > 0
            if np.any(np.abs(sums[live] - 1.0) > tol):
                raise AssertionError(f"{name} has columns that do not sum to one")


def accumulate_counts(index_pairs, state_count: int, output_count: int) -> tuple[CountMatrix, CountMatrix]:
    """Transition and emission counts from a sequence of 1-based (pi_x, pi_y)."""
    pairs = np.asarray(index_pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise ValueError("need at least one index pair")
    px = pairs[:, 0] - 1
    py = pairs[:, 1] - 1
    counts_a = CountMatrix.from_events(state_count, state_count, px[1:], px[:-1])
    counts_c = CountMatrix.from_events(output_count, state_count, py, px)
    return counts_a, counts_c


def normalize_columns(mat) -> tuple[sp.csc_matrix, np.ndarray]:
    """Divide each nonzero column by its sum; returns (matrix, 1-based zero columns)."""
    m = sp.csc_matrix(mat, dtype=float, copy=True)
    sums = np.asarray(m.sum(axis=0)).ravel()
    zero = np.flatnonzero(sums <= 0)
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    m.data *= np.repeat(scale, np.diff(m.indptr))
    m.eliminate_zeros()
    return m, zero + 1


def normalize(counts_a: CountMatrix, counts_c: CountMatrix, grid: Optional[QuantizerGrid] = None) -> HmmModel:
    A, zero_a = normalize_columns(counts_a.entries)
    C, zero_c = normalize_columns(counts_c.entries)
    if zero_a.size:
        log.info("%d transition columns were never visited", zero_a.size)
    return HmmModel(A, C, grid=grid, unvisited_transition_cols=zero_a, unvisited_measurement_cols=zero_c)


def _loop_indices(model: SsmModel, grid: QuantizerGrid, rngs, length: int, sqrt_p: np.ndarray):
    """Per-axis 0-based cell indices, shapes (B, length, n) and (B, length, m)."""
    x0 = np.stack([sqrt_p @ rng.standard_normal(model.n) for rng in rngs])
    states, outputs = simulate_batch(model, x0, length - 1, rngs)
    sx = np.stack([ax.quantize(states[..., p]) - 1 for p, ax in enumerate(grid.state_axes)], axis=-1)
    sy = np.stack([ax.quantize(outputs[..., p]) - 1 for p, ax in enumerate(grid.output_axes)], axis=-1)
    return sx, sy


def _flat(axis_idx: np.ndarray, cards) -> np.ndarray:
    return np.ravel_multi_index(tuple(np.moveaxis(axis_idx, -1, 0)), tuple(cards))


def _loop_counts(model: SsmModel, grid: QuantizerGrid, rngs, length: int, sqrt_p: np.ndarray):
    sx, sy = _loop_indices(model, grid, rngs, length, sqrt_p)
    px = _flat(sx, grid.state_cards)
    py = _flat(sy, grid.output_cards)
    N, M = grid.state_count, grid.output_count
    counts_a = CountMatrix.from_events(N, N, px[:, 1:].ravel(), px[:, :-1].ravel())
    counts_c = CountMatrix.from_events(M, N, py.ravel(), px.ravel())
    return counts_a, counts_c


def _batches(model: SsmModel, loops: int, chunk: int, seed: int, max_batch_samples: int):
    if loops < 1 or chunk < 1 or loops * chunk < 2:
        raise ValueError("need loops * chunk >= 2")
    stats = solve_steady_state(model)
    sqrt_p = stationary_sqrt(stats.state_cov)
    children = np.random.SeedSequence(seed).spawn(loops)
    per_batch = max(1, max_batch_samples // chunk)
    for start in range(0, loops, per_batch):
        yield [np.random.default_rng(s) for s in children[start : start + per_batch]], sqrt_p


def train_naive(model: SsmModel, grid: QuantizerGrid, loops: int = 100, chunk: int = 10_000,
                seed: int = 0, max_batch_samples: int = 2_000_000) -> HmmModel:
    """Count transitions over `loops` independent stationary runs of `chunk` samples.

    Loop i uses the i-th child of ``SeedSequence(seed)`` for its initial state
    and noise, so counts do not depend on how loops are batched.
    """
    N, M = grid.state_count, grid.output_count
    total_a = CountMatrix(N, N)
    total_c = CountMatrix(M, N)
    for rngs, sqrt_p in _batches(model, loops, chunk, seed, max_batch_samples):
        ca, cc = _loop_counts(model, grid, rngs, chunk, sqrt_p)
        total_a = total_a.merge(ca)
        total_c = total_c.merge(cc)
    hmm = normalize(total_a, total_c, grid)
    hmm.training = total_a
    return hmm


def train_naive_factors(model: SsmModel, grid: QuantizerGrid, loops: int = 100, chunk: int = 10_000,
                        seed: int = 0, max_batch_samples: int = 2_000_000) -> tuple[list, list, np.ndarray]:
    """Factor-level conditional estimates from the same samples as `train_naive`.

    Returns normalized ``A^p`` (N_p x N) and ``C^p`` (M_p x N) together with
    the visit count of every composite state column.
    """
    N = grid.state_count
    fa = [CountMatrix(c, N) for c in grid.state_cards]
    fc = [CountMatrix(c, N) for c in grid.output_cards]
    visits = np.zeros(N, dtype=np.int64)
    for rngs, sqrt_p in _batches(model, loops, chunk, seed, max_batch_samples):
        sx, sy = _loop_indices(model, grid, rngs, chunk, sqrt_p)
        px = _flat(sx, grid.state_cards)
        visits += np.bincount(px[:, :-1].ravel(), minlength=N)
        for p, c in enumerate(grid.state_cards):
            fa[p] = fa[p].merge(CountMatrix.from_events(c, N, sx[:, 1:, p].ravel(), px[:, :-1].ravel()))
        for p, c in enumerate(grid.output_cards):
            fc[p] = fc[p].merge(CountMatrix.from_events(c, N, sy[..., p].ravel(), px.ravel()))
    return [normalize_columns(m.entries)[0] for m in fa], [normalize_columns(m.entries)[0] for m in fc], visits


def _write_triplets(fh, mat: sp.csc_matrix) -> None:
    coo = mat.tocoo()
    order = np.lexsort((coo.row, coo.col))
    for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        fh.write(f"{r + 1} {c + 1} {float(v)!r}\n")


def write_model(hmm: HmmModel, path) -> None:
    """Text model file: ``N M``, ``A nnz`` + triplets, ``C nnz`` + triplets (1-based)."""
    A = hmm.transition.tocsc()
    C = hmm.measurement.tocsc()
    with open(path, "w") as fh:
        fh.write(f"{hmm.state_count} {hmm.output_count}\n")
        fh.write(f"A {A.nnz}\n")
        _write_triplets(fh, A)
        fh.write(f"C {C.nnz}\n")
        _write_triplets(fh, C)


def _read_block(lines, pos: int, tag: str, shape) -> tuple[sp.csc_matrix, int]:
    head = lines[pos].split()
    if head[0] != tag:
        raise ValueError(f"expected '{tag} nnz' at line {pos + 1}, got {lines[pos]!r}")
    nnz = int(head[1])
    if nnz:
        block = np.loadtxt(lines[pos + 1 : pos + 1 + nnz], ndmin=2)
        rows = block[:, 0].astype(np.int64) - 1
        cols = block[:, 1].astype(np.int64) - 1
        vals = block[:, 2]
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return sp.csc_matrix((vals, (rows, cols)), shape=shape), pos + 1 + nnz


def read_model(path, grid: Optional[QuantizerGrid] = None) -> HmmModel:
    with open(path) as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    N, M = (int(t) for t in lines[0].split())
    A, pos = _read_block(lines, 1, "A", (N, N))
    C, _ = _read_block(lines, pos, "C", (M, N))
    zero_a = np.flatnonzero(np.asarray(A.sum(axis=0)).ravel() <= 0) + 1
    zero_c = np.flatnonzero(np.asarray(C.sum(axis=0)).ravel() <= 0) + 1
    return HmmModel(A, C, grid=grid, unvisited_transition_cols=zero_a, unvisited_measurement_cols=zero_c)
