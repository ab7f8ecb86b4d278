"""Reduced-complexity HMM training from one standard column per factor.

Only the column of the cell holding the origin is trained, from two-step runs
that start at x(0) = 0. Every other column of a factor matrix is that column
shifted by ``g_p = floor((mu_t - mu_s) / h_p)`` rows, where ``mu`` is the
predictor ``[A]_p`` (or ``[C]_p``) evaluated at a cell center. The full
matrices are the column-wise Kronecker (Khatri-Rao) products of the factors.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .lgss import SsmModel
from .quantizer import QuantizerGrid, decompose_index
from .trainer_naive import HmmModel, normalize_columns

__all__ = [
    "FactorColumnSet",
    "ShiftPlan",
    "TailCellError",
    "train_standard_columns",
    "compute_shift",
    "shift_plan",
    "replicate_columns",
    "khatri_rao",
    "ShiftedKhatriRaoOperator",
    "train_structured",
]

log = logging.getLogger(__name__)


class TailCellError(ValueError):
    """A shift was requested for a column touching a tail cell."""


@dataclass(frozen=True, eq=False)
class FactorColumnSet:
    standard_col_index: int
    state_factor_cols: list
    meas_factor_cols: list
    sample_count: int
    discarded: int = 0

    @property
    def discard_rate(self) -> float:
        total = self.sample_count + self.discarded
        return self.discarded / total if total else 0.0


@dataclass(frozen=True, eq=False)
class ShiftPlan:
    """Row offsets per target column (0-based rows of the arrays) and axis."""

    state_offsets: np.ndarray
    output_offsets: np.ndarray
    tail_columns: np.ndarray


def train_standard_columns(model: SsmModel, grid: QuantizerGrid, loops: int, seed: int = 0,
                           batch: int = 100_000) -> FactorColumnSet:
    """Count the standard columns from `loops` two-step runs started at zero.

    A run contributes only if x(1) lands in the cell containing the origin;
    the rest are counted as discarded.
    """
    if loops < 1:
        raise ValueError("loops must be >= 1")
    n, m = model.n, model.m
    A, C = model.state_matrix, model.output_matrix
    q = np.where(model.process_noise_std > 1e-300, model.process_noise_std, 0.0)
    r = np.where(model.measurement_noise_std > 1e-300, model.measurement_noise_std, 0.0)
    j_s = grid.zero_state_index()
    state_cols = [np.zeros(c) for c in grid.state_cards]
    meas_cols = [np.zeros(c) for c in grid.output_cards]
    kept = 0
    n_batches = math.ceil(loops / batch)
    children = np.random.SeedSequence(seed).spawn(n_batches)
    for b, child in enumerate(children):
        size = min(batch, loops - b * batch)
        rng = np.random.default_rng(child)
        w = rng.standard_normal((size, 2, n)) * q
        v = rng.standard_normal((size, m)) * r
        x1 = w[:, 0]  # A @ x(0) vanishes
        x2 = x1 @ A.T + w[:, 1]
        y1 = x1 @ C.T + v
        mask = grid.quantize_states(x1) == j_s
        kept += int(mask.sum())
        for p, ax in enumerate(grid.state_axes):
            idx = ax.quantize(x2[mask, p]) - 1
            state_cols[p] += np.bincount(idx, minlength=ax.cardinality)
        for p, ax in enumerate(grid.output_axes):
            idx = ax.quantize(y1[mask, p]) - 1
            meas_cols[p] += np.bincount(idx, minlength=ax.cardinality)
    if kept == 0:
        raise RuntimeError(f"no two-step run out of {loops} kept x(1) in the zero cell; increase loops")
    log.info("standard columns: kept %d of %d runs", kept, loops)
    return FactorColumnSet(j_s, state_cols, meas_cols, kept, loops - kept)


def _is_tail(tup: Sequence[int], cards: Sequence[int]) -> bool:
    return any(i in (1, c) for i, c in zip(tup, cards))


def compute_shift(grid: QuantizerGrid, model: SsmModel, p: int, kind: str, target_col: int, standard_col: int,
                  shift_rule: str = "floor") -> int:
    """Integer row offset for axis `p` (0-based) between two 1-based columns."""
    cards = grid.state_cards
    for col in (target_col, standard_col):
        if _is_tail(decompose_index(col, cards), cards):
            raise TailCellError(f"column {col} touches a tail cell")
    centers = grid.state_centers()
    coeffs, width = _axis_terms(grid, model, p, kind)
    mu_t = float(coeffs @ centers[target_col - 1])
    mu_s = float(coeffs @ centers[standard_col - 1])
    return int(_rule(shift_rule)((mu_t - mu_s) / width))


def _axis_terms(grid: QuantizerGrid, model: SsmModel, p: int, kind: str):
    if kind == "state":
        return model.state_matrix[p], grid.state_axes[p].width
    if kind == "output":
        return model.output_matrix[p], grid.output_axes[p].width
    raise ValueError(f"kind must be 'state' or 'output', got {kind!r}")


# center differences carry rounding; do not let an exact multiple of h floor down a row
_FLOOR_GUARD = 1e-9
_SHIFT_RULES = {"floor": lambda x: np.floor(np.asarray(x) + _FLOOR_GUARD), "nearest": np.rint}


def _rule(shift_rule: str):
    try:
        return _SHIFT_RULES[shift_rule]
    except KeyError:
        raise ValueError(f"shift_rule must be one of {sorted(_SHIFT_RULES)}, got {shift_rule!r}") from None


def shift_plan(grid: QuantizerGrid, model: SsmModel, standard_col: int, shift_rule: str = "floor") -> ShiftPlan:
    """Offsets for every column at once.

    Tail columns borrow the rule of the nearest interior column, i.e. their
    tail axis indices are clamped into 2..card-1 before taking centers.
    ``shift_rule="nearest"`` rounds the displacement instead of flooring it,
    which removes the systematic downward bias of up to one row.
    """
    to_int = _rule(shift_rule)
    cards = np.array(grid.state_cards)
    tuples = grid.state_axis_indices()
    tail = np.any((tuples == 1) | (tuples == cards), axis=1)
    clamped = np.clip(tuples, 2, cards - 1)
    centers = np.stack([ax.centers[clamped[:, p] - 1] for p, ax in enumerate(grid.state_axes)], axis=1)
    c_s = grid.state_centers()[standard_col - 1]

    def offsets(coeff_rows, widths):
        mu = centers @ coeff_rows.T
        mu_s = coeff_rows @ c_s
        return to_int((mu - mu_s) / widths).astype(np.int64)

    g_x = offsets(model.state_matrix, np.array([ax.width for ax in grid.state_axes]))
    g_y = offsets(model.output_matrix, np.array([ax.width for ax in grid.output_axes]))
    return ShiftPlan(g_x, g_y, np.flatnonzero(tail) + 1)


def _shifted_factor(column: np.ndarray, offsets: np.ndarray) -> sp.csc_matrix:
    """card x N matrix whose column j is `column` moved down by offsets[j] rows."""
    card = column.size
    rows_s = np.flatnonzero(column)
    vals_s = column[rows_s]
    N = offsets.size
    rows = rows_s[None, :] + offsets[:, None]
    cols = np.broadcast_to(np.arange(N)[:, None], rows.shape)
    vals = np.broadcast_to(vals_s[None, :], rows.shape)
    keep = (rows >= 0) & (rows < card)
    mat = sp.csc_matrix((vals[keep], (rows[keep], cols[keep])), shape=(card, N))
    mat, _ = normalize_columns(mat)
    return mat


def replicate_columns(cols: FactorColumnSet, grid: QuantizerGrid, model: SsmModel,
                      shift_rule: str = "floor") -> tuple[list, list]:
    """Factor matrices A^1..A^n and C^1..C^m, each column normalized.

    Rows shifted outside 1..card are dropped; the per-column constant
    between target and standard entries is taken as one.
    """
    plan = shift_plan(grid, model, cols.standard_col_index, shift_rule)
    state = [_shifted_factor(c, plan.state_offsets[:, p]) for p, c in enumerate(cols.state_factor_cols)]
    meas = [_shifted_factor(c, plan.output_offsets[:, p]) for p, c in enumerate(cols.meas_factor_cols)]
    return state, meas


def _kr_pair(X: sp.csc_matrix, Y: sp.csc_matrix) -> sp.csc_matrix:
    X = sp.csc_matrix(X)
    Y = sp.csc_matrix(Y)
    X.sort_indices()
    Y.sort_indices()
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"Khatri-Rao factors need equal column counts, got {X.shape[1]} and {Y.shape[1]}")
    N = X.shape[1]
    nx = np.diff(X.indptr)
    ny = np.diff(Y.indptr)
    counts = nx * ny
    indptr = np.concatenate([[0], np.cumsum(counts)])
    col = np.repeat(np.arange(N), counts)
    t = np.arange(indptr[-1]) - indptr[col]
    u = t // np.maximum(ny[col], 1)
    v = t % np.maximum(ny[col], 1)
    xi = X.indptr[col] + u
    yi = Y.indptr[col] + v
    rows = X.indices[xi].astype(np.int64) * Y.shape[0] + Y.indices[yi]
    data = X.data[xi] * Y.data[yi]
    return sp.csc_matrix((data, rows, indptr), shape=(X.shape[0] * Y.shape[0], N))


def khatri_rao(factors: Sequence) -> sp.csc_matrix:
    """Column-wise Kronecker product, first factor most significant."""
    if not factors:
        raise ValueError("need at least one factor")
    return reduce(_kr_pair, [sp.csc_matrix(f) for f in factors])


class ShiftedKhatriRaoOperator:
    """Apply A = KR(shifted standard columns) to a vector without forming A.

    Column j of factor p is the standard column ``s_p`` moved down by
    ``g_p(j)`` rows and renormalized after truncation. Columns sharing the
    same offset tuple differ only by scale, so ``A @ pi`` is a weighted
    histogram over offset tuples pushed through one Toeplitz matrix per axis.
    Columns whose shifted support leaves the grid on some axis are zero in A
    and are reported in `dead` (1-based).
    """

    def __init__(self, standard_cols: Sequence[np.ndarray], offsets: np.ndarray) -> None:
        offsets = np.asarray(offsets, dtype=np.int64)
        cols = [np.asarray(c, dtype=float) / np.sum(c) for c in standard_cols]
        if offsets.ndim != 2 or offsets.shape[1] != len(cols):
            raise ValueError("offsets must be (N, number of factors)")
        self.cards = tuple(c.size for c in cols)
        self._gmin = offsets.min(axis=0)
        self._ranges = tuple(int(r) for r in offsets.max(axis=0) - self._gmin + 1)
        self._toeplitz = []
        scale = np.ones(offsets.shape[0])
        for p, col in enumerate(cols):
            g = self._gmin[p] + np.arange(self._ranges[p])
            rows = np.arange(col.size)[:, None] - g[None, :]
            ok = (rows >= 0) & (rows < col.size)
            T = np.where(ok, col[np.clip(rows, 0, col.size - 1)], 0.0)
            self._toeplitz.append(T)
            scale *= T.sum(axis=0)[offsets[:, p] - self._gmin[p]]
        live = scale > 0
        self._scale = np.divide(1.0, scale, out=np.zeros_like(scale), where=live)
        self._bins = np.ravel_multi_index(tuple((offsets - self._gmin).T), self._ranges)
        self.dead = np.flatnonzero(~live) + 1
        self.shape = (int(np.prod(self.cards)), offsets.shape[0])

    def __matmul__(self, probs: np.ndarray) -> np.ndarray:
        W = np.bincount(self._bins, weights=np.asarray(probs) * self._scale, minlength=int(np.prod(self._ranges)))
        W = W.reshape(self._ranges)
        for p, T in enumerate(self._toeplitz):
            W = np.moveaxis(np.tensordot(T, W, axes=(1, p)), 0, p)
        return W.ravel()


def train_structured(model: SsmModel, grid: QuantizerGrid, loops: int, seed: int = 0,
                     shift_rule: str = "floor") -> HmmModel:
    cols = train_standard_columns(model, grid, loops, seed)
    state, meas = replicate_columns(cols, grid, model, shift_rule)
    A, zero_a = normalize_columns(khatri_rao(state))
    C, zero_c = normalize_columns(khatri_rao(meas))
    plan = shift_plan(grid, model, cols.standard_col_index, shift_rule)
    operator = ShiftedKhatriRaoOperator(cols.state_factor_cols, plan.state_offsets)
    return HmmModel(A, C, state_factors=state, measurement_factors=meas, grid=grid,
                    unvisited_transition_cols=zero_a, unvisited_measurement_cols=zero_c,
                    training=cols, transition_operator=operator)
