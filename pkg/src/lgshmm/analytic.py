"""Closed-form Gaussian integrals behind the factor-matrix entries.

A factor entry is the probability that the predictor ``alpha = [A]_p x`` lies
in the interval spanned by the current cell and the next coordinate lies in
row cell ``i``. Its integrand is

    f(alpha, out) = gauss(alpha, sigma_bar) * gauss(out - alpha, q),

and the midpoint rule approximates the rectangle integral by area times the
integrand at the center. ``oracle_integral`` is the brute-force reference
used throughout the test suite.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .lgss import SsmModel, SteadyStateStats
from .quantizer import QuantizerGrid

__all__ = [
    "gauss_pdf",
    "GaussKernelSpec",
    "Rect",
    "midpoint_rule",
    "midpoint_psi",
    "lemma_bound",
    "midpoint_error_bound",
    "composite_midpoint",
    "oracle_integral",
    "kappa",
    "alpha_interval",
    "factor_kernel",
    "factor_rect",
    "analytic_factor",
    "write_audit_csv",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def gauss_pdf(x, sigma):
    """Zero-mean normal density with standard deviation `sigma`."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * (x / sigma) ** 2) / (_SQRT_2PI * sigma)
    return float(out) if out.ndim == 0 else out


def _d1(x, sigma):
    return -x / sigma**2 * gauss_pdf(x, sigma)


def _d2(x, sigma):
    return (x**2 / sigma**4 - 1.0 / sigma**2) * gauss_pdf(x, sigma)


@dataclass(frozen=True)
class GaussKernelSpec:
    predictor_std: float
    noise_std: float

    def __post_init__(self) -> None:
        if not (self.predictor_std > 0 and self.noise_std > 0):
            raise ValueError("kernel standard deviations must be positive")

    def density(self, alpha, out):
        return gauss_pdf(alpha, self.predictor_std) * gauss_pdf(np.subtract(out, alpha), self.noise_std)

    def d2_alpha(self, alpha, out):
        s, q = self.predictor_std, self.noise_std
        w = np.subtract(out, alpha)
        return _d2(alpha, s) * gauss_pdf(w, q) - 2.0 * _d1(alpha, s) * _d1(w, q) + gauss_pdf(alpha, s) * _d2(w, q)

    def d2_out(self, alpha, out):
        return gauss_pdf(alpha, self.predictor_std) * _d2(np.subtract(out, alpha), self.noise_std)


@dataclass(frozen=True)
class Rect:
    alpha_lo: float
    alpha_hi: float
    out_lo: float
    out_hi: float

    def __post_init__(self) -> None:
        vals = (self.alpha_lo, self.alpha_hi, self.out_lo, self.out_hi)
        if not all(np.isfinite(vals)):
            raise ValueError("rectangle bounds must be finite")
        if not (self.alpha_lo < self.alpha_hi and self.out_lo < self.out_hi):
            raise ValueError("rectangle bounds must be increasing")

    @property
    def alpha_width(self) -> float:
        return self.alpha_hi - self.alpha_lo

    @property
    def out_width(self) -> float:
        return self.out_hi - self.out_lo

    @property
    def area(self) -> float:
        return self.alpha_width * self.out_width

    @property
    def alpha_mid(self) -> float:
        return 0.5 * (self.alpha_lo + self.alpha_hi)

    @property
    def out_mid(self) -> float:
        return 0.5 * (self.out_lo + self.out_hi)


def midpoint_rule(f: Callable, rect: Rect) -> float:
    """Area times ``f`` at the rectangle center, for any integrand."""
    return rect.area * float(f(rect.alpha_mid, rect.out_mid))


def midpoint_psi(kernel: GaussKernelSpec, rect: Rect) -> float:
    return midpoint_rule(kernel.density, rect)


def lemma_bound(rect: Rect, max_abs_d2_alpha: float, max_abs_d2_out: float) -> float:
    """Midpoint-rule error bound from the two second-partial maxima."""
    da, do = rect.alpha_width, rect.out_width
    return da**3 * do / 24.0 * max_abs_d2_alpha + da * do**3 / 24.0 * max_abs_d2_out


def _candidates(lo: float, hi: float, samples: int, extra) -> np.ndarray:
    pts = np.linspace(lo, hi, samples)
    extra = np.clip(np.asarray(extra, dtype=float), lo, hi)
    return np.unique(np.concatenate([pts, extra]))


def _max_abs(fn: Callable, rect: Rect, alphas: np.ndarray, outs: np.ndarray, pairs) -> float:
    A, O = np.meshgrid(alphas, outs, indexing="ij")
    vals = np.abs(fn(A, O))
    best = float(vals.max())
    pa, po = pairs
    if pa.size:
        best = max(best, float(np.abs(fn(pa, po)).max()))
    k = int(np.argmax(vals))
    x0 = np.array([A.ravel()[k], O.ravel()[k]])
    # polish the best sample; a local refinement never lowers the estimate
    res = minimize(
        lambda z: -abs(float(fn(z[0], z[1]))),
        x0,
        method="L-BFGS-B",
        bounds=[(rect.alpha_lo, rect.alpha_hi), (rect.out_lo, rect.out_hi)],
    )
    return max(best, -float(res.fun))


def midpoint_error_bound(kernel: GaussKernelSpec, rect: Rect, samples: int = 64) -> float:
    """Error bound for `midpoint_psi`, maxima found by dense sampling.

    The sample grid is augmented with the zeros and extrema of the 1-D Gaussian
    second derivative (0, +/- sigma, +/- sqrt(3) sigma) along both factors.
    """
    s, q = kernel.predictor_std, kernel.noise_std
    r3 = math.sqrt(3.0)
    alphas = _candidates(rect.alpha_lo, rect.alpha_hi, samples, [0.0, s, -s, r3 * s, -r3 * s])
    shifts = np.array([0.0, q, -q, r3 * q, -r3 * q])
    outs = _candidates(rect.out_lo, rect.out_hi, samples, np.add.outer(alphas[[0, -1]], shifts).ravel())
    pa = np.repeat(alphas, shifts.size)
    po = np.clip(pa + np.tile(shifts, alphas.size), rect.out_lo, rect.out_hi)
    m_alpha = _max_abs(kernel.d2_alpha, rect, alphas, outs, (pa, po))
    m_out = _max_abs(kernel.d2_out, rect, alphas, outs, (pa, po))
    return lemma_bound(rect, m_alpha, m_out)


def composite_midpoint(f: Callable, rect: Rect, subdivisions: int = 256) -> float:
    """Composite midpoint rule on a subdivisions x subdivisions grid."""
    da = rect.alpha_width / subdivisions
    do = rect.out_width / subdivisions
    a = rect.alpha_lo + (np.arange(subdivisions) + 0.5) * da
    o = rect.out_lo + (np.arange(subdivisions) + 0.5) * do
    total = 0.0
    for start in range(0, subdivisions, 256):
        chunk = a[start : start + 256]
        vals = np.broadcast_to(f(chunk[:, None], o[None, :]), (chunk.size, o.size))
        total += float(vals.sum())
    return total * da * do


def oracle_integral(kernel: GaussKernelSpec, rect: Rect, subdivisions: int = 2048) -> float:
    """Brute-force reference integral of the kernel over `rect`."""
    if subdivisions < 256:
        raise ValueError("oracle_integral needs at least 256 subdivisions")
    n = int(subdivisions)
    da = rect.alpha_width / n
    do = rect.out_width / n
    a = rect.alpha_lo + (np.arange(n) + 0.5) * da
    o = rect.out_lo + (np.arange(n) + 0.5) * do
    q = kernel.noise_std
    inv = -0.5 / q**2
    inner = np.empty(n)
    work = np.empty((128, n))
    for start in range(0, n, 128):
        rows = a[start : start + 128]
        buf = work[: rows.size]
        np.subtract(o[None, :], rows[:, None], out=buf)
        np.multiply(buf, buf, out=buf)
        np.multiply(buf, inv, out=buf)
        np.exp(buf, out=buf)
        inner[start : start + rows.size] = buf.sum(axis=1)
    weights = gauss_pdf(a, kernel.predictor_std) / (_SQRT_2PI * q)
    return float(weights @ inner) * da * do


def kappa(kernel: GaussKernelSpec, target_rect: Rect, standard_rect: Rect) -> float:
    """Ratio of the constant parts of a target and a standard entry."""
    s = kernel.predictor_std
    num = target_rect.area * gauss_pdf(target_rect.alpha_mid, s)
    den = standard_rect.area * gauss_pdf(standard_rect.alpha_mid, s)
    return num / den


def alpha_interval(row, lo, hi) -> tuple[float, float]:
    """Range of ``row @ x`` over the box ``lo <= x <= hi``."""
    row = np.asarray(row, dtype=float)
    a = row * np.asarray(lo, dtype=float)
    b = row * np.asarray(hi, dtype=float)
    return float(np.minimum(a, b).sum()), float(np.maximum(a, b).sum())


def _factor_parts(model: SsmModel, stats: SteadyStateStats, grid: QuantizerGrid, p: int, kind: str):
    if kind == "state":
        return model.state_matrix[p], stats.predictor_state_std[p], model.process_noise_std[p], grid.state_axes[p]
    if kind == "output":
        return model.output_matrix[p], stats.predictor_output_std[p], model.measurement_noise_std[p], grid.output_axes[p]
    raise ValueError(f"kind must be 'state' or 'output', got {kind!r}")


def factor_kernel(model: SsmModel, stats: SteadyStateStats, grid: QuantizerGrid, p: int, kind: str = "state") -> GaussKernelSpec:
    _, sbar, q, _ = _factor_parts(model, stats, grid, p, kind)
    return GaussKernelSpec(float(sbar), float(q))


def factor_rect(model: SsmModel, grid: QuantizerGrid, p: int, row: int, col: int, kind: str = "state") -> Rect:
    """Rectangle for factor entry (row, col), both 1-based.

    Both the row cell and every axis of the column cell must be interior.
    """
    coeffs = model.state_matrix[p] if kind == "state" else model.output_matrix[p]
    axis = grid.state_axes[p] if kind == "state" else grid.output_axes[p]
    tup = grid.state_axis_indices()[col - 1]
    lo, hi = [], []
    for ax, i in zip(grid.state_axes, tup):
        if i in (1, ax.cardinality):
            raise ValueError("tail cells have no finite rectangle")
        b = ax.boundaries
        lo.append(b[i - 1])
        hi.append(b[i])
    if row in (1, axis.cardinality):
        raise ValueError("tail rows have no finite rectangle")
    a_lo, a_hi = alpha_interval(coeffs, lo, hi)
    b = axis.boundaries
    return Rect(a_lo, a_hi, float(b[row - 1]), float(b[row]))


def analytic_factor(model: SsmModel, stats: SteadyStateStats, grid: QuantizerGrid, p: int, kind: str = "state") -> np.ndarray:
    """Column-stochastic factor matrix (card_p x N) from midpoint entries.

    Interior rows carry the normalized midpoint value ``h * gauss(mid - mu, q)``
    with ``mu = [A]_p @ center(j)``; the two tail rows share the residual mass
    in proportion to the Gaussian tail probabilities. Tail columns use the
    pseudo-centers of their tail cells.
    """
    coeffs, _, q, axis = _factor_parts(model, stats, grid, p, kind)
    mu = grid.state_centers() @ np.asarray(coeffs, dtype=float)
    mids = axis.centers[1:-1]
    h = axis.width
    interior = h * gauss_pdf(mids[:, None] - mu[None, :], q)
    resid = np.clip(1.0 - interior.sum(axis=0), 0.0, None)
    low = ndtr((axis.lower - mu) / q)
    high = ndtr((mu - axis.upper) / q)
    tails = low + high
    share = np.divide(low, tails, out=np.full_like(low, 0.5), where=tails > 0)
    out = np.vstack([resid * share, interior, resid * (1.0 - share)])
    return out / out.sum(axis=0, keepdims=True)


def write_audit_csv(model: SsmModel, stats: SteadyStateStats, grid: QuantizerGrid, p: int, columns, path,
                    kind: str = "state", subdivisions: int = 256) -> None:
    """Per-entry audit rows ``i j psi oracle bound`` for interior entries."""
    kernel = factor_kernel(model, stats, grid, p, kind)
    card = (grid.state_axes if kind == "state" else grid.output_axes)[p].cardinality
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=" ")
        writer.writerow(["i", "j", "psi", "oracle", "bound"])
        for j in columns:
            for i in range(2, card):
                rect = factor_rect(model, grid, p, i, j, kind)
                writer.writerow([i, j, repr(midpoint_psi(kernel, rect)),
                                 repr(oracle_integral(kernel, rect, subdivisions)),
                                 repr(midpoint_error_bound(kernel, rect))])
