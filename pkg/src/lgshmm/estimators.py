"""Remote state estimators over an event-triggered, lossy channel.

The sensor applies a send-on-delta trigger to y(k); each transmission is
dropped independently with probability ``1 - lambda``. Two estimators consume
the same event stream: an HMM belief filter over the quantization cells, and
a Kalman filter with intermittent observations that ignores the information
carried by silence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.stats import multivariate_normal, norm

from .lgss import SsmModel, solve_steady_state
from .quantizer import QuantizerGrid
from .trainer_naive import HmmModel

__all__ = [
    "BeliefVector",
    "KalmanState",
    "ChannelEvent",
    "send_on_delta",
    "bernoulli_drop",
    "SendOnDeltaSensor",
    "generate_events",
    "HmmFilter",
    "hmm_filter_step",
    "hmm_point_estimate",
    "stationary_belief",
    "point_belief",
    "kalman_predict",
    "kalman_update",
    "kalman_step",
    "kalman_prior",
]

log = logging.getLogger(__name__)

BELIEF_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class BeliefVector:
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.probs, dtype=float).ravel()
        if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > BELIEF_TOL:
            raise ValueError("belief must be a nonnegative vector summing to one")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, size: int) -> "BeliefVector":
        return cls(np.full(size, 1.0 / size))


@dataclass(frozen=True, eq=False)
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class ChannelEvent:
    """What happened at time k: trigger bit, drop bit, and what arrived."""

    k: int
    xi: int
    zeta: int
    gamma: int
    payload: Optional[tuple] = None

    def __post_init__(self) -> None:
        if self.gamma != (self.xi & self.zeta):
            raise ValueError("gamma must equal xi AND zeta")
        if (self.payload is not None) != bool(self.gamma):
            raise ValueError("payload is present exactly when gamma = 1")

    @property
    def measurement(self) -> Optional[np.ndarray]:
        return None if self.payload is None else np.asarray(self.payload, dtype=float)


def send_on_delta(y_k, y_tau, delta: float) -> int:
    """1 unless ``||y_k - y_tau|| < delta``; a tie with delta triggers a send."""
    a = np.atleast_1d(np.asarray(y_k, dtype=float))
    b = np.atleast_1d(np.asarray(y_tau, dtype=float))
    if a.shape != b.shape:
        raise ValueError("y_k and y_tau must have the same length")
    return 0 if float(np.linalg.norm(a - b)) < delta else 1


def bernoulli_drop(rng: np.random.Generator, lam: float, size=None):
    """Arrival bit(s) zeta with P(zeta = 1) = lam."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    u = rng.random(size)
    return (u < lam).astype(np.int64) if size is not None else int(u < lam)


class SendOnDeltaSensor:
    """Trigger state held by the sensor: the last value it transmitted.

    The sensor cannot observe drops, so the reference moves on every send.
    The first sample is always sent.
    """

    def __init__(self, delta: float) -> None:
        if delta < 0:
            raise ValueError(f"delta must be >= 0, got {delta}")
        self.delta = float(delta)
        self.y_tau: Optional[np.ndarray] = None

    def step(self, y) -> int:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        xi = 1 if self.y_tau is None else send_on_delta(y, self.y_tau, self.delta)
        if xi:
            self.y_tau = y.copy()
        return xi


def generate_events(outputs: np.ndarray, delta: float, lam: float, rng: np.random.Generator) -> list[ChannelEvent]:
    """Channel events for outputs y(0..K); drop bits come from `rng` alone."""
    Y = np.atleast_2d(np.asarray(outputs, dtype=float))
    zeta = bernoulli_drop(rng, lam, size=Y.shape[0])
    sensor = SendOnDeltaSensor(delta)
    events = []
    for k, y in enumerate(Y):
        xi = sensor.step(y)
        gamma = xi & int(zeta[k])
        events.append(ChannelEvent(k, xi, int(zeta[k]), gamma, tuple(y) if gamma else None))
    return events


def stationary_belief(grid: QuantizerGrid, state_cov: np.ndarray) -> BeliefVector:
    """Cell probabilities of N(0, P), by inclusion-exclusion of the CDF."""
    cov = np.atleast_2d(np.asarray(state_cov, dtype=float))
    n = cov.shape[0]
    if n != len(grid.state_axes):
        raise ValueError("covariance dimension does not match the grid")
    if n == 1:
        b = grid.state_axes[0].boundaries / np.sqrt(cov[0, 0])
        probs = np.diff(norm.cdf(b))
    else:
        # CDF on every corner of the boundary lattice, then an n-D difference
        finite = [np.clip(ax.boundaries, -1e3, 1e3) for ax in grid.state_axes]
        mesh = np.meshgrid(*finite, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=1)
        F = multivariate_normal(np.zeros(n), cov, allow_singular=True).cdf(pts).reshape(mesh[0].shape)
        for axis in range(n):
            F = np.diff(F, axis=axis)
        probs = F.ravel()
    probs = np.clip(probs, 0.0, None)
    return BeliefVector(probs / probs.sum())


def point_belief(grid: QuantizerGrid, state) -> BeliefVector:
    p = np.zeros(grid.state_count)
    p[int(grid.quantize_states(np.atleast_2d(state))[0]) - 1] = 1.0
    return BeliefVector(p)


def hmm_point_estimate(belief, grid: QuantizerGrid) -> np.ndarray:
    """Posterior mean over cell representatives."""
    p = belief.probs if isinstance(belief, BeliefVector) else np.asarray(belief, dtype=float)
    return p @ grid.state_centers()


class HmmFilter:
    """Forward filter for one HMM on one event stream.

    Unvisited transition columns act as uniform next-state distributions and
    unvisited measurement columns as uniform emissions. When nothing has been
    received yet the estimator has no trigger reference, and silence carries
    no information.
    """

    def __init__(self, model: HmmModel, grid: QuantizerGrid, delta: float, lam: float) -> None:
        if (model.state_count, model.output_count) != (grid.state_count, grid.output_count):
            raise ValueError("model and grid dimensions differ")
        if delta < 0 or not 0.0 <= lam <= 1.0:
            raise ValueError("need delta >= 0 and lambda in [0, 1]")
        self.grid = grid
        self.delta = float(delta)
        self.lam = float(lam)
        N = grid.state_count
        op = model.transition_operator
        self._A = op if op is not None else sp.csr_matrix(model.transition)
        self._dead_a = np.zeros(N, dtype=bool)
        self._dead_a[np.asarray(model.unvisited_transition_cols, dtype=np.int64) - 1] = True
        self._C = sp.csr_matrix(model.measurement)
        self._dead_c = np.zeros(N, dtype=bool)
        self._dead_c[np.asarray(model.unvisited_measurement_cols, dtype=np.int64) - 1] = True
        self._colsum_c = np.asarray(self._C.sum(axis=0)).ravel()
        self._colsum_c[self._dead_c] = 1.0
        self._out_centers = grid.output_centers()
        self._silence_cache: tuple = (None, None)
        self.last_received_y: Optional[np.ndarray] = None
        self.resets = 0

    def predict(self, probs: np.ndarray) -> np.ndarray:
        out = self._A @ probs
        if self._dead_a.any():
            out += probs[self._dead_a].sum() / probs.size
        return out

    def received_likelihood(self, y) -> np.ndarray:
        i = int(self.grid.quantize_outputs(np.atleast_2d(y))[0]) - 1
        C = self._C
        lo, hi = C.indptr[i], C.indptr[i + 1]
        row = np.zeros(self.grid.state_count)
        row[C.indices[lo:hi]] = C.data[lo:hi]
        row[self._dead_c] = 1.0 / self.grid.output_count
        return row

    def silence_likelihood(self, last_received_y) -> np.ndarray:
        """P(no arrival | state j) = (1 - lam) * colsum_j + lam * sum_{i in T} c_ij."""
        if last_received_y is None:
            return np.ones(self.grid.state_count)
        y = np.atleast_1d(np.asarray(last_received_y, dtype=float))
        cached_y, cached = self._silence_cache
        if cached is not None and np.array_equal(cached_y, y):
            return cached
        inside = np.flatnonzero(np.linalg.norm(self._out_centers - y, axis=1) < self.delta)
        indicator = np.zeros(self.grid.output_count)
        indicator[inside] = 1.0
        in_mass = self._C.T @ indicator
        in_mass[self._dead_c] = inside.size / self.grid.output_count
        lik = (1.0 - self.lam) * self._colsum_c + self.lam * in_mass
        self._silence_cache = (y.copy(), lik)
        return lik

    def update(self, prior: np.ndarray, event: ChannelEvent, last_received_y=None) -> np.ndarray:
        if event.gamma:
            lik = self.received_likelihood(event.measurement)
        else:
            lik = self.silence_likelihood(last_received_y)
        post = prior * lik
        total = post.sum()
        if not total > 0 or not np.isfinite(total):
            self.resets += 1
            log.debug("zero posterior mass at k=%d; belief reset to uniform", event.k)
            return np.full(prior.size, 1.0 / prior.size)
        return post / total

    def step(self, probs: np.ndarray, event: ChannelEvent, predict: bool = True) -> np.ndarray:
        """One filter step; tracks the estimator-side trigger reference itself."""
        prior = self.predict(probs) if predict else probs
        post = self.update(prior, event, self.last_received_y)
        if event.gamma:
            self.last_received_y = event.measurement.copy()
        return post


def hmm_filter_step(model: HmmModel, grid: QuantizerGrid, belief: BeliefVector, event: ChannelEvent,
                    last_received_y, delta: float, lam: float) -> BeliefVector:
    """Predict with A, then weight by the likelihood of what arrived (or did not)."""
    filt = HmmFilter(model, grid, delta, lam)
    post = filt.update(filt.predict(belief.probs), event, last_received_y)
    return BeliefVector(post)


def _psd_repair(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    if w.min() < 0:
        log.warning("covariance lost positive semidefiniteness (min eigenvalue %.3g); clamped", w.min())
        cov = (V * np.clip(w, 0.0, None)) @ V.T
        cov = 0.5 * (cov + cov.T)
    return cov


def kalman_predict(model: SsmModel, state: KalmanState) -> KalmanState:
    A = model.state_matrix
    return KalmanState(A @ state.mean, _psd_repair(A @ state.cov @ A.T + model.Q))


def kalman_update(model: SsmModel, state: KalmanState, y) -> KalmanState:
    """Measurement update in Joseph form."""
    C, R = model.output_matrix, model.R
    y = np.atleast_1d(np.asarray(y, dtype=float))
    S = C @ state.cov @ C.T + R
    K = np.linalg.solve(S.T, (state.cov @ C.T).T).T
    mean = state.mean + K @ (y - C @ state.mean)
    I_KC = np.eye(state.mean.size) - K @ C
    cov = I_KC @ state.cov @ I_KC.T + K @ R @ K.T
    return KalmanState(mean, _psd_repair(cov))


def kalman_step(model: SsmModel, state: KalmanState, event: ChannelEvent) -> KalmanState:
    """Time update, then a measurement update only if something arrived."""
    pred = kalman_predict(model, state)
    return kalman_update(model, pred, event.measurement) if event.gamma else pred


def kalman_prior(model: SsmModel) -> KalmanState:
    stats = solve_steady_state(model)
    return KalmanState(np.zeros(model.n), stats.state_cov.copy())
