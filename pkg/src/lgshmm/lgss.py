"""Linear Gaussian state-space model used as the training emulator.

The system is

    x(k+1) = A x(k) + B u(k) + w(k)
    y(k)   = C x(k) + D u(k) + v(k)

with diagonal noise covariances Q = diag(q**2), R = diag(r**2).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "SsmModel",
    "SteadyStateStats",
    "Trajectory",
    "ConvergenceError",
    "ConfigurationError",
    "solve_steady_state",
    "simulate",
    "simulate_batch",
    "compensate_input",
    "stationary_sqrt",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

# Degenerate noise levels are floored rather than rejected.
STD_FLOOR = 1e-300


class ConvergenceError(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


def _sampling_scale(std: np.ndarray) -> np.ndarray:
    # floored stds stand for "no noise" and must produce exact zeros
    return np.where(std > STD_FLOOR, std, 0.0)


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class SsmModel:
    """Stable linear Gaussian system with diagonal noise covariances.

    Parameters
    ----------
    state_matrix : (n, n) array
    output_matrix : (m, n) array
    process_noise_std : length-n array of q_p
    measurement_noise_std : length-m array of r_p
    input_matrix, feedthrough_matrix : optional (n, u) and (m, u) arrays
    """

    state_matrix: np.ndarray
    output_matrix: np.ndarray
    process_noise_std: np.ndarray
    measurement_noise_std: np.ndarray
    input_matrix: Optional[np.ndarray] = None
    feedthrough_matrix: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        A = _as_matrix(self.state_matrix, "state_matrix")
        C = _as_matrix(self.output_matrix, "output_matrix")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"state_matrix must be square, got {A.shape}")
        if C.shape[1] != n:
            raise ValueError(f"output_matrix must have {n} columns, got {C.shape}")
        q = np.atleast_1d(np.asarray(self.process_noise_std, dtype=float))
        r = np.atleast_1d(np.asarray(self.measurement_noise_std, dtype=float))
        if q.shape != (n,):
            raise ValueError(f"process_noise_std must have length {n}")
        if r.shape != (C.shape[0],):
            raise ValueError(f"measurement_noise_std must have length {C.shape[0]}")
        if np.any(q < 0) or np.any(r < 0):
            raise ValueError("noise standard deviations must be nonnegative")
        q = np.maximum(q, STD_FLOOR)
        r = np.maximum(r, STD_FLOOR)
        radius = float(np.max(np.abs(np.linalg.eigvals(A))))
        if radius >= 1.0:
            raise ValueError(f"state_matrix must be stable, spectral radius is {radius:.6g}")
        B = self.input_matrix
        D = self.feedthrough_matrix
        if B is not None:
            B = _as_matrix(B, "input_matrix")
            if B.shape[0] != n:
                raise ValueError(f"input_matrix must have {n} rows, got {B.shape}")
        if D is not None:
            D = _as_matrix(D, "feedthrough_matrix")
            if D.shape[0] != C.shape[0]:
                raise ValueError(f"feedthrough_matrix must have {C.shape[0]} rows")
            if B is not None and D.shape[1] != B.shape[1]:
                raise ValueError("input_matrix and feedthrough_matrix disagree on input width")
        for name, value in [
            ("state_matrix", A),
            ("output_matrix", C),
            ("process_noise_std", q),
            ("measurement_noise_std", r),
            ("input_matrix", B),
            ("feedthrough_matrix", D),
        ]:
            if value is not None:
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.state_matrix.shape[0]

    @property
    def m(self) -> int:
        return self.output_matrix.shape[0]

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.process_noise_std**2)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.measurement_noise_std**2)

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.state_matrix))))


@dataclass(frozen=True, eq=False)
class SteadyStateStats:
    state_cov: np.ndarray
    state_std: np.ndarray
    output_std: np.ndarray
    predictor_state_std: np.ndarray
    predictor_output_std: np.ndarray


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States x(0..K) and outputs y(0..K), aligned index for index."""

    states: np.ndarray
    outputs: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if states.shape[0] != outputs.shape[0]:
            raise ValueError("states and outputs must have the same number of samples")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "outputs", outputs)

    def __len__(self) -> int:
        return self.states.shape[0]


def solve_steady_state(model: SsmModel, tol: float = 1e-12, max_iter: int = 1_000_000) -> SteadyStateStats:
    """Stationary covariance from the fixed-point iteration P <- A P A' + Q.

    Starts from P = Q and stops once the largest elementwise change drops
    below `tol`.
    """
    A = model.state_matrix
    Q = model.Q
    P = Q.copy()
    for _ in range(max_iter):
        P_next = A @ P @ A.T + Q
        if np.max(np.abs(P_next - P)) < tol:
            P = 0.5 * (P_next + P_next.T)
            break
        P = P_next
    else:
        raise ConvergenceError(
            f"Lyapunov iteration did not converge in {max_iter} steps "
            f"(spectral radius estimate {model.spectral_radius:.6g})"
        )
    C = model.output_matrix
    state_std = np.sqrt(np.clip(np.diag(P), 0.0, None))
    output_std = np.sqrt(np.clip(np.diag(C @ P @ C.T + model.R), 0.0, None))
    pred_state = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", A, P, A), 0.0, None))
    pred_output = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", C, P, C), 0.0, None))
    return SteadyStateStats(P, state_std, output_std, pred_state, pred_output)


def stationary_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root that tolerates singular covariances."""
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _check_inputs(model: SsmModel, inputs, length: int) -> Optional[np.ndarray]:
    if inputs is None:
        return None
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.size == 0:
        return None
    if model.input_matrix is None or model.feedthrough_matrix is None:
        raise ConfigurationError("nonempty inputs need both input_matrix and feedthrough_matrix")
    if u.shape[0] < length:
        raise ValueError(f"need at least {length} input samples, got {u.shape[0]}")
    if u.shape[1] != model.input_matrix.shape[1]:
        raise ValueError("input width does not match input_matrix")
    return u


def simulate(
    model: SsmModel,
    length: int,
    initial_state=None,
    seed: Optional[int] = None,
    inputs=None,
    noise: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> Trajectory:
    """Simulate `length` transitions, returning x(0..length) and y(0..length).

    The initial state defaults to a draw from the stationary distribution.
    `noise` may carry a recorded pair (w, v) with shapes (length, n) and
    (length + 1, m); otherwise both are drawn from a PCG64 generator seeded
    with `seed` (w first, then v, via numpy's standard normal sampler).
    Inputs u(0..length) enter through B and D when given.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    n, m = model.n, model.m
    rng = np.random.default_rng(seed)
    if noise is None:
        w = rng.standard_normal((length, n)) * _sampling_scale(model.process_noise_std)
        v = rng.standard_normal((length + 1, m)) * _sampling_scale(model.measurement_noise_std)
    else:
        w, v = (np.asarray(a, dtype=float) for a in noise)
        if w.shape != (length, n) or v.shape != (length + 1, m):
            raise ValueError("recorded noise has the wrong shape")
    if initial_state is None:
        stats = solve_steady_state(model)
        x0 = stationary_sqrt(stats.state_cov) @ rng.standard_normal(n)
    else:
        x0 = np.asarray(initial_state, dtype=float).reshape(n)
    u = _check_inputs(model, inputs, length + 1)

    A, C = model.state_matrix, model.output_matrix
    drive = w if u is None else w + u[:length] @ model.input_matrix.T
    states = np.empty((length + 1, n))
    states[0] = x0
    for k in range(length):
        states[k + 1] = A @ states[k] + drive[k]
    outputs = states @ C.T + v
    if u is not None:
        outputs += u[: length + 1] @ model.feedthrough_matrix.T
    return Trajectory(states, outputs, seed)


def simulate_batch(model: SsmModel, initial_states: np.ndarray, length: int, rngs) -> tuple[np.ndarray, np.ndarray]:
    """Run independent zero-input trajectories side by side.

    Trajectory b draws its own w (length, n) then v (length + 1, m) from
    `rngs[b]`, so results do not depend on how trajectories are batched.
    Returns states (B, length + 1, n) and outputs (B, length + 1, m).
    """
    x0 = np.atleast_2d(np.asarray(initial_states, dtype=float))
    batch, n = x0.shape
    m = model.m
    w = np.empty((batch, length, n))
    v = np.empty((batch, length + 1, m))
    for b, rng in enumerate(rngs):
        w[b] = rng.standard_normal((length, n))
        v[b] = rng.standard_normal((length + 1, m))
    w *= _sampling_scale(model.process_noise_std)
    v *= _sampling_scale(model.measurement_noise_std)
    At = model.state_matrix.T
    states = np.empty((batch, length + 1, n))
    states[:, 0] = x0
    for k in range(length):
        states[:, k + 1] = states[:, k] @ At + w[:, k]
    outputs = states @ model.output_matrix.T + v
    return states, outputs


def compensate_input(model: SsmModel, raw_traj: Trajectory, inputs) -> Trajectory:
    """Remove the forced response of the input from a measured trajectory.

    Runs x_zs(k+1) = A x_zs(k) + B u(k) from x_zs(0) = 0 and returns
    x(k) = x_raw(k) - x_zs(k), y(k) = y_raw(k) - C x_zs(k) - D u(k).
    """
    K = len(raw_traj)
    u = _check_inputs(model, inputs, K)
    if u is None:
        return Trajectory(raw_traj.states.copy(), raw_traj.outputs.copy(), raw_traj.seed)
    A, B = model.state_matrix, model.input_matrix
    x_zs = np.zeros((K, model.n))
    for k in range(K - 1):
        x_zs[k + 1] = A @ x_zs[k] + B @ u[k]
    states = raw_traj.states - x_zs
    outputs = raw_traj.outputs - x_zs @ model.output_matrix.T - u[:K] @ model.feedthrough_matrix.T
    return Trajectory(states, outputs, raw_traj.seed)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    n = traj.states.shape[1]
    m = traj.outputs.shape[1]
    header = ["k"] + [f"x_{i + 1}" for i in range(n)] + [f"y_{i + 1}" for i in range(m)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(len(traj)):
            row = [str(k)] + [repr(float(v)) for v in traj.states[k]] + [repr(float(v)) for v in traj.outputs[k]]
            writer.writerow(row)


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, row)) for row in reader]
    n = sum(1 for h in header if h.startswith("x_"))
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return Trajectory(data[:, 1 : 1 + n], data[:, 1 + n :])
