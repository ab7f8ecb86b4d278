"""Event-triggered estimation experiments and the rate/error tradeoff sweep.

One experiment simulates a ground-truth trajectory, passes its outputs
through the send-on-delta trigger and the lossy channel, and runs the
Kalman baseline and one HMM filter per trained model on that single event
stream. Errors are mean Euclidean distances over k = 1..N_d and the
communication rate is the mean of gamma over the same steps.
"""

from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .estimators import (
    HmmFilter,
    generate_events,
    kalman_predict,
    kalman_prior,
    kalman_update,
    stationary_belief,
)
from .lgss import ConfigurationError, SsmModel, solve_steady_state, simulate
from .quantizer import QuantizerGrid, build_grid
from .trainer_naive import HmmModel

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "parse_config",
    "read_config",
    "run_experiment",
    "full_communication_error",
    "default_delta_grid",
    "trimmed_mean",
    "sweep_tradeoff",
    "write_sweep_csv",
    "write_trace_csv",
    "read_trace_csv",
]

log = logging.getLogger(__name__)

# metric keys of the two HMM estimators
NAIVE, STRUCTURED = "naive", "structured"


def _matrix(text: str) -> tuple:
    rows = [r.split() for r in text.split(";") if r.strip()]
    return tuple(tuple(float(v) for v in r) for r in rows)


def _vector(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment or sweep needs, with the usual defaults.

    Noise is given as the diagonal of the covariances Q and R.
    """

    state_matrix: tuple = ((0.8, 0.2), (0.5, 0.3))
    output_matrix: tuple = ((1.0, 1.0),)
    process_noise_var: tuple = (0.1, 0.1)
    measurement_noise_var: tuple = (0.01,)
    rho: float = 5.0
    state_cards: tuple = (64, 64)
    output_cards: tuple = (1024,)
    trainer: str = "both"
    naive_loops: int = 100
    naive_chunk: int = 100_000
    structured_loops: int = 3_000_000
    shift_rule: str = "floor"
    delta: float = 0.4081
    lam: float = 0.95
    horizon: int = 10_000
    repetitions: int = 20
    seed_sim: int = 0
    seed_channel: int = 1
    seed_train: int = 2

    _PARSERS = {
        "state_matrix": _matrix,
        "output_matrix": _matrix,
        "process_noise_var": _vector,
        "measurement_noise_var": _vector,
        "rho": float,
        "state_cards": _ints,
        "output_cards": _ints,
        "trainer": str,
        "naive_loops": int,
        "naive_chunk": int,
        "structured_loops": int,
        "shift_rule": str,
        "delta": float,
        "lam": float,
        "horizon": int,
        "repetitions": int,
        "seed_sim": int,
        "seed_channel": int,
        "seed_train": int,
    }
    _ALIASES = {"lambda": "lam"}

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        if self.delta < 0:
            raise ConfigurationError(f"delta must be >= 0, got {self.delta}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda must be in [0, 1], got {self.lam}")
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be >= 1")
        if self.trainer not in ("naive", "structured", "both"):
            raise ConfigurationError(f"trainer must be naive, structured or both, got {self.trainer!r}")
        n = len(self.state_matrix)
        if any(len(r) != n for r in self.state_matrix) or len(self.process_noise_var) != n:
            raise ConfigurationError("state_matrix must be square and match process_noise_var")
        m = len(self.output_matrix)
        if any(len(r) != n for r in self.output_matrix) or len(self.measurement_noise_var) != m:
            raise ConfigurationError("output_matrix must be m x n and match measurement_noise_var")
        if len(self.state_cards) != n or len(self.output_cards) != m:
            raise ConfigurationError("cardinalities must list one entry per state and output axis")
        if min(self.process_noise_var + self.measurement_noise_var) < 0:
            raise ConfigurationError("noise variances must be nonnegative")

    def ssm(self) -> SsmModel:
        return SsmModel(
            np.array(self.state_matrix),
            np.array(self.output_matrix),
            np.sqrt(self.process_noise_var),
            np.sqrt(self.measurement_noise_var),
        )

    def grid(self) -> QuantizerGrid:
        return build_grid(solve_steady_state(self.ssm()), self.rho, self.state_cards, self.output_cards)

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple) and v and isinstance(v[0], tuple):
                text = "; ".join(" ".join(repr(x) for x in r) for r in v)
            elif isinstance(v, tuple):
                text = " ".join(repr(x) for x in v)
            else:
                text = str(v)
            out.append(f"{f.name} = {text}")
        return "\n".join(out) + "\n"


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys raise."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        key = ExperimentConfig._ALIASES.get(key, key)
        parser = ExperimentConfig._PARSERS.get(key)
        if parser is None:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key}: {exc}") from None
    return replace(base or ExperimentConfig(), **values)


def read_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    delta: float
    lam: float
    eta: float
    E_K: float
    E_Hplus: float
    E_Hminus: float
    E_Kstar: float
    gamma_checksum: int
    resets: int = 0
    traces: Optional[dict] = field(default=None, repr=False)

    @property
    def E_c(self) -> float:
        return (self.E_K - self.E_Hminus) / self.E_Kstar


def _kalman_track(ssm: SsmModel, events) -> np.ndarray:
    state = kalman_prior(ssm)
    out = np.empty((len(events), ssm.n))
    for ev in events:
        if ev.k > 0:
            state = kalman_predict(ssm, state)
        if ev.gamma:
            state = kalman_update(ssm, state, ev.measurement)
        out[ev.k] = state.mean
    return out


def _hmm_track(hmm: HmmModel, grid: QuantizerGrid, prior: np.ndarray, events, delta: float, lam: float):
    filt = HmmFilter(hmm, grid, delta, lam)
    centers = grid.state_centers()
    probs = prior
    out = np.empty((len(events), centers.shape[1]))
    seen = bytearray()
    for ev in events:
        probs = filt.step(probs, ev, predict=ev.k > 0)
        out[ev.k] = probs @ centers
        seen.append(ev.gamma)
    return out, zlib.crc32(bytes(seen)), filt.resets


def _mean_error(truth: np.ndarray, est: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(truth[1:] - est[1:], axis=1)))


def full_communication_error(ssm: SsmModel, outputs: np.ndarray, states: np.ndarray) -> float:
    """Kalman error on the same truth when every sample arrives."""
    events = generate_events(outputs, 0.0, 1.0, np.random.default_rng(0))
    return _mean_error(states, _kalman_track(ssm, events))


def run_experiment(cfg: ExperimentConfig, models: Mapping[str, HmmModel], sim_seed: Optional[int] = None,
                   channel_seed: Optional[int] = None, keep_traces: bool = False,
                   ssm: Optional[SsmModel] = None, grid: Optional[QuantizerGrid] = None) -> ExperimentResult:
    """One truth trajectory, one event stream, every estimator.

    `models` maps "naive" and/or "structured" to trained HMMs; a missing
    entry leaves the matching error as NaN.
    """
    ssm = ssm or cfg.ssm()
    grid = grid or cfg.grid()
    for key, hmm in models.items():
        if key not in (NAIVE, STRUCTURED):
            raise ConfigurationError(f"unknown model key {key!r}")
        if (hmm.state_count, hmm.output_count) != (grid.state_count, grid.output_count):
            raise ConfigurationError(f"{key} model does not match the configured grid")
    sim_seed = cfg.seed_sim if sim_seed is None else sim_seed
    channel_seed = cfg.seed_channel if channel_seed is None else channel_seed

    traj = simulate(ssm, cfg.horizon, seed=sim_seed)
    events = generate_events(traj.outputs, cfg.delta, cfg.lam, np.random.default_rng(channel_seed))
    gamma = np.array([ev.gamma for ev in events], dtype=np.uint8)
    checksum = zlib.crc32(gamma.tobytes())

    kf = _kalman_track(ssm, events)
    errors = {NAIVE: float("nan"), STRUCTURED: float("nan")}
    tracks = {}
    resets = 0
    prior = stationary_belief(grid, solve_steady_state(ssm).state_cov).probs
    for key, hmm in models.items():
        track, seen, n_reset = _hmm_track(hmm, grid, prior, events, cfg.delta, cfg.lam)
        if seen != checksum:
            raise RuntimeError(f"{key} filter consumed a different event stream")
        errors[key] = _mean_error(traj.states, track)
        tracks[key] = track
        resets += n_reset
    if resets:
        log.info("HMM filters reset to uniform %d times", resets)

    traces = None
    if keep_traces:
        traces = {"x": traj.states, "y": traj.outputs, "xhat_kf": kf, "gamma": gamma}
        traces.update({f"xhat_{k}": v for k, v in tracks.items()})
    return ExperimentResult(
        delta=cfg.delta,
        lam=cfg.lam,
        eta=float(gamma[1:].mean()) if gamma.size > 1 else float(gamma.mean()),
        E_K=_mean_error(traj.states, kf),
        E_Hplus=errors[NAIVE],
        E_Hminus=errors[STRUCTURED],
        E_Kstar=full_communication_error(ssm, traj.outputs, traj.states),
        gamma_checksum=checksum,
        resets=resets,
        traces=traces,
    )


def default_delta_grid(cfg: ExperimentConfig, points: int = 40) -> np.ndarray:
    """Log-spaced thresholds from 1% to 400% of the largest output std."""
    sy = float(np.max(solve_steady_state(cfg.ssm()).output_std))
    return np.logspace(np.log10(0.01 * sy), np.log10(4.0 * sy), points)


def trimmed_mean(values: Sequence[float]) -> float:
    """Mean after dropping one minimum and one maximum (plain mean below 3 values)."""
    v = np.sort(np.asarray(values, dtype=float))
    return float(v.mean() if v.size < 3 else v[1:-1].mean())


def rep_seeds(cfg: ExperimentConfig, repetitions: int) -> list[tuple[int, int]]:
    """(simulation, channel) seeds per repetition, shared by every sweep point."""
    return [(cfg.seed_sim + 1000 * r, cfg.seed_channel + 1000 * r) for r in range(repetitions)]


def sweep_tradeoff(cfg: ExperimentConfig, models: Mapping[str, HmmModel], delta_grid: Optional[Sequence[float]] = None,
                   repetitions: Optional[int] = None) -> list[ExperimentResult]:
    """Trimmed-mean metrics per threshold; repetitions reuse one seed set.

    The aggregated E_c is formed from the aggregated errors, so the
    returned `E_Kstar` is the trimmed mean of the per-run values.
    """
    grid_values = default_delta_grid(cfg) if delta_grid is None else np.asarray(delta_grid, dtype=float)
    if grid_values.size == 0:
        raise ValueError("delta grid is empty")
    reps = cfg.repetitions if repetitions is None else repetitions
    ssm, qgrid = cfg.ssm(), cfg.grid()
    out = []
    for delta in grid_values:
        point = replace(cfg, delta=float(delta))
        runs = [run_experiment(point, models, s, c, ssm=ssm, grid=qgrid) for s, c in rep_seeds(cfg, reps)]
        agg = {k: trimmed_mean([getattr(r, k) for r in runs]) for k in ("eta", "E_K", "E_Hplus", "E_Hminus", "E_Kstar")}
        checksum = zlib.crc32(b"".join(r.gamma_checksum.to_bytes(4, "little") for r in runs))
        out.append(ExperimentResult(float(delta), cfg.lam, gamma_checksum=checksum,
                                    resets=sum(r.resets for r in runs), **agg))
        log.info("delta=%.5g eta=%.4f E_c=%.4f", delta, out[-1].eta, out[-1].E_c)
    return out


def write_sweep_csv(results: Sequence[ExperimentResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "eta", "E_K", "E_Hplus", "E_Hminus", "E_c"])
        for r in results:
            w.writerow([repr(r.delta), repr(r.eta), repr(r.E_K), repr(r.E_Hplus), repr(r.E_Hminus), repr(r.E_c)])


def write_trace_csv(result: ExperimentResult, path, model_key: Optional[str] = None) -> None:
    """Per-step trace ``k, x_*, xhat_kf_*, xhat_hmm_*, gamma``.

    With `model_key` only that HMM's estimate is written as ``xhat_hmm``;
    otherwise every HMM present is written under its own key.
    """
    tr = result.traces
    if tr is None:
        raise ValueError("experiment was run without keep_traces=True")
    keys = [model_key] if model_key else [k for k in (NAIVE, STRUCTURED) if f"xhat_{k}" in tr]
    blocks = [("x", tr["x"]), ("xhat_kf", tr["xhat_kf"])]
    blocks += [("xhat_hmm" if model_key else f"xhat_{k}", tr[f"xhat_{k}"]) for k in keys]
    header = ["k"] + [f"{name}_{p + 1}" for name, arr in blocks for p in range(arr.shape[1])] + ["gamma"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(tr["x"].shape[0]):
            row = [k] + [repr(float(v)) for _, arr in blocks for v in arr[k]] + [int(tr["gamma"][k])]
            w.writerow(row)


def read_trace_csv(path) -> dict:
    """Columns of a trace CSV keyed by header name."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {name: data[name] for name in data.dtype.names}
