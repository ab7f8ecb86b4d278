import zlib
from dataclasses import replace

import numpy as np
import pytest

from lgshmm.experiments import (
    ExperimentConfig,
    default_delta_grid,
    parse_config,
    read_config,
    read_trace_csv,
    rep_seeds,
    run_experiment,
    sweep_tradeoff,
    trimmed_mean,
    write_sweep_csv,
    write_trace_csv,
)
from lgshmm.lgss import ConfigurationError
from lgshmm.trainer_naive import train_naive
from lgshmm.trainer_structured import train_structured

SMALL = ExperimentConfig(state_cards=(8, 8), output_cards=(16,), horizon=1500, repetitions=3)


@pytest.fixture(scope="module")
def models():
    ssm, grid = SMALL.ssm(), SMALL.grid()
    return {
        "naive": train_naive(ssm, grid, loops=4, chunk=50_000, seed=1),
        "structured": train_structured(ssm, grid, 100_000, seed=2),
    }


def test_config_defaults_match_benchmark():
    cfg = ExperimentConfig()
    assert cfg.state_cards == (64, 64) and cfg.output_cards == (1024,)
    np.testing.assert_allclose(cfg.ssm().Q, 0.1 * np.eye(2))
    np.testing.assert_allclose(cfg.ssm().R, [[0.01]])


def test_config_round_trip_and_aliases(tmp_path):
    cfg = parse_config("state_cards = 8 8\noutput_cards = 16  # small\nlambda = 0.5\ndelta=0.1\n")
    assert cfg.lam == 0.5 and cfg.delta == 0.1 and cfg.state_cards == (8, 8)
    p = tmp_path / "c.cfg"
    p.write_text(cfg.to_text())
    assert read_config(p) == cfg
    assert parse_config("state_matrix = 0.5 0.1; 0.0 0.2").state_matrix == ((0.5, 0.1), (0.0, 0.2))


@pytest.mark.parametrize("text", ["lamda = 0.5", "horizon = 0", "delta = -1", "lambda = 1.5",
                                  "state_cards = 8", "horizon = ten", "just words"])
def test_config_rejects_bad_input(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_model_key_and_shape_checked_before_compute(models, paper_ssm):
    with pytest.raises(ConfigurationError):
        run_experiment(SMALL, {"other": models["naive"]})
    with pytest.raises(ConfigurationError):
        run_experiment(ExperimentConfig(horizon=10), {"naive": models["naive"]})


def test_full_communication_rate_is_one(models):
    r = run_experiment(replace(SMALL, delta=0.0, lam=1.0), models, 5, 6)
    assert r.eta == 1.0
    assert r.E_K == pytest.approx(r.E_Kstar, abs=1e-15)


def test_no_arrivals_gives_open_loop(models, paper_stats):
    r = run_experiment(replace(SMALL, delta=0.0, lam=0.0, horizon=4000), models, 5, 6)
    assert r.eta == 0.0
    # open loop keeps the mean at zero, so the error is the norm of the stationary state
    x = np.random.default_rng(0).multivariate_normal(np.zeros(2), paper_stats.state_cov, 200_000)
    assert r.E_K == pytest.approx(np.linalg.norm(x, axis=1).mean(), rel=0.1)
    assert r.E_Hplus == pytest.approx(r.E_K, rel=0.15)


def test_eta_checksum_and_trace_recompute(models, tmp_path):
    r = run_experiment(replace(SMALL, delta=0.5, lam=0.9), models, 7, 8, keep_traces=True)
    g = r.traces["gamma"]
    assert r.eta == g[1:].mean()
    assert r.gamma_checksum == zlib.crc32(g.astype(np.uint8).tobytes())
    path = tmp_path / "trace.csv"
    write_trace_csv(r, path)
    t = read_trace_csv(path)
    x = np.column_stack([t["x_1"], t["x_2"]])
    for key, err in (("xhat_kf", r.E_K), ("xhat_naive", r.E_Hplus), ("xhat_structured", r.E_Hminus)):
        est = np.column_stack([t[f"{key}_1"], t[f"{key}_2"]])
        assert abs(np.linalg.norm(x[1:] - est[1:], axis=1).mean() - err) < 1e-12
    assert abs(t["gamma"][1:].mean() - r.eta) < 1e-12
    write_trace_csv(r, path, model_key="naive")
    assert "xhat_hmm_1" in read_trace_csv(path)


def test_trace_requires_traces(models, tmp_path):
    r = run_experiment(SMALL, {"naive": models["naive"]})
    with pytest.raises(ValueError):
        write_trace_csv(r, tmp_path / "t.csv")
    assert np.isnan(r.E_Hminus)


def test_results_are_bounded(models):
    r = run_experiment(SMALL, models)
    assert 0.0 <= r.eta <= 1.0
    assert min(r.E_K, r.E_Hplus, r.E_Hminus, r.E_Kstar) >= 0.0
    assert r.E_c == pytest.approx((r.E_K - r.E_Hminus) / r.E_Kstar)


def test_trimmed_mean():
    assert trimmed_mean([5.0, 1.0, 2.0, 3.0, 100.0]) == pytest.approx(10 / 3)
    assert trimmed_mean([1.0, 3.0]) == 2.0


def test_rep_seeds_distinct_and_shared():
    seeds = rep_seeds(SMALL, 5)
    assert len(set(seeds)) == 5 and seeds[0] == (SMALL.seed_sim, SMALL.seed_channel)


def test_default_grid_spans_output_scale(paper_stats):
    g = default_delta_grid(ExperimentConfig())
    sy = paper_stats.output_std[0]
    assert g.size == 40 and np.all(np.diff(g) > 0)
    assert g[0] == pytest.approx(0.01 * sy) and g[-1] == pytest.approx(4 * sy)


def test_sweep_endpoints_and_determinism(models, tmp_path):
    cfg = replace(SMALL, lam=1.0, horizon=800)
    grid = [0.0, 0.2, 5.0]
    a = sweep_tradeoff(cfg, models, grid, 3)
    b = sweep_tradeoff(cfg, models, grid, 3)
    assert a[0].eta == 1.0 and a[-1].eta < 0.05
    assert [r.eta for r in a] == sorted((r.eta for r in a), reverse=True)
    assert [(r.eta, r.E_K, r.E_Hplus, r.E_Hminus, r.gamma_checksum) for r in a] == \
        [(r.eta, r.E_K, r.E_Hplus, r.E_Hminus, r.gamma_checksum) for r in b]
    out = tmp_path / "sweep.csv"
    write_sweep_csv(a, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "delta,eta,E_K,E_Hplus,E_Hminus,E_c" and len(lines) == 4
    with pytest.raises(ValueError):
        sweep_tradeoff(cfg, models, [], 3)
