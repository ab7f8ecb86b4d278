import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from lgshmm.lgss import (
    ConfigurationError,
    ConvergenceError,
    SsmModel,
    Trajectory,
    compensate_input,
    read_trajectory_csv,
    simulate,
    solve_steady_state,
    write_trajectory_csv,
)

# frozen from scipy.linalg.solve_discrete_lyapunov on the benchmark system
P_BENCH = np.array([[0.8152512458471772, 0.5406457641196021], [0.5406457641196021, 0.5120950996677747]])
SIGMA_X_BENCH = np.array([0.9029126457455213, 0.7156082026275095])
SIGMA_Y_BENCH = np.array([1.5551970530303083])
SIGMA_BAR_X_BENCH = np.array([0.8457252779994088, 0.6419463370623549])


def test_zero_dynamics_is_one_step_whitening():
    st_ = solve_steady_state(SsmModel([[0.0]], [[1.0]], [0.3], [0.1]))
    assert st_.state_cov[0, 0] == pytest.approx(0.09, abs=1e-15)
    assert st_.state_std[0] == pytest.approx(0.3, abs=1e-15)


def test_benchmark_covariance_matches_frozen_oracle(paper_stats):
    np.testing.assert_allclose(paper_stats.state_cov, P_BENCH, atol=1e-10)
    np.testing.assert_allclose(paper_stats.state_std, SIGMA_X_BENCH, atol=1e-10)
    np.testing.assert_allclose(paper_stats.output_std, SIGMA_Y_BENCH, atol=1e-10)
    np.testing.assert_allclose(paper_stats.predictor_state_std, SIGMA_BAR_X_BENCH, atol=1e-10)


def test_benchmark_oracle_is_still_scipy(paper_ssm):
    # keeps the frozen numbers honest against the independent route
    np.testing.assert_allclose(sla.solve_discrete_lyapunov(paper_ssm.state_matrix, paper_ssm.Q), P_BENCH, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-0.95, 0.95), q=st.floats(0.01, 2.0))
def test_scalar_closed_form(a, q):
    st_ = solve_steady_state(SsmModel([[a]], [[1.0]], [q], [0.1]))
    assert st_.state_cov[0, 0] == pytest.approx(q * q / (1 - a * a), rel=1e-9)


def test_lyapunov_residual_below_tolerance(paper_ssm, paper_stats):
    A, P = paper_ssm.state_matrix, paper_stats.state_cov
    assert np.max(np.abs(P - A @ P @ A.T - paper_ssm.Q)) < 1e-11


def test_nonconvergence_names_spectral_radius():
    model = SsmModel([[0.999]], [[1.0]], [1.0], [1.0])
    with pytest.raises(ConvergenceError, match="spectral radius"):
        solve_steady_state(model, max_iter=10)


def test_rejects_unstable_and_negative_noise():
    with pytest.raises(ValueError):
        SsmModel([[1.2]], [[1.0]], [1.0], [1.0])
    with pytest.raises(ValueError):
        SsmModel([[0.5]], [[1.0]], [-1.0], [1.0])


def test_noise_free_zero_trajectory_is_exactly_zero():
    model = SsmModel([[0.8, 0.2], [0.5, 0.3]], [[1, 1]], [0.0, 0.0], [0.0])
    traj = simulate(model, 50, initial_state=[0.0, 0.0], seed=3)
    assert not traj.states.any() and not traj.outputs.any()


def test_fixed_seed_is_bitwise_reproducible(paper_ssm):
    a = simulate(paper_ssm, 500, seed=11)
    b = simulate(paper_ssm, 500, seed=11)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.outputs, b.outputs)
    assert not np.array_equal(a.states, simulate(paper_ssm, 500, seed=12).states)


def test_alignment_length_plus_one(paper_ssm):
    traj = simulate(paper_ssm, 7, seed=0)
    assert traj.states.shape == (8, 2) and traj.outputs.shape == (8, 1)


def test_empirical_covariance_matches_lyapunov(paper_ssm, paper_stats):
    traj = simulate(paper_ssm, 1_000_000, seed=5)
    emp = np.cov(traj.states.T)
    rel = np.linalg.norm(emp - paper_stats.state_cov) / np.linalg.norm(paper_stats.state_cov)
    assert rel < 0.02


def _forced_model():
    return SsmModel([[0.8, 0.2], [0.5, 0.3]], [[1, 1]], [0.3, 0.3], [0.1],
                    input_matrix=[[1.0], [0.5]], feedthrough_matrix=[[0.2]])


def test_zero_input_compensation_is_identity():
    model = _forced_model()
    traj = simulate(model, 30, seed=1)
    out = compensate_input(model, traj, np.zeros((31, 1)))
    np.testing.assert_array_equal(out.states, traj.states)
    np.testing.assert_array_equal(out.outputs, traj.outputs)


def test_noise_free_forced_response_cancels():
    model = SsmModel([[0.8, 0.2], [0.5, 0.3]], [[1, 1]], [0.0, 0.0], [0.0],
                     input_matrix=[[1.0], [0.5]], feedthrough_matrix=[[0.2]])
    u = np.random.default_rng(2).normal(size=(41, 1))
    traj = simulate(model, 40, initial_state=[0, 0], inputs=u)
    out = compensate_input(model, traj, u)
    np.testing.assert_allclose(out.states, 0.0, atol=1e-12)
    np.testing.assert_allclose(out.outputs, 0.0, atol=1e-12)


def _explicit_forced_response(model, u, K):
    """x_zs(k) = Pi(k) U(k) with Pi(k) = [A^{k-1}B ... AB B] and U(k) stacked inputs."""
    A, B, C, D = model.state_matrix, model.input_matrix, model.output_matrix, model.feedthrough_matrix
    xs, ys = [], []
    for k in range(K):
        if k == 0:
            x = np.zeros(model.n)
        else:
            Pi = np.hstack([np.linalg.matrix_power(A, k - 1 - i) @ B for i in range(k)])
            U = np.concatenate([u[i] for i in range(k)])
            x = Pi @ U
        xs.append(x)
        ys.append(C @ x + D @ u[k])
    return np.array(xs), np.array(ys)


def test_compensation_matches_explicit_pi_u_oracle():
    model = _forced_model()
    rng = np.random.default_rng(4)
    u = rng.normal(size=(21, 1))
    traj = simulate(model, 20, seed=9, inputs=u)
    out = compensate_input(model, traj, u)
    xz, yz = _explicit_forced_response(model, u, 21)
    np.testing.assert_allclose(out.states, traj.states - xz, atol=1e-12)
    np.testing.assert_allclose(out.outputs, traj.outputs - yz, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_compensated_forced_run_equals_unforced_run(seed):
    model = _forced_model()
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(60, 2)) * 0.3
    v = rng.normal(size=(61, 1)) * 0.1
    u = rng.normal(size=(61, 1))
    x0 = rng.normal(size=2)
    forced = simulate(model, 60, initial_state=x0, inputs=u, noise=(w, v))
    free = simulate(model, 60, initial_state=x0, noise=(w, v))
    out = compensate_input(model, forced, u)
    np.testing.assert_allclose(out.states, free.states, atol=1e-10)
    np.testing.assert_allclose(out.outputs, free.outputs, atol=1e-10)


def test_missing_input_matrices_is_configuration_error():
    model = SsmModel([[0.5]], [[1.0]], [1.0], [1.0])
    traj = simulate(model, 5, seed=0)
    with pytest.raises(ConfigurationError):
        compensate_input(model, traj, np.ones((6, 1)))


def test_trajectory_csv_round_trip(tmp_path, paper_ssm):
    traj = simulate(paper_ssm, 25, seed=8)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    assert path.read_text().splitlines()[0] == "k,x_1,x_2,y_1"
    back = read_trajectory_csv(path)
    np.testing.assert_array_equal(back.states, traj.states)
    np.testing.assert_array_equal(back.outputs, traj.outputs)


def test_trajectory_rejects_misaligned_arrays():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros((2, 1)))
