import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgshmm.lgss import SteadyStateStats, Trajectory, simulate
from lgshmm.quantizer import (
    AxisGrid,
    QuantizerGrid,
    build_grid,
    cell_center,
    composite_index,
    decompose_index,
    quantize_axis,
    quantize_trajectory,
    read_grid,
    write_grid,
)


def unit_axis():
    return AxisGrid(4, -1.0, 1.0)


def _stats(sx, sy):
    sx, sy = np.atleast_1d(sx), np.atleast_1d(sy)
    return SteadyStateStats(np.diag(sx**2), sx, sy, sx, sy)


def test_unit_grid_boundaries_and_width():
    g = build_grid(_stats(1.0, 1.0), 1.0, [4], [4])
    ax = g.state_axes[0]
    np.testing.assert_array_equal(ax.boundaries, [-np.inf, -1.0, 0.0, 1.0, np.inf])
    assert ax.width == 1.0


def test_width_arithmetic():
    assert build_grid(_stats(2.0, 1.0), 5.0, [64], [3]).state_axes[0].width == pytest.approx(20 / 62, abs=1e-15)


def test_benchmark_grid_sizes(paper_grid):
    assert paper_grid.state_count == 4096 and paper_grid.output_count == 1024


def test_cardinality_below_three_rejected():
    with pytest.raises(ValueError):
        build_grid(_stats(1.0, 1.0), 5.0, [2], [4])


@pytest.mark.parametrize("value, expected", [(-0.5, 2), (-7.0, 1), (7.0, 4), (0.0, 2), (-1.0, 1), (1.0, 3), (0.5, 3)])
def test_quantize_axis_examples(value, expected):
    assert quantize_axis(unit_axis(), value) == expected


def test_quantize_nan_raises():
    with pytest.raises(ValueError):
        quantize_axis(unit_axis(), float("nan"))


def test_infinities_go_to_tails():
    assert list(unit_axis().quantize([-np.inf, np.inf])) == [1, 4]


@settings(max_examples=300, deadline=None)
@given(card=st.integers(3, 200), lo=st.floats(-50, 0, exclude_max=True), span=st.floats(1e-3, 100),
       v=st.floats(-1e6, 1e6))
def test_partition_of_reals(card, lo, span, v):
    ax = AxisGrid(card, lo, lo + span)
    b = ax.boundaries
    i = quantize_axis(ax, v)
    assert 1 <= i <= card
    assert b[i - 1] < v <= b[i]


@settings(max_examples=100, deadline=None)
@given(card=st.integers(3, 80), j=st.integers(1, 79))
def test_boundary_ties_go_low(card, j):
    ax = AxisGrid(card, -3.0, 4.0)
    inner = ax.inner_boundaries
    j = min(j, inner.size)
    assert quantize_axis(ax, inner[j - 1]) == j


def test_vectorized_matches_linear_scan():
    ax = AxisGrid(37, -2.5, 3.75)
    vals = np.random.default_rng(0).normal(scale=3, size=5000)
    vals = np.concatenate([vals, ax.inner_boundaries])
    b = ax.boundaries
    scan = np.array([next(i for i in range(1, 38) if b[i - 1] < v <= b[i]) for v in vals])
    np.testing.assert_array_equal(ax.quantize(vals), scan)


def test_composite_examples():
    assert composite_index((1, 1), (3, 4)) == 1
    assert composite_index((2, 3), (3, 4)) == 7
    assert decompose_index(7, (3, 4)) == (2, 3)
    assert decompose_index(1, (3, 4)) == (1, 1)


def test_composite_bijection_exhaustive():
    cards = (3, 4, 5)
    seen = set()
    for t in itertools.product(*(range(1, c + 1) for c in cards)):
        idx = composite_index(t, cards)
        assert decompose_index(idx, cards) == t
        seen.add(idx)
    assert seen == set(range(1, 61))


def test_composite_is_kronecker_position():
    cards = (3, 4, 2)
    for t in itertools.product(*(range(1, c + 1) for c in cards)):
        vec = np.array([1.0])
        for i, c in zip(t, cards):
            vec = np.kron(vec, np.eye(c)[i - 1])
        assert int(np.argmax(vec)) + 1 == composite_index(t, cards)


def test_composite_out_of_range():
    with pytest.raises(ValueError):
        composite_index((0, 1), (3, 4))
    with pytest.raises(ValueError):
        decompose_index(13, (3, 4))


def test_cell_centers_and_pseudo_centers():
    g = QuantizerGrid((unit_axis(),), (unit_axis(),))
    assert cell_center(g, 2)[0] == -0.5
    assert cell_center(g, 1)[0] == -1.5
    assert cell_center(g, 4)[0] == 1.5


def test_two_axis_center_round_trip():
    g = QuantizerGrid((AxisGrid(5, -1, 2), AxisGrid(6, -3, 1)), (unit_axis(),))
    for j in range(1, 31):
        t = decompose_index(j, g.state_cards)
        expect = [g.state_axes[0].centers[t[0] - 1], g.state_axes[1].centers[t[1] - 1]]
        np.testing.assert_array_equal(cell_center(g, j), expect)
        np.testing.assert_array_equal(g.state_centers()[j - 1], expect)
        if 1 < t[0] < 5 and 1 < t[1] < 6:
            assert g.quantize_states(cell_center(g, j)[None, :])[0] == j


def test_zero_trajectory_is_constant_pair(paper_grid):
    traj = Trajectory(np.zeros((10, 2)), np.zeros((10, 1)))
    pairs = quantize_trajectory(paper_grid, traj)
    assert (pairs == pairs[0]).all()
    # even cardinality: origin sits on a boundary and belongs to the lower cell
    assert tuple(pairs[0]) == (composite_index((32, 32), (64, 64)), 512)


def test_single_sample_by_hand(paper_grid, paper_stats):
    x = np.array([0.3, -0.2])
    y = np.array([0.1])
    hx = [10 * s / 62 for s in paper_stats.state_std]
    hy = 10 * paper_stats.output_std[0] / 1022
    # cell p covers (lower + (p - 2) h, lower + (p - 1) h]
    per_axis = [int(np.ceil((xi + 5 * s) / h)) + 1 for xi, s, h in zip(x, paper_stats.state_std, hx)]
    iy = int(np.ceil((y[0] + 5 * paper_stats.output_std[0]) / hy)) + 1
    pairs = quantize_trajectory(paper_grid, Trajectory(x[None, :], y[None, :]))
    assert pairs[0, 0] == (per_axis[0] - 1) * 64 + per_axis[1]
    assert pairs[0, 1] == iy


def test_axis_order_swap_follows_lexicographic_rule():
    a, b = AxisGrid(5, -1, 1), AxisGrid(7, -2, 2)
    g1 = QuantizerGrid((a, b), (unit_axis(),))
    g2 = QuantizerGrid((b, a), (unit_axis(),))
    pts = np.random.default_rng(1).normal(size=(200, 2))
    i1 = g1.quantize_states(pts)
    i2 = g2.quantize_states(pts[:, ::-1])
    t1 = np.array([decompose_index(int(i), (5, 7)) for i in i1])
    np.testing.assert_array_equal(i2, (t1[:, 1] - 1) * 5 + t1[:, 0])


def test_tail_fraction_small_on_stationary_data(paper_ssm, paper_grid):
    traj = simulate(paper_ssm, 200_000, seed=3)
    t = np.stack([ax.quantize(traj.states[:, p]) for p, ax in enumerate(paper_grid.state_axes)], axis=1)
    tail = np.any((t == 1) | (t == 64), axis=1)
    assert tail.mean() < 1e-4


def test_grid_file_round_trip(tmp_path, paper_grid):
    path = tmp_path / "grid.txt"
    write_grid(paper_grid, path)
    lines = path.read_text().splitlines()
    assert lines[0].split()[:2] == ["2", "1"] and len(lines) == 4
    back = read_grid(path)
    assert back == paper_grid
