import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import nearest_scan
from seppomdp.belief_grid import (
    BeliefGrid,
    build_grid,
    nearest_grid_point,
    round_belief,
    simulate_belief_trajectory,
)
from seppomdp.hmm import InvalidArgumentError, filter_beliefs, sample_trajectory, uniform_belief
from seppomdp.models import partition_demo_model


def test_simulated_beliefs_equal_filtering_the_sampled_path():
    m = partition_demo_model()
    B = simulate_belief_trajectory(m, uniform_belief(3), 30, seed=11)
    tr = sample_trajectory(m, uniform_belief(3), 30, seed=11)
    np.testing.assert_allclose(B, filter_beliefs(m, uniform_belief(3), tr.demands, tr.aods), atol=1e-12)


def test_simulation_with_restarts_has_requested_length():
    m = partition_demo_model()
    B = simulate_belief_trajectory(m, uniform_belief(3), 101, seed=0, restarts=4)
    assert B.shape == (101, 3)
    np.testing.assert_allclose(B.sum(axis=1), 1.0)


def test_round_belief_floors():
    np.testing.assert_allclose(round_belief([0.456, 0.544], 2), [0.45, 0.54])
    with pytest.raises(InvalidArgumentError):
        round_belief([1.0], 0)


def test_build_grid_counts_and_ties():
    B = np.array([[0.311, 0.689], [0.315, 0.685], [0.721, 0.279], [0.12, 0.88], [0.725, 0.275], [0.318, 0.682]])
    g = build_grid(B, d=2, K=2)
    assert len(g) == 2
    assert g.visit_counts.tolist() == [3, 2]
    np.testing.assert_allclose(g.points[0], B[[0, 1, 5]].mean(axis=0))
    # equal counts: the lexicographically smaller label wins
    g1 = build_grid(np.array([[0.9, 0.1], [0.2, 0.8]]), d=1, K=1)
    np.testing.assert_allclose(g1.points[0], [0.2, 0.8])


def test_build_grid_k_larger_than_cells_and_errors():
    B = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert len(build_grid(B, 2, 10)) == 1
    with pytest.raises(InvalidArgumentError):
        build_grid(np.empty((0, 2)), 2, 3)
    with pytest.raises(InvalidArgumentError):
        build_grid(B, 2, 0)


def test_grid_points_are_distributions(tmp_path):
    m = partition_demo_model()
    g = build_grid(simulate_belief_trajectory(m, uniform_belief(3), 2000, 3), 2, 50)
    np.testing.assert_allclose(g.points.sum(axis=1), 1.0)
    assert np.all(g.points >= 0)
    assert np.all(np.diff(g.visit_counts) <= 0)
    g.save(tmp_path / "g.json")
    back = BeliefGrid.load(tmp_path / "g.json")
    np.testing.assert_array_equal(back.points, g.points)


def test_nearest_tie_goes_to_lowest_index():
    g = BeliefGrid(np.array([[0.0, 1.0], [1.0, 0.0]]), 1, 2, np.array([1, 1]))
    assert nearest_grid_point(g, [0.5, 0.5]) == 0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), G=st.integers(1, 15))
def test_nearest_matches_linear_scan(seed, G):
    rng = np.random.default_rng(seed)
    pts = rng.dirichlet(np.ones(3), size=G)
    g = BeliefGrid(pts, 2, G, np.ones(G, dtype=int))
    b = rng.dirichlet(np.ones(3))
    assert nearest_grid_point(g, b) == nearest_scan(pts, b)


def test_grid_point_is_its_own_nearest():
    m = partition_demo_model()
    g = build_grid(simulate_belief_trajectory(m, uniform_belief(3), 500, 1), 2, 20)
    assert [nearest_grid_point(g, p) for p in g.points] == list(range(len(g)))
