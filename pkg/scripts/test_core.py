"""
Tests for grids, Brownian ensembles, controls and Monte Carlo estimates
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from config import BLOCK_SIZE
from core import (
    ConvergenceError,
    Estimate,
    InvalidArgumentError,
    ProcessPath,
    RegularControl,
    SimulationDivergedError,
    SingularControl,
    cumulate,
    make_grid,
    mc_estimate,
    nodewise_estimates,
    sample_brownian,
)


class TestTimeGrid:
    def test_nodes_and_step(self):
        grid = make_grid(2.0, 8)
        assert grid.dt == pytest.approx(0.25)
        assert grid.nodes[0] == 0.0
        assert grid.nodes[-1] == pytest.approx(2.0)
        assert len(grid.nodes) == 9

    @pytest.mark.parametrize("T,N", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
    def test_rejects_bad_grids(self, T, N):
        with pytest.raises(InvalidArgumentError):
            make_grid(T, N)

    def test_index_of(self):
        grid = make_grid(1.0, 10)
        assert grid.index_of(0.3) == 3
        with pytest.raises(InvalidArgumentError):
            grid.index_of(0.35)

    def test_grid_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            make_grid(1.0, 10).check_same(make_grid(1.0, 20))


class TestBrownian:
    def test_same_seed_same_paths(self):
        grid = make_grid(1.0, 16)
        a = sample_brownian(grid, 300, seed=3)
        b = sample_brownian(grid, 300, seed=3)
        assert np.array_equal(a.increments, b.increments)

    def test_different_seeds_differ(self):
        grid = make_grid(1.0, 16)
        a = sample_brownian(grid, 300, seed=3)
        b = sample_brownian(grid, 300, seed=4)
        assert not np.array_equal(a.increments, b.increments)

    def test_independent_of_worker_count(self):
        grid = make_grid(1.0, 4)
        M = 2 * BLOCK_SIZE + 17
        serial = sample_brownian(grid, M, seed=11, workers=1)
        threaded = sample_brownian(grid, M, seed=11, workers=4)
        assert np.array_equal(serial.increments, threaded.increments)

    def test_prefix_stable_in_M(self):
        grid = make_grid(1.0, 4)
        small = sample_brownian(grid, 100, seed=5)
        large = sample_brownian(grid, 200, seed=5)
        assert np.array_equal(small.increments, large.increments[:100])

    def test_paths_start_at_zero(self, ensemble):
        W = ensemble(N=8, M=50)
        assert np.all(W.paths[:, 0] == 0.0)
        assert np.allclose(W.paths[:, -1], W.increments.sum(axis=1))

    def test_terminal_variance(self):
        W = sample_brownian(make_grid(1.0, 8), 20000, seed=21)
        est = mc_estimate(W.paths[:, -1] ** 2)
        assert est.within(1.0, n_se=4)

    def test_rejects_bad_path_count(self):
        with pytest.raises(InvalidArgumentError):
            sample_brownian(make_grid(1.0, 4), 0, seed=1)


class TestSingularControl:
    def test_atom_and_left_limit(self):
        grid = make_grid(1.0, 10)
        xi = SingularControl.atom(grid, 0.2, 0.5)
        cum = xi.cumulative()
        assert cum[2] == 0.0
        assert cum[3] == pytest.approx(0.5)
        assert cumulate(xi, 0.2) == 0.0
        assert cumulate(xi, 0.3) == pytest.approx(0.5)

    def test_no_atom_at_horizon(self):
        with pytest.raises(InvalidArgumentError):
            SingularControl.atom(make_grid(1.0, 10), 1.0, 0.5)

    def test_rejects_negative_increments(self):
        with pytest.raises(InvalidArgumentError):
            SingularControl(make_grid(1.0, 4), np.array([0.0, -0.1, 0.0, 0.0]))

    def test_rejects_wrong_shape(self):
        with pytest.raises(InvalidArgumentError):
            SingularControl(make_grid(1.0, 4), np.zeros(5))

    def test_uniform_rate_total(self):
        xi = SingularControl.uniform_rate(make_grid(2.0, 8), 0.3)
        assert xi.total() == pytest.approx(0.6)

    def test_per_path_broadcast(self):
        grid = make_grid(1.0, 4)
        xi = SingularControl.atom(grid, 0.5, 1.0)
        assert xi.as_paths(3).shape == (3, 4)
        per_path = SingularControl(grid, np.ones((3, 4)))
        with pytest.raises(InvalidArgumentError):
            per_path.as_paths(5)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(min_value=0.0, max_value=10.0), min_size=6, max_size=6))
    def test_cumulative_is_nondecreasing(self, increments):
        xi = SingularControl(make_grid(1.0, 6), np.array(increments))
        cum = xi.cumulative()
        assert cum[0] == 0.0
        assert np.all(np.diff(cum) >= 0)
        assert cum[-1] == pytest.approx(xi.total())

    @settings(max_examples=30, deadline=None)
    @given(st.floats(min_value=0.0, max_value=5.0), st.floats(min_value=0.0, max_value=5.0))
    def test_sum_of_controls(self, a, b):
        grid = make_grid(1.0, 5)
        total = SingularControl.atom(grid, 0.2, a) + SingularControl.uniform_rate(grid, b)
        assert total.total() == pytest.approx(a + b)


class TestRegularControl:
    def test_outside_control_set(self):
        grid = make_grid(1.0, 4)
        with pytest.raises(InvalidArgumentError):
            RegularControl.constant(grid, 2.0, U=(0.0, 1.0))

    def test_shift_leaving_set(self):
        u = RegularControl.constant(make_grid(1.0, 4), 1.0, U=(0.0, 1.0))
        with pytest.raises(InvalidArgumentError):
            u.shifted(np.ones(4), 0.1)

    def test_boundary_flags(self):
        u = RegularControl(make_grid(1.0, 3), np.array([0.0, 0.5, 1.0]), U=(0.0, 1.0))
        assert u.on_boundary().tolist() == [-1, 0, 1]


class TestEstimates:
    def test_mc_estimate(self):
        est = mc_estimate(np.array([1.0, 2.0, 3.0, 4.0]))
        assert est.value == pytest.approx(2.5)
        assert est.se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)

    def test_within(self):
        assert Estimate(1.0, 0.1).within(1.25, n_se=3)
        assert not Estimate(1.0, 0.1).within(1.5, n_se=3)

    def test_nodewise(self):
        mean, se = nodewise_estimates(np.array([[1.0, 2.0], [3.0, 2.0]]))
        assert mean.tolist() == [2.0, 2.0]
        assert se[1] == 0.0

    def test_process_rejects_nonfinite(self):
        with pytest.raises(InvalidArgumentError):
            ProcessPath(make_grid(1.0, 2), np.array([[1.0, np.nan, 1.0]]))


class TestErrors:
    def test_divergence_carries_location(self):
        err = SimulationDivergedError("boom", node=3, t=0.3, path=7)
        assert (err.node, err.t, err.path) == (3, 0.3, 7)

    def test_convergence_carries_history(self):
        err = ConvergenceError("stuck", [1.0, 0.5])
        assert err.history == [1.0, 0.5]

    def test_invalid_argument_is_value_error(self):
        assert issubclass(InvalidArgumentError, ValueError)
