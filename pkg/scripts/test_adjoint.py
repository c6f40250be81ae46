"""
Tests for the adjoint solvers: resolvent closed form against the backward regression sweep
"""
import math

import numpy as np
import pytest

from adjoint import (
    BsvieSpec,
    estimate_q_diagonal,
    girsanov_density,
    girsanov_weight,
    martingale_increments,
    solve_closed_form,
    solve_regression,
    trapezoid_tail,
)
from core import DomainError, InvalidArgumentError, ProcessPath, SingularControl, make_grid, sample_brownian
from forward import TerminalWeight
from kernels import ConstantKernel, ExpDecayKernel, neumann_psi


def both_solvers(spec, W, X=None):
    psi = neumann_psi(spec.b0, W.grid)
    return solve_closed_form(spec, psi, W, X), solve_regression(spec, W, X)


class TestDeterministicAdjoint:
    def test_constant_kernel(self):
        W = sample_brownian(make_grid(1.0, 128), 50, seed=1)
        spec = BsvieSpec(b0=ConstantKernel(0.1), theta=TerminalWeight(2.0))
        closed, regression = both_solvers(spec, W)
        expected = 2.0 * math.exp(0.1)
        assert closed.p[:, 0].mean() == pytest.approx(expected, abs=1e-4)
        assert regression.p[:, 0].mean() == pytest.approx(expected, abs=1e-3)
        assert closed.diagnostics["truncation_order"] >= 1
        assert np.allclose(closed.p[:, -1], 2.0)

    def test_singular_jump(self):
        W = sample_brownian(make_grid(1.0, 512), 20, seed=2)
        xi = SingularControl.atom(W.grid, 0.5, 0.5)
        spec = BsvieSpec(b0=ConstantKernel(0.5), weight="unit", xi=xi, theta=TerminalWeight(1.0))
        closed, regression = both_solvers(spec, W)
        expected = math.exp(0.5) + 0.5 * math.exp(0.25)
        assert closed.p[:, 0].mean() == pytest.approx(expected, abs=1e-3)
        assert regression.p[:, 0].mean() == pytest.approx(expected, abs=1e-3)
        # p drops by the atom across t = 0.5
        i = W.grid.index_of(0.5)
        assert closed.p[0, i] - closed.p[0, i + 1] == pytest.approx(0.5, abs=1e-2)

    def test_summary_frame(self):
        W = sample_brownian(make_grid(1.0, 8), 20, seed=3)
        solution = solve_regression(BsvieSpec(theta=TerminalWeight(1.5)), W)
        frame = solution.summary()
        assert list(frame.columns) == ["t", "mean_p", "sd_p", "mean_q_diag"]
        assert np.allclose(frame["mean_p"], 1.5)
        assert frame["mean_q_diag"].isna().all()


class TestStochasticAdjoint:
    @pytest.fixture(scope="class")
    def W(self):
        return sample_brownian(make_grid(1.0, 32), 20000, seed=4)

    def test_girsanov_drift(self, W):
        spec = BsvieSpec(b0=ConstantKernel(0.1), sigma0=ConstantKernel(0.2), theta=TerminalWeight(1.0, 0.5))
        closed, regression = both_solvers(spec, W)
        expected = 1.1 * math.exp(0.1)
        assert closed.p[:, 0].mean() == pytest.approx(expected, abs=0.02)
        assert regression.p[:, 0].mean() == pytest.approx(expected, abs=0.02)

    def test_martingale_and_q(self, W):
        spec = BsvieSpec(theta=TerminalWeight(1.0, 0.5))
        solution = solve_regression(spec, W)
        assert np.sqrt(np.mean((solution.p - 1.0 - 0.5 * W.paths) ** 2)) < 0.02
        mean, se = martingale_increments(solution, spec.sigma0, W)
        assert np.all(np.abs(mean) <= 4.0 * se + 1e-12)
        q = estimate_q_diagonal(solution, W)
        assert q.shape == (W.M, W.grid.N)
        assert q.mean() == pytest.approx(0.5, abs=0.05)
        assert solution.diagnostics["q_diag"] == "experimental"

    @pytest.mark.parametrize("b0,theta,control", [
        (ExpDecayKernel(0.5, 1.0), TerminalWeight(1.0, 0.5), "none"),
        (ConstantKernel(0.2), TerminalWeight(1.0, 0.0, 0.5), "none"),
        (ExpDecayKernel(0.5, 1.0), TerminalWeight(1.0, 0.5, 0.25), "uniform"),
        (ExpDecayKernel(0.5, 1.0), TerminalWeight(1.0, 0.5), "per_path"),
    ])
    def test_solvers_agree_under_drift(self, W, b0, theta, control):
        if control == "uniform":
            xi = SingularControl.uniform_rate(W.grid, 0.5)
        elif control == "per_path":
            xi = SingularControl(W.grid, 0.5 * W.grid.dt * np.maximum(W.paths[:, :-1], 0.0))
        else:
            xi = None
        spec = BsvieSpec(b0=b0, sigma0=ConstantKernel(0.3), weight="unit", xi=xi, theta=theta)
        closed, regression = both_solvers(spec, W)
        assert closed.p[:, 0].mean() == pytest.approx(regression.p[:, 0].mean(), rel=5e-3)
        assert np.sqrt(np.mean((closed.p - regression.p) ** 2)) < 0.03

    def test_q_of_squared_terminal(self, W):
        # p(t) = B(t)^2 + T - t, so q(t, t) = 2 B(t)
        solution = solve_regression(BsvieSpec(theta=TerminalWeight(0.0, 0.0, 1.0)), W)
        assert np.sqrt(np.mean((solution.p - W.paths ** 2 - (1.0 - W.grid.nodes)) ** 2)) < 0.05
        q = estimate_q_diagonal(solution, W)
        assert np.sqrt(np.mean((q - 2.0 * W.paths[:, :-1]) ** 2)) < 0.1

    def test_q_vanishes_for_deterministic_terminal(self, W):
        solution = solve_regression(BsvieSpec(b0=ConstantKernel(0.1), theta=TerminalWeight(2.0)), W)
        q = estimate_q_diagonal(solution, W)
        assert np.max(np.abs(q)) < 1e-8

    def test_per_path_control_tied_to_brownian_level(self, W):
        # xi(t_1) = 0.3 |B(t_1)| makes the (B, xi) basis rank deficient at t_1
        xi = SingularControl(W.grid, 0.3 * np.abs(W.increments))
        spec = BsvieSpec(weight="unit", xi=xi, theta=TerminalWeight(1.0))
        solution = solve_regression(spec, W)
        remaining = W.grid.N - np.arange(W.grid.N + 1)
        expected = 1.0 + 0.3 * remaining * math.sqrt(2.0 * W.grid.dt / math.pi)
        assert np.sqrt(np.mean((solution.p - expected[None, :]) ** 2)) < 0.01
        assert solution.fits[1].dropped

    def test_density_matches_weight(self, W):
        sigma0 = ConstantKernel(0.3)
        assert np.allclose(girsanov_density(sigma0, W)[:, -1], girsanov_weight(sigma0, W))
        assert np.all(girsanov_weight(ConstantKernel(0.0), W) == 1.0)


class TestValidation:
    def test_unknown_weight(self):
        with pytest.raises(InvalidArgumentError):
            BsvieSpec(weight="sqrt_state")

    def test_inverse_state_needs_state(self):
        grid = make_grid(1.0, 4)
        spec = BsvieSpec(weight="inverse_state")
        with pytest.raises(InvalidArgumentError):
            spec.weight_values(3, grid, None)

    def test_inverse_state_needs_positive_state(self):
        grid = make_grid(1.0, 4)
        X = ProcessPath(grid, np.array([[1.0, 0.5, -0.1, 0.2, 0.3]]))
        with pytest.raises(DomainError):
            BsvieSpec(weight="inverse_state").weight_values(1, grid, X)

    def test_resolvent_from_other_kernel(self):
        W = sample_brownian(make_grid(1.0, 8), 10, seed=1)
        psi = neumann_psi(ConstantKernel(0.3), W.grid)
        with pytest.raises(InvalidArgumentError):
            solve_closed_form(BsvieSpec(b0=ConstantKernel(0.1)), psi, W)

    def test_closed_form_needs_resolvent(self):
        W = sample_brownian(make_grid(1.0, 8), 10, seed=1)
        with pytest.raises(InvalidArgumentError):
            solve_closed_form(BsvieSpec(), None, W)


def test_trapezoid_tail_of_constants():
    grid = make_grid(2.0, 10)
    table = np.ones((11, 11))
    out = trapezoid_tail(table, np.ones((1, 11)), grid.dt)[0]
    assert np.allclose(out, grid.T - grid.nodes)
