"""
Tests for directional derivatives, the duality formula and the Fubini rearrangements
"""
import numpy as np
import pytest

from core import InvalidArgumentError, ProcessPath, SingularControl, make_grid, sample_brownian
from kernels import ConstantKernel, ExpDecayKernel
from malliavin import (
    Composite,
    ExpWienerIntegral,
    TerminalSquare,
    TerminalValue,
    WienerIntegral,
    brownian_integrand,
    constant_integrand,
    deterministic_integrand,
    directional_derivative,
    duality_check,
    duality_suite,
    fubini_checks,
    get_functional,
    hida_derivative_profile,
    terminal_integrand,
)

N_SE = 4.0


@pytest.fixture(scope="module")
def W():
    return sample_brownian(make_grid(1.0, 16), 20000, seed=99)


class TestDerivatives:
    def test_profile_matches_analytic(self, W):
        F = TerminalSquare()
        profile = hida_derivative_profile(F, W)
        assert np.allclose(profile, F.derivative(W.paths, W.grid), atol=1e-6)

    def test_wiener_integral_profile(self, W):
        F = WienerIntegral(np.cos)
        profile = hida_derivative_profile(F, W)
        assert np.allclose(profile, np.cos(W.grid.nodes[:-1])[None, :], atol=1e-6)

    def test_directional_derivative_of_terminal_value(self, W):
        gamma = np.linspace(0.0, 1.0, W.grid.N)
        dF = directional_derivative(TerminalValue(), gamma, W)
        assert np.allclose(dF, gamma.sum() * W.grid.dt)

    def test_chain_rule(self, W):
        F = Composite(np.sin, np.cos, TerminalValue())
        profile = hida_derivative_profile(F, W, eps=1e-5)
        assert np.allclose(profile, F.derivative(W.paths, W.grid), atol=1e-6)

    def test_rejects_nonpositive_eps(self, W):
        with pytest.raises(InvalidArgumentError):
            directional_derivative(TerminalValue(), np.ones(W.grid.N), W, eps=0.0)

    def test_unknown_functional(self):
        with pytest.raises(InvalidArgumentError):
            get_functional("brownian_bridge")


class TestDuality:
    @pytest.mark.parametrize("name", ["terminal_value", "terminal_square", "wiener_integral", "exp_wiener"])
    def test_presets_pass(self, W, name):
        report = duality_check(get_functional(name), constant_integrand(1.0), W)
        assert report.passed(n_se=N_SE)

    def test_adapted_random_integrand(self, W):
        report = duality_check(TerminalSquare(), brownian_integrand(), W)
        assert report.passed(n_se=N_SE)
        # E[B_T^2 sum B dB] = sum 2 t_j dt
        grid = W.grid
        assert report.rhs.within(2.0 * np.sum(grid.nodes[:-1]) * grid.dt, n_se=N_SE)

    def test_regressed_conditional_derivative(self, W):
        F = Composite(np.exp, np.exp, TerminalValue())
        report = duality_check(F, deterministic_integrand(np.cos), W, degree=3)
        assert report.passed(n_se=N_SE)

    def test_rejects_anticipating_integrand(self, W):
        with pytest.raises(InvalidArgumentError):
            duality_check(TerminalValue(), terminal_integrand(), W)

    def test_suite_frame(self, W):
        frame = duality_suite(["terminal_value", "exp_wiener"], W)
        assert list(frame["test"]) == ["terminal_value", "exp_wiener"]
        assert list(frame.columns) == ["test", "lhs", "lhs_se", "rhs", "rhs_se", "diff", "diff_se", "passed"]
        assert (frame["diff"].abs() <= N_SE * frame["diff_se"] + 1e-10).all()


class TestFubini:
    def test_double_sums_agree(self):
        W = sample_brownian(make_grid(1.0, 16), 200, seed=5)
        p = ProcessPath(W.grid, 1.0 + W.paths)
        xi = SingularControl.uniform_rate(W.grid, 0.7)
        report = fubini_checks(p, ExpDecayKernel(1.0, 2.0), xi, W)
        assert report.residual_dt <= 1e-12
        assert report.residual_dxi <= 1e-12
        assert report.diff_db is None

    def test_stochastic_rearrangement(self):
        W = sample_brownian(make_grid(1.0, 16), 20000, seed=6)
        p = ProcessPath(W.grid, W.paths)
        report = fubini_checks(p, ConstantKernel(1.0), SingularControl.zero(W.grid), W, p_functional=lambda paths: paths)
        assert report.diff_db.within(0.0, n_se=N_SE, atol=1e-10)

    def test_grid_mismatch(self):
        W = sample_brownian(make_grid(1.0, 8), 10, seed=1)
        p = ProcessPath(make_grid(1.0, 4), np.ones((10, 5)))
        with pytest.raises(InvalidArgumentError):
            fubini_checks(p, ConstantKernel(1.0), SingularControl.zero(W.grid), W)


def test_exp_wiener_has_unit_mean(W):
    values = ExpWienerIntegral(np.cos).evaluate(W.paths, W.grid)
    se = values.std(ddof=1) / np.sqrt(values.size)
    assert abs(values.mean() - 1.0) <= N_SE * se
