"""
Tests for the Volterra state simulation, the performance functional and derivative processes
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core import (
    DomainError,
    InvalidArgumentError,
    RegularControl,
    SimulationDivergedError,
    SingularControl,
    make_grid,
    sample_brownian,
)
from forward import (
    AffineCoefficient,
    PerformanceSpec,
    SvieSpec,
    TerminalWeight,
    derivative_process,
    deterministic_price,
    ensemble_summary,
    evaluate_J,
    log_price,
    quadratic_control_cost,
    simulate,
    state_price,
)
from kernels import ConstantKernel, ExpDecayKernel, ScaledKernel


def harvest_spec(h=1.0, **kwargs):
    return SvieSpec(h=ScaledKernel(ConstantKernel(h), -1.0), **kwargs)


class TestSimulate:
    def test_constant_drift(self, ensemble):
        W = ensemble(N=16, M=5)
        X = simulate(SvieSpec(b=AffineCoefficient(const=ConstantKernel(1.0))), None, None, W)
        assert np.allclose(X.values, 1.0 + W.grid.nodes[None, :])

    def test_linear_drift_is_compound_growth(self, ensemble):
        W = ensemble(N=20, M=3)
        a, dt = 0.7, W.grid.dt
        X = simulate(SvieSpec(b=AffineCoefficient(state=ConstantKernel(a))), None, None, W)
        assert np.allclose(X.values[0], (1.0 + a * dt) ** np.arange(21))

    def test_additive_noise_is_brownian(self, ensemble):
        W = ensemble(N=8, M=50)
        X = simulate(SvieSpec(sigma=AffineCoefficient(const=ConstantKernel(1.0))), None, None, W)
        assert np.allclose(X.values, 1.0 + W.paths)

    def test_atom_acts_after_its_node(self, ensemble):
        W = ensemble(N=10, M=4)
        xi = SingularControl.atom(W.grid, 0.5, 0.5)
        X = simulate(harvest_spec(), None, xi, W)
        assert np.allclose(X.values[:, :6], 1.0)
        assert np.allclose(X.values[:, 6:], 0.5)

    def test_memory_kernel_and_control(self, ensemble):
        W = ensemble(N=32, M=3)
        spec = SvieSpec(phi=0.0, b=AffineCoefficient(control=ExpDecayKernel(1.0, 1.0)))
        u = RegularControl.constant(W.grid, 0.5)
        X = simulate(spec, u, None, W)
        t = W.grid.nodes
        # left Riemann sum of 0.5 * exp(-(t - s)) over s < t
        expected = [0.5 * W.grid.dt * np.exp(-(ti - t[:i])).sum() for i, ti in enumerate(t)]
        assert np.allclose(X.values[0], expected)

    def test_divergence_reports_first_node(self, ensemble):
        W = ensemble(N=8, M=2)
        spec = SvieSpec(b=AffineCoefficient(state=ConstantKernel(1e200)))
        with pytest.raises(SimulationDivergedError) as info:
            simulate(spec, None, None, W)
        assert info.value.node == 2
        assert info.value.t == pytest.approx(0.25)

    def test_grid_mismatch(self, ensemble):
        W = ensemble(N=8, M=2)
        xi = SingularControl.zero(make_grid(1.0, 16))
        with pytest.raises(InvalidArgumentError):
            simulate(harvest_spec(), None, xi, W)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(min_value=0.0, max_value=2.0), min_size=8, max_size=8))
    def test_harvest_lowers_terminal_state(self, sizes):
        W = sample_brownian(make_grid(1.0, 8), 3, seed=1)
        spec = harvest_spec(sigma=AffineCoefficient(const=ConstantKernel(0.3)))
        free = simulate(spec, None, None, W)
        harvested = simulate(spec, None, SingularControl(W.grid, np.array(sizes)), W)
        assert np.allclose(free.terminal() - harvested.terminal(), sum(sizes))

    def test_summary_columns(self, ensemble):
        W = ensemble(N=4, M=20)
        xi = SingularControl.uniform_rate(W.grid, 1.0)
        frame = ensemble_summary(simulate(harvest_spec(), None, xi, W), xi)
        assert list(frame.columns) == ["t", "mean_X", "sd_X", "mean_xi"]
        assert frame["mean_xi"].iloc[-1] == pytest.approx(1.0)


class TestPerformance:
    def test_terminal_only(self, ensemble):
        W = ensemble(N=16, M=10)
        spec = SvieSpec(b=AffineCoefficient(const=ConstantKernel(1.0)))
        J = evaluate_J(PerformanceSpec(), simulate(spec, None, None, W), None, None, W)
        assert J.value == pytest.approx(2.0)
        assert J.se == pytest.approx(0.0, abs=1e-14)

    def test_deterministic_price_and_harvest(self, ensemble):
        W = ensemble(N=10, M=10)
        xi = SingularControl.atom(W.grid, 0.5, 0.5)
        perf = PerformanceSpec(singular=deterministic_price(2.0))
        J = evaluate_J(perf, simulate(harvest_spec(), None, xi, W), None, xi, W)
        assert J.value == pytest.approx(2.0 * 0.5 + 0.5)

    def test_state_price(self, ensemble):
        W = ensemble(N=10, M=10)
        xi = SingularControl.atom(W.grid, 0.2, 0.25)
        perf = PerformanceSpec(singular=state_price(), theta=TerminalWeight(0.0))
        J = evaluate_J(perf, simulate(harvest_spec(), None, xi, W), None, xi, W)
        assert J.value == pytest.approx(0.25)

    def test_quadratic_control_cost(self, ensemble):
        W = ensemble(N=10, M=10)
        u = RegularControl.constant(W.grid, 2.0)
        perf = PerformanceSpec(running=quadratic_control_cost(1.0), theta=TerminalWeight(0.0))
        X = simulate(SvieSpec(), u, None, W)
        assert evaluate_J(perf, X, u, None, W).value == pytest.approx(-2.0)

    def test_log_price_needs_positive_state(self, ensemble):
        W = ensemble(N=10, M=3)
        xi = SingularControl.atom(W.grid, 0.3, 0.1)
        perf = PerformanceSpec(singular=log_price())
        X = simulate(harvest_spec(phi=-1.0), None, xi, W)
        with pytest.raises(DomainError):
            evaluate_J(perf, X, None, xi, W)

    def test_random_terminal_weight(self, ensemble):
        W = ensemble(N=8, M=20000)
        J = evaluate_J(PerformanceSpec(theta=TerminalWeight(1.0, 0.5, 0.0)), simulate(SvieSpec(), None, None, W), None, None, W)
        assert J.estimate.within(1.0, n_se=4)


class TestDerivativeProcess:
    def test_control_direction(self, ensemble):
        W = ensemble(N=16, M=3)
        spec = SvieSpec(b=AffineCoefficient(control=ConstantKernel(1.0)))
        Y = derivative_process(spec, RegularControl.constant(W.grid, 0.2), None, W, v=np.ones(16))
        assert np.allclose(Y.values, W.grid.nodes[None, :], atol=1e-8)

    def test_singular_direction(self, ensemble):
        W = ensemble(N=10, M=3)
        zeta = np.zeros(10)
        zeta[4] = 1.0
        Y = derivative_process(harvest_spec(), None, None, W, zeta=zeta)
        assert np.allclose(Y.values[:, :5], 0.0)
        assert np.allclose(Y.values[:, 5:], -1.0, atol=1e-8)

    def test_no_direction_is_zero(self, ensemble):
        W = ensemble(N=4, M=3)
        assert np.all(derivative_process(harvest_spec(), None, None, W).values == 0.0)

    def test_inadmissible_perturbation(self, ensemble):
        W = ensemble(N=4, M=3)
        u = RegularControl.constant(W.grid, 1.0, U=(0.0, 1.0))
        with pytest.raises(InvalidArgumentError):
            derivative_process(SvieSpec(), u, None, W, v=np.ones(4))

    def test_rejects_nonpositive_step(self, ensemble):
        W = ensemble(N=4, M=3)
        with pytest.raises(InvalidArgumentError):
            derivative_process(SvieSpec(), None, None, W, lam=0.0)
