"""
Tests for the Hamiltonian, the stationarity and singular-gap checks, and policy comparisons
"""
import numpy as np
import pytest

from adjoint import solve_regression
from core import InvalidArgumentError, ProcessPath, RegularControl, SingularControl, make_grid, sample_brownian
from forward import (
    AffineCoefficient,
    PerformanceSpec,
    RunningReward,
    SvieSpec,
    TerminalWeight,
    deterministic_price,
    quadratic_control_cost,
    simulate,
)
from kernels import ConstantKernel, ExpDecayKernel, ScaledKernel
from maxprinciple import (
    CheckResult,
    ControlProblem,
    MpReport,
    adjoint_spec,
    brownian_sensitivity,
    check_singular_conditions,
    check_stationarity_u,
    compare_policies,
    concavity_probe,
    default_bumps,
    eval_hamiltonian,
    hamiltonian_u_gradient,
    singular_gap,
    solve_problem_adjoint,
    two_grid_constant,
)


def lq_problem(control_kernel=None, U=(-np.inf, np.inf)):
    """dX = u dt + dB, J = E[-1/2 int u^2 dt + X(T)]; optimum u = 1."""
    svie = SvieSpec(
        b=AffineCoefficient(control=control_kernel or ConstantKernel(1.0)),
        sigma=AffineCoefficient(const=ConstantKernel(1.0)),
    )
    perf = PerformanceSpec(running=quadratic_control_cost(1.0), theta=TerminalWeight(1.0))
    return ControlProblem(svie, perf, U)


def harvest_problem(rho, h=None):
    svie = SvieSpec(h=ScaledKernel(h or ConstantKernel(1.0), -1.0))
    perf = PerformanceSpec(singular=deterministic_price(rho), theta=TerminalWeight(1.0))
    return ControlProblem(svie, perf)


@pytest.fixture(scope="module")
def W():
    return sample_brownian(make_grid(1.0, 32), 2000, seed=17)


class TestAdjointSpec:
    def test_state_dependent_running_reward_rejected(self):
        running = RunningReward("state_linear", lambda t, x, u: x, lambda t, x, u: 1.0 + 0 * x, lambda t, x, u: 0 * x)
        problem = ControlProblem(SvieSpec(), PerformanceSpec(running=running))
        with pytest.raises(InvalidArgumentError):
            adjoint_spec(problem, make_grid(1.0, 4))

    def test_time_dependent_diffusion_kernel_rejected(self):
        svie = SvieSpec(sigma=AffineCoefficient(state=ExpDecayKernel(0.2, 1.0)))
        with pytest.raises(InvalidArgumentError):
            adjoint_spec(ControlProblem(svie), make_grid(1.0, 4))

    def test_weight_follows_price(self):
        spec = adjoint_spec(harvest_problem(2.0), make_grid(1.0, 4))
        assert spec.weight == "zero"


class TestHamiltonian:
    def test_lq_pieces(self, W):
        problem = lq_problem()
        u = RegularControl.constant(W.grid, 0.4)
        X, solution = solve_problem_adjoint(problem, u, None, W)
        assert np.allclose(solution.p, 1.0)
        H = eval_hamiltonian(problem, X, u, solution, W, q_diag=np.zeros((W.M, W.grid.N)))
        assert np.allclose(H.H0, -0.5 * 0.4 ** 2 + 0.4)
        assert np.allclose(H.H1, 0.0)
        assert np.allclose(H.calHbar, 0.0)

    def test_lq_gradient(self, W):
        problem = lq_problem()
        u = RegularControl.constant(W.grid, 0.25)
        X, solution = solve_problem_adjoint(problem, u, None, W)
        grad = hamiltonian_u_gradient(problem, X, u, solution, W)
        assert grad.shape == (W.M, W.grid.N)
        assert np.allclose(grad, 0.75)

    def test_memory_gradient(self, W):
        problem = lq_problem(ExpDecayKernel(1.0, 1.0))
        u = RegularControl.constant(W.grid, 0.5)
        X, solution = solve_problem_adjoint(problem, u, None, W)
        grad = hamiltonian_u_gradient(problem, X, u, solution, W)
        t = W.grid.nodes[:-1]
        assert np.allclose(grad[0], np.exp(-(1.0 - t)) - 0.5, atol=1e-3)

    def test_singular_gap_with_memory(self):
        grid = make_grid(1.0, 64)
        problem = harvest_problem(1.5, h=ExpDecayKernel(1.0, 1.0))
        X = ProcessPath(grid, np.ones((2, 65)))
        gap = singular_gap(problem, np.ones((2, 65)), X)
        t = grid.nodes[:-1]
        assert np.allclose(gap, 1.5 - np.exp(-(1.0 - t))[None, :], atol=1e-4)

    def test_singular_gap_shape_mismatch(self):
        grid = make_grid(1.0, 4)
        X = ProcessPath(grid, np.ones((2, 5)))
        with pytest.raises(InvalidArgumentError):
            singular_gap(harvest_problem(1.0), np.ones((3, 5)), X)


class TestStationarity:
    def test_optimum_passes(self, W):
        report = check_stationarity_u(lq_problem(), RegularControl.constant(W.grid, 1.0), None, W)
        assert report.passed
        assert report.check("stationarity").statistic == pytest.approx(0.0, abs=1e-10)
        assert len(report.checks) == 1 + len(default_bumps(W.grid))

    def test_suboptimal_control_fails_only_stationarity(self, W):
        report = check_stationarity_u(lq_problem(), RegularControl.constant(W.grid, 0.0), None, W)
        assert not report.check("stationarity").passed
        assert all(c.passed for c in report.checks if c.name.startswith("gradient"))

    def test_memory_gradient_against_bumps(self, W):
        u = RegularControl.constant(W.grid, 0.5)
        report = check_stationarity_u(lq_problem(ExpDecayKernel(1.0, 1.0)), u, None, W, abs_tol=1e-4)
        bumps = [c for c in report.checks if c.name.startswith("gradient")]
        assert len(bumps) == 6
        assert all(c.passed for c in bumps)

    def test_upper_boundary_is_one_sided(self, W):
        problem = lq_problem(U=(0.0, 1.0))
        report = check_stationarity_u(problem, RegularControl.constant(W.grid, 1.0, U=(0.0, 1.0)), None, W)
        assert report.checks[0].name == "stationarity_one_sided"
        assert report.passed
        assert sum(n.startswith("skipped") for n in report.notes) == 6

    def test_lower_boundary_with_positive_gradient_fails(self, W):
        problem = lq_problem(U=(0.0, 1.0))
        report = check_stationarity_u(problem, RegularControl.constant(W.grid, 0.0, U=(0.0, 1.0)), None, W)
        assert not report.check("stationarity_one_sided").passed

    def test_default_bumps(self):
        bumps = default_bumps(make_grid(1.0, 10))
        assert [label for label, _ in bumps][:2] == ["bump t=0.1 eta=+1", "bump t=0.1 eta=-1"]
        assert bumps[0][1].tolist() == [0, 1, 1, 0, 0, 0, 0, 0, 0, 0]


class TestSingularConditions:
    def test_low_price_no_harvest_passes(self, W):
        problem = harvest_problem(0.5)
        X = simulate(problem.svie, None, None, W)
        p = np.ones_like(X.values)
        report = check_singular_conditions(problem, p, X, None, W)
        assert report.passed
        assert np.allclose(report.gap_mean, -0.5)
        assert report.check("complementarity").note == "no singular control"

    def test_high_price_fails_gap_sign(self, W):
        problem = harvest_problem(2.0)
        X = simulate(problem.svie, None, None, W)
        report = check_singular_conditions(problem, np.ones_like(X.values), X, None, W)
        assert not report.check("gap_sign").passed

    def test_harvest_off_contact_fails_complementarity(self, W):
        problem = harvest_problem(0.5)
        xi = SingularControl.atom(W.grid, 0.25, 0.3)
        X = simulate(problem.svie, None, xi, W)
        report = check_singular_conditions(problem, np.ones_like(X.values), X, xi, W)
        assert report.check("gap_sign").passed
        assert not report.check("complementarity").passed
        assert report.check("complementarity").statistic == pytest.approx(0.15)


class TestReport:
    def test_frames_and_lookup(self):
        grid = make_grid(1.0, 4)
        report = MpReport(grid, [CheckResult("a", 0.1, 0.01, 0.2, True), CheckResult("b", 1.0, 0.1, 0.3, False, "x")])
        assert not report.passed
        assert list(report.to_frame().columns) == ["check", "statistic", "se", "threshold", "passed", "note"]
        with pytest.raises(KeyError):
            report.check("c")
        assert "FAIL b" in report.summary()

    def test_gap_frame_is_undefined_at_horizon(self):
        grid = make_grid(1.0, 4)
        report = MpReport(grid, gap_mean=np.zeros(4), gap_se=np.zeros(4))
        frame = report.gap_frame()
        assert len(frame) == 5
        assert np.isnan(frame["gap_G"].iloc[-1])
        assert frame["gap_G"].iloc[:4].eq(0.0).all()

    def test_extend_merges(self):
        grid = make_grid(1.0, 4)
        first = MpReport(grid, [CheckResult("a", 0, 0, 0, True)])
        first.extend(MpReport(grid, [CheckResult("b", 0, 0, 0, True)], notes=["n"]))
        assert [c.name for c in first.checks] == ["a", "b"]
        assert first.notes == ["n"]


class TestPolicies:
    def test_no_harvest_beats_atom_when_price_is_low(self, W):
        problem = harvest_problem(0.5)
        atom = SingularControl.atom(W.grid, 0.25, 0.5)
        table = compare_policies(problem, SingularControl.zero(W.grid), {"atom": atom}, W)
        assert table["policy"].tolist() == ["candidate", "atom"]
        assert table.loc[1, "diff"] == pytest.approx(0.25)
        assert table["passed"].all()

    def test_worse_candidate_is_flagged(self, W):
        problem = harvest_problem(0.5)
        atom = SingularControl.atom(W.grid, 0.25, 0.5)
        table = compare_policies(problem, atom, [("zero", SingularControl.zero(W.grid))], W)
        assert not table.loc[1, "passed"]

    def test_linear_problem_is_concave(self, W):
        problem = harvest_problem(0.5)
        controls = [SingularControl.zero(W.grid), SingularControl.atom(W.grid, 0.5, 1.0),
                    SingularControl.uniform_rate(W.grid, 0.4)]
        table = concavity_probe(problem, controls, W)
        assert len(table) == 3
        assert table["concave"].all()
        assert np.allclose(table["gap"], 0.0, atol=1e-12)

    def test_two_grid_constant(self):
        assert two_grid_constant(lambda n: 1.0 + 2.0 / n, 16) == pytest.approx(2.0)
        with pytest.raises(InvalidArgumentError):
            two_grid_constant(lambda n: 0.0, 0)


def test_brownian_sensitivity_of_linear_adjoint():
    W = sample_brownian(make_grid(1.0, 16), 5000, seed=23)
    problem = ControlProblem(SvieSpec(), PerformanceSpec(theta=TerminalWeight(1.0, 0.5)))
    solution = solve_regression(adjoint_spec(problem, W.grid), W)
    d = brownian_sensitivity(solution, problem.performance.theta, W)
    assert np.all(d[:, 0] == 0.0)
    assert abs(d[:, 1:-1].mean() - 0.5) < 0.05
    assert np.allclose(d[:, -1], 0.5)
