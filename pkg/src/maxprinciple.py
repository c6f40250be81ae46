"""
Hamiltonian evaluation and numerical checks of the maximum principle.

The Hamiltonian splits into a dt part H = H0 + H1 and a dxi part Hbar = Hbar0 + Hbar1:

    H0    = f0(t,x,u) + p(t) b(t,t,x,u) + q(t,t) sigma(t,t,x,u)
    H1    = int_t^T p(s) d_1 b(s,t,x,u) ds + int_t^T E[D_t p(s) | F_t] d_1 sigma(s,t,x,u) ds
    Hbar0 = f1(t,x) + p(t) h(t,t)
    Hbar1 = int_t^T p(s) d_1 h(s,t) ds

where d_1 is the derivative in the first time argument. Necessary conditions are
checked separately on the dt part (stationarity in u) and on the dxi part (gap sign
and complementarity).
"""
import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from adjoint import (
    AdjointSolution,
    BsvieSpec,
    estimate_q_diagonal,
    node_features,
    solve_regression,
    trapezoid_tail,
)
from core import (
    BrownianEnsemble,
    DomainError,
    InvalidArgumentError,
    ProcessPath,
    RegularControl,
    SingularControl,
    TimeGrid,
    mc_estimate,
    nodewise_estimates,
)
from forward import AffineCoefficient, PerformanceSpec, SvieSpec, performance_samples, simulate
from kernels import ConstantKernel, MissingPartialError, TwoTimeKernel, adjoint_kernel
from regression import conditional_expectation

LOGGER = logging.getLogger(__name__)

# running rewards the linear adjoint can carry (no x-dependence)
_STATE_FREE_RUNNING = ("zero", "quadratic_control_cost")


@dataclass(frozen=True)
class ControlProblem:
    """Controlled SVIE plus performance functional; U is the closed control interval."""

    svie: SvieSpec
    performance: PerformanceSpec = field(default_factory=PerformanceSpec)
    U: Tuple[float, float] = (-np.inf, np.inf)


def adjoint_spec(problem: ControlProblem, grid: TimeGrid, xi: Optional[SingularControl] = None) -> BsvieSpec:
    """Linear adjoint BSVIE of a control problem, with the kernel derived from the Hamiltonian."""
    perf = problem.performance
    if perf.running.kind not in _STATE_FREE_RUNNING:
        raise InvalidArgumentError(f"running reward {perf.running.kind!r} depends on the state; not supported")
    sx = problem.svie.sigma.state
    if sx is not None and not sx.is_zero and not sx.time_invariant:
        raise InvalidArgumentError("the diffusion state kernel must not depend on its first time argument")
    bx = problem.svie.b.state
    b0 = adjoint_kernel(bx, grid) if bx is not None and not bx.is_zero else ConstantKernel(0.0)
    return BsvieSpec(
        b0=b0,
        sigma0=sx if sx is not None else ConstantKernel(0.0),
        weight=perf.singular.adjoint_weight,
        xi=xi,
        theta=perf.theta,
    )


def solve_problem_adjoint(
    problem: ControlProblem,
    u: Optional[RegularControl],
    xi: Optional[SingularControl],
    W: BrownianEnsemble,
    degree: int = 2,
) -> Tuple[ProcessPath, AdjointSolution]:
    """Forward state and regression adjoint for the pair (u, xi)."""
    X = simulate(problem.svie, u, xi, W)
    solution = solve_regression(adjoint_spec(problem, W.grid, xi), W, X, degree=degree)
    return X, solution


# =============================================================================
# Hamiltonian
# =============================================================================

@dataclass
class HamiltonianEval:
    """Per-path, per-node pieces of the Hamiltonian, each of shape (M, N+1)."""

    grid: TimeGrid
    H0: np.ndarray = field(repr=False)
    H1: np.ndarray = field(repr=False)
    Hbar0: np.ndarray = field(repr=False)
    Hbar1: np.ndarray = field(repr=False)

    @property
    def calH(self) -> np.ndarray:
        return self.H0 + self.H1

    @property
    def calHbar(self) -> np.ndarray:
        return self.Hbar0 + self.Hbar1


def _pad(values: np.ndarray, N: int) -> np.ndarray:
    """Extend an (M, N) node array to (M, N+1) by repeating the last column."""
    return np.concatenate([values, values[:, -1:]], axis=1) if values.shape[1] == N else values


def _dt_table(kernel: Optional[TwoTimeKernel], grid: TimeGrid) -> Optional[np.ndarray]:
    if kernel is None or kernel.is_zero or kernel.time_invariant:
        return None
    if not kernel.has_dt:
        raise MissingPartialError(f"{kernel!r} has no derivative in its first argument")
    return kernel.dt_table(grid)


def _forward_integral(coef: AffineCoefficient, values: np.ndarray, X: np.ndarray, U: np.ndarray, grid: TimeGrid):
    """int_{t_i}^T values(s) d_1 coef(s, t_i, X_i, U_i) ds for every node, shape (M, N+1)."""
    out = np.zeros_like(values)
    for kernel, factor in zip(coef.parts(), (1.0, X, U)):
        D = _dt_table(kernel, grid)
        if D is not None:
            out += factor * trapezoid_tail(D.T, values, grid.dt)
    return out


def _diagonal(kernel: Optional[TwoTimeKernel], grid: TimeGrid) -> np.ndarray:
    if kernel is None or kernel.is_zero:
        return np.zeros(grid.N + 1)
    return kernel.diagonal(grid.nodes)


def brownian_sensitivity(solution: AdjointSolution, theta, W: BrownianEnsemble, eps: float = 1e-4) -> np.ndarray:
    """
    Experimental proxy for D_t p(s), t < s: derivative of the fitted p(s) in its Brownian
    feature, holding the other features fixed. Shape (M, N+1).
    """
    if not solution.fits or solution.features is None:
        raise InvalidArgumentError("the Brownian sensitivity needs a regression solution with stored fits")
    grid = W.grid
    d = np.zeros((W.M, grid.N + 1))
    for k in range(grid.N):
        fit, feats = solution.fits[k], solution.features[k]
        up, down = feats.copy(), feats.copy()
        up[:, 0] += eps
        down[:, 0] -= eps
        d[:, k] = (fit.predict(up) - fit.predict(down)) / (2.0 * eps)
    BT = W.paths[:, -1]
    d[:, grid.N] = theta.c1 + 2.0 * theta.c2 * BT
    return d


def _malliavin_term(
    problem: ControlProblem,
    coef: AffineCoefficient,
    solution: AdjointSolution,
    X: np.ndarray,
    U: np.ndarray,
    W: BrownianEnsemble,
    degree: int,
) -> np.ndarray:
    grid = W.grid
    if all(_dt_table(k, grid) is None for k in coef.parts()):
        return np.zeros_like(X)
    LOGGER.warning("[maxprinciple] diffusion depends on its first time argument; Malliavin term is experimental")
    d = brownian_sensitivity(solution, problem.performance.theta, W)
    raw = _forward_integral(coef, d, X, U, grid)
    out = np.zeros_like(raw)
    features = solution.features
    for i in range(grid.N):
        out[:, i], _ = conditional_expectation(raw[:, i], features[i], degree=degree)
    return out


def _q_values(solution: AdjointSolution, W: BrownianEnsemble, q_diag: Optional[np.ndarray], degree: int) -> np.ndarray:
    q = q_diag if q_diag is not None else solution.q_diag
    if q is None:
        q = estimate_q_diagonal(solution, W, degree=degree)
    return np.concatenate([q, np.zeros((q.shape[0], 1))], axis=1)


def _singular_reward(problem: ControlProblem, X: ProcessPath) -> np.ndarray:
    singular = problem.performance.singular
    t = X.grid.nodes[None, :]
    if singular.requires_positive and np.any(X.values <= 0):
        path, node = (int(v) for v in np.argwhere(X.values <= 0)[0])
        raise DomainError(
            f"{singular.kind} price needs X > 0: X={X.values[path, node]:.6g} on path {path} at node {node}"
        )
    return np.asarray(singular.fn(t, X.values), dtype=float)


def eval_hamiltonian(
    problem: ControlProblem,
    X: ProcessPath,
    u: Optional[RegularControl],
    solution: AdjointSolution,
    W: BrownianEnsemble,
    q_diag: Optional[np.ndarray] = None,
    degree: int = 2,
) -> HamiltonianEval:
    """
    All four Hamiltonian pieces along the sampled paths.

    Raises:
        MissingPartialError: a kernel depending on its first argument has no analytic derivative
    """
    grid = W.grid
    grid.check_same(X.grid, "state and ensemble")
    grid.check_same(solution.grid, "adjoint solution and ensemble")
    M, N = W.M, grid.N
    t = grid.nodes[None, :]
    p = solution.p
    Xv = X.values
    U = _pad(np.array(u.as_paths(M)) if u is not None else np.zeros((M, N)), N)
    svie = problem.svie

    H0 = np.asarray(problem.performance.running.fn(t, Xv, U), dtype=float) + p * svie.b(t, t, Xv, U)
    if not svie.sigma.vanishes:
        H0 = H0 + _q_values(solution, W, q_diag, degree) * svie.sigma(t, t, Xv, U)
    H1 = _forward_integral(svie.b, p, Xv, U, grid) + _malliavin_term(problem, svie.sigma, solution, Xv, U, W, degree)

    Hbar0 = _singular_reward(problem, X) + p * _diagonal(svie.h, grid)[None, :]
    Hbar1 = _forward_integral(AffineCoefficient(const=svie.h), p, Xv, U, grid)
    return HamiltonianEval(grid, H0, H1, Hbar0, Hbar1)


def hamiltonian_u_gradient(
    problem: ControlProblem,
    X: ProcessPath,
    u: Optional[RegularControl],
    solution: AdjointSolution,
    W: BrownianEnsemble,
    q_diag: Optional[np.ndarray] = None,
    degree: int = 2,
) -> np.ndarray:
    """d calH / du along the paths at nodes t_0..t_{N-1}, shape (M, N)."""
    grid = W.grid
    M, N = W.M, grid.N
    t = grid.nodes[None, :]
    p = solution.p
    Xv = X.values
    U = _pad(np.array(u.as_paths(M)) if u is not None else np.zeros((M, N)), N)
    svie = problem.svie
    bu, su = svie.b.control, svie.sigma.control

    grad = np.asarray(problem.performance.running.du(t, Xv, U), dtype=float)
    grad = grad + p * _diagonal(bu, grid)[None, :]
    grad = grad + _forward_integral(AffineCoefficient(const=bu), p, Xv, U, grid)
    if su is not None and not su.is_zero:
        grad = grad + _q_values(solution, W, q_diag, degree) * _diagonal(su, grid)[None, :]
        grad = grad + _malliavin_term(problem, AffineCoefficient(const=su), solution, Xv, U, W, degree)
    return grad[:, :N]


def singular_gap(problem: ControlProblem, p: np.ndarray, X: ProcessPath) -> np.ndarray:
    """Hbar0 + Hbar1 per path at t_0..t_{N-1}; needs p only, never q."""
    grid = X.grid
    h = problem.svie.h
    if p.shape != X.values.shape:
        raise InvalidArgumentError(f"adjoint shape {p.shape} does not match the state {X.values.shape}")
    gap = _singular_reward(problem, X) + p * _diagonal(h, grid)[None, :]
    D = _dt_table(h, grid)
    if D is not None:
        gap = gap + trapezoid_tail(D.T, p, grid.dt)
    return gap[:, : grid.N]


# =============================================================================
# Reports
# =============================================================================

@dataclass(frozen=True)
class CheckResult:
    name: str
    statistic: float
    se: float
    threshold: float
    passed: bool
    note: str = ""


@dataclass
class MpReport:
    """Outcome of a maximum-principle check; gap_* are per node at t_0..t_{N-1}."""

    grid: TimeGrid
    checks: List[CheckResult] = field(default_factory=list)
    gap_mean: Optional[np.ndarray] = field(default=None, repr=False)
    gap_se: Optional[np.ndarray] = field(default=None, repr=False)
    notes: List[str] = field(default_factory=list)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def extend(self, other: "MpReport") -> "MpReport":
        self.checks.extend(other.checks)
        self.notes.extend(other.notes)
        self.tables.update(other.tables)
        if other.gap_mean is not None:
            self.gap_mean, self.gap_se = other.gap_mean, other.gap_se
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(c.name, c.statistic, c.se, c.threshold, c.passed, c.note) for c in self.checks],
            columns=["check", "statistic", "se", "threshold", "passed", "note"],
        )

    def gap_frame(self) -> pd.DataFrame:
        """t, gap_G, gap_SE on all N+1 nodes; the gap is undefined at T."""
        n = self.grid.N + 1
        G = np.full(n, np.nan)
        S = np.full(n, np.nan)
        if self.gap_mean is not None:
            G[: self.grid.N] = self.gap_mean
            S[: self.grid.N] = self.gap_se
        return pd.DataFrame({"t": self.grid.nodes, "gap_G": G, "gap_SE": S})

    def summary(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.statistic:.6g} (se {c.se:.3g}) {c.note}".rstrip()
                 for c in self.checks]
        return "\n".join(lines + self.notes)


# =============================================================================
# Singular conditions
# =============================================================================

def conditional_gap(
    problem: ControlProblem,
    p: np.ndarray,
    X: ProcessPath,
    W: BrownianEnsemble,
    xi: Optional[SingularControl] = None,
    degree: int = 2,
) -> np.ndarray:
    """E[Hbar0 + Hbar1 | F_t] per path, shape (M, N)."""
    raw = singular_gap(problem, p, X)
    h = problem.svie.h
    if h.is_zero or h.time_invariant:
        return raw
    features = node_features(W, X, xi)
    out = np.empty_like(raw)
    for i in range(W.grid.N):
        out[:, i], _ = conditional_expectation(raw[:, i], features[i], degree=degree)
    return out


def check_singular_conditions(
    problem: ControlProblem,
    p: np.ndarray,
    X: ProcessPath,
    xi_hat: Optional[SingularControl],
    W: BrownianEnsemble,
    n_se: float = 3.0,
    abs_tol: float = 1e-8,
    degree: int = 2,
) -> MpReport:
    """
    Gap sign E[Hbar | F_t] <= 0 at every node and complementarity E[Hbar | F_t] dxi = 0.

    Args:
        p: adjoint values (M, N+1) on the same ensemble as X
    """
    grid = W.grid
    G = conditional_gap(problem, p, X, W, xi_hat, degree)
    gap_mean, gap_se = nodewise_estimates(G)

    pos_mean, pos_se = nodewise_estimates(np.maximum(G, 0.0))
    excess = pos_mean - n_se * pos_se - abs_tol
    worst = int(np.argmax(excess))
    sign = CheckResult(
        "gap_sign",
        float(pos_mean[worst]),
        float(pos_se[worst]),
        float(n_se * pos_se[worst] + abs_tol),
        bool(np.all(excess <= 0)),
        f"worst t={grid.nodes[worst]:.6g}",
    )

    if xi_hat is None or xi_hat.is_zero:
        comp = CheckResult("complementarity", 0.0, 0.0, abs_tol, True, "no singular control")
    else:
        xi_hat.grid.check_same(grid, "singular control and ensemble")
        c_mean, c_se = nodewise_estimates(G * xi_hat.as_paths(W.M))
        total = float(np.sum(np.abs(c_mean)))
        se = float(np.sqrt(np.sum(c_se ** 2)))
        comp = CheckResult("complementarity", total, se, n_se * se + abs_tol, total <= n_se * se + abs_tol)

    report = MpReport(grid, [sign, comp], gap_mean, gap_se)
    LOGGER.info("[maxprinciple] singular conditions: gap_sign=%s complementarity=%s", sign.passed, comp.passed)
    return report


# =============================================================================
# Stationarity in u
# =============================================================================

def default_bumps(grid: TimeGrid, locations=(0.1, 0.4, 0.7), width: float = 0.2) -> List[Tuple[str, np.ndarray]]:
    """Indicator bumps eta * 1_[t, t+width) at each location, eta = +1 and -1."""
    T, N = grid.T, grid.N
    out = []
    for loc in locations:
        lo = min(int(np.floor(loc * N + 1e-9)), N - 1)
        hi = max(lo + 1, min(int(np.floor((loc + width) * N + 1e-9)), N))
        for eta in (1.0, -1.0):
            v = np.zeros(N)
            v[lo:hi] = eta
            out.append((f"bump t={loc * T:.3g} eta={eta:+.0f}", v))
    return out


def check_stationarity_u(
    problem: ControlProblem,
    u_hat: RegularControl,
    xi: Optional[SingularControl],
    W: BrownianEnsemble,
    bumps: Optional[Sequence[Tuple[str, np.ndarray]]] = None,
    lam: float = 1e-4,
    n_se: float = 3.0,
    abs_tol: float = 1e-8,
    degree: int = 2,
) -> MpReport:
    """
    Stationarity E[d calH/du | F_t] = 0 at u_hat (a one-sided sign check where u_hat sits
    on the boundary of U), plus bump directional derivatives of J against the gradient.
    """
    grid = W.grid
    X, solution = solve_problem_adjoint(problem, u_hat, xi, W, degree)
    grad = hamiltonian_u_gradient(problem, X, u_hat, solution, W, degree=degree)
    features = node_features(W, X, xi)
    cond = np.empty_like(grad)
    for i in range(grid.N):
        cond[:, i], _ = conditional_expectation(grad[:, i], features[i], degree=degree)
    g_mean, g_se = nodewise_estimates(cond)

    flag = u_hat.on_boundary()
    if flag.ndim == 2:
        flag = np.where(np.all(flag == flag[:1], axis=0), flag[0], 0)
    violation = np.where(flag < 0, np.maximum(g_mean, 0.0), np.where(flag > 0, np.maximum(-g_mean, 0.0), np.abs(g_mean)))
    excess = violation - n_se * g_se - abs_tol
    worst = int(np.argmax(excess))
    name = "stationarity_one_sided" if np.any(flag) else "stationarity"
    checks = [
        CheckResult(
            name,
            float(violation[worst]),
            float(g_se[worst]),
            float(n_se * g_se[worst] + abs_tol),
            bool(np.all(excess <= 0)),
            f"worst t={grid.nodes[worst]:.6g}",
        )
    ]
    notes = []

    for label, v in bumps if bumps is not None else default_bumps(grid):
        v = np.asarray(v, dtype=float)
        try:
            up, down = u_hat.shifted(v, lam), u_hat.shifted(v, -lam)
        except InvalidArgumentError:
            notes.append(f"skipped {label}: perturbation leaves U")
            continue
        J_up = performance_samples(problem.performance, simulate(problem.svie, up, xi, W), up, xi, W)
        J_down = performance_samples(problem.performance, simulate(problem.svie, down, xi, W), down, xi, W)
        fd = (J_up - J_down) / (2.0 * lam)
        rep = (grad @ v) * grid.dt
        diff = mc_estimate(fd - rep)
        checks.append(
            CheckResult(
                f"gradient {label}",
                abs(diff.value),
                diff.se,
                n_se * diff.se + abs_tol,
                abs(diff.value) <= n_se * diff.se + abs_tol,
                f"dJ={fd.mean():.6g} rep={rep.mean():.6g}",
            )
        )
    report = MpReport(grid, checks, notes=notes)
    LOGGER.info("[maxprinciple] stationarity: %d checks, passed=%s", len(checks), report.passed)
    return report


# =============================================================================
# Extensional comparisons
# =============================================================================

def policy_samples(
    problem: ControlProblem,
    xi: Optional[SingularControl],
    W: BrownianEnsemble,
    u: Optional[RegularControl] = None,
) -> np.ndarray:
    X = simulate(problem.svie, u, xi, W)
    return performance_samples(problem.performance, X, u, xi, W)


def compare_policies(
    problem: ControlProblem,
    candidate: SingularControl,
    alternatives: Union[Dict[str, SingularControl], Sequence[Tuple[str, SingularControl]]],
    W: BrownianEnsemble,
    u: Optional[RegularControl] = None,
    n_se: float = 3.0,
) -> pd.DataFrame:
    """
    J(candidate) against each alternative on common random numbers.

    Returns:
        DataFrame with columns policy, J, J_se, diff, diff_se, passed where diff is
        J(candidate) - J(policy) and passed means diff >= -n_se * diff_se
    """
    items = list(alternatives.items()) if isinstance(alternatives, dict) else list(alternatives)
    base = policy_samples(problem, candidate, W, u)
    est = mc_estimate(base)
    rows = [("candidate", est.value, est.se, 0.0, 0.0, True)]
    for name, alt in items:
        samples = policy_samples(problem, alt, W, u)
        J = mc_estimate(samples)
        d = mc_estimate(base - samples)
        rows.append((name, J.value, J.se, d.value, d.se, bool(d.value >= -n_se * d.se - 1e-12)))
    table = pd.DataFrame(rows, columns=["policy", "J", "J_se", "diff", "diff_se", "passed"])
    LOGGER.info("[maxprinciple] tournament: %d alternatives, %d passed", len(items), int(table["passed"][1:].sum()))
    return table


def concavity_probe(
    problem: ControlProblem,
    controls: Sequence[SingularControl],
    W: BrownianEnsemble,
    u: Optional[RegularControl] = None,
    n_se: float = 3.0,
) -> pd.DataFrame:
    """Midpoint test J((a+b)/2) - (J(a)+J(b))/2 >= 0 for every pair; a diagnostic, not a proof."""
    samples = [policy_samples(problem, c, W, u) for c in controls]
    rows = []
    for i, j in combinations(range(len(controls)), 2):
        mid = controls[i].scaled(0.5) + controls[j].scaled(0.5)
        gap = mc_estimate(policy_samples(problem, mid, W, u) - 0.5 * (samples[i] + samples[j]))
        rows.append((i, j, gap.value, gap.se, bool(gap.value >= -n_se * gap.se - 1e-12)))
    return pd.DataFrame(rows, columns=["a", "b", "gap", "gap_se", "concave"])


def two_grid_constant(quantity: Callable[[int], float], N: int, T: float = 1.0) -> float:
    """C in a C * dt tolerance, from |q(N) - q(2N)| = C (dt_N - dt_2N)."""
    if N < 1:
        raise InvalidArgumentError("N must be at least 1")
    coarse, fine = quantity(N), quantity(2 * N)
    return abs(coarse - fine) / (T / N - T / (2 * N))
