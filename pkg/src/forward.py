"""
Monte Carlo simulation of the controlled stochastic Volterra equation

    X(t) = phi(t) + int_0^t b(t,s,X,u) ds + int_0^t sigma(t,s,X,u) dB(s) + int_0^t h(t,s) dxi(s)

with a left-point Euler scheme that keeps the full two-time sum at every node,
plus the performance functional and finite-difference derivative processes.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd

from core import (
    BrownianEnsemble,
    DomainError,
    Estimate,
    InvalidArgumentError,
    ProcessPath,
    RegularControl,
    SimulationDivergedError,
    SingularControl,
    TimeGrid,
    mc_estimate,
)
from kernels import ConstantKernel, TwoTimeKernel

LOGGER = logging.getLogger(__name__)


# =============================================================================
# Coefficients
# =============================================================================

@dataclass(frozen=True)
class AffineCoefficient:
    """c(t,s,x,u) = const(t,s) + state(t,s) * x + control(t,s) * u; missing parts are zero."""

    const: Optional[TwoTimeKernel] = None
    state: Optional[TwoTimeKernel] = None
    control: Optional[TwoTimeKernel] = None

    def parts(self):
        return (self.const, self.state, self.control)

    @property
    def vanishes(self) -> bool:
        return all(k is None or k.is_zero for k in self.parts())

    @property
    def time_invariant(self) -> bool:
        return all(k is None or k.time_invariant for k in self.parts())

    def __call__(self, t, s, x, u):
        out = 0.0
        if self.const is not None:
            out = out + self.const(t, s)
        if self.state is not None:
            out = out + self.state(t, s) * x
        if self.control is not None:
            out = out + self.control(t, s) * u
        return out

    def dt(self, t, s, x, u):
        """Derivative in the first time argument."""
        out = 0.0
        if self.const is not None:
            out = out + self.const.dt(t, s)
        if self.state is not None:
            out = out + self.state.dt(t, s) * x
        if self.control is not None:
            out = out + self.control.dt(t, s) * u
        return out


ZERO = AffineCoefficient()


@dataclass(frozen=True)
class SvieSpec:
    """Controlled SVIE; h is signed (harvesting passes -h)."""

    phi: Union[float, Callable] = 1.0
    b: AffineCoefficient = ZERO
    sigma: AffineCoefficient = ZERO
    h: TwoTimeKernel = field(default_factory=lambda: ConstantKernel(0.0))

    def initial_curve(self, nodes: np.ndarray) -> np.ndarray:
        if callable(self.phi):
            return np.broadcast_to(np.asarray(self.phi(nodes), dtype=float), nodes.shape)
        return np.full(nodes.shape, float(self.phi))


# =============================================================================
# Performance presets
# =============================================================================

@dataclass(frozen=True)
class RunningReward:
    """f0(t, x, u) with partials in x and u."""

    kind: str
    fn: Callable
    dx: Callable
    du: Callable


def zero_running() -> RunningReward:
    z = lambda t, x, u: np.zeros(np.broadcast(t, x, u).shape)
    return RunningReward("zero", z, z, z)


def quadratic_control_cost(weight: float = 1.0) -> RunningReward:
    """f0 = -weight * u^2 / 2"""
    return RunningReward(
        "quadratic_control_cost",
        lambda t, x, u: -0.5 * weight * np.square(u) + 0.0 * x,
        lambda t, x, u: np.zeros(np.broadcast(t, x, u).shape),
        lambda t, x, u: -weight * u + 0.0 * x,
    )


@dataclass(frozen=True)
class SingularReward:
    """f1(t, x) with its x-partial; the adjoint weight tag follows from the partial."""

    kind: str
    fn: Callable
    dx: Callable
    adjoint_weight: str
    requires_positive: bool = False


def state_price() -> SingularReward:
    """f1 = x"""
    return SingularReward("state", lambda t, x: x + 0.0 * t, lambda t, x: np.ones_like(x), "unit")


def log_price() -> SingularReward:
    """f1 = log x"""
    return SingularReward("log", lambda t, x: np.log(x) + 0.0 * t, lambda t, x: 1.0 / x, "inverse_state", True)


def deterministic_price(rho: Union[float, Callable]) -> SingularReward:
    """f1 = rho(t), independent of the state"""
    rho_fn = rho if callable(rho) else (lambda t: np.full(np.shape(t), float(rho)))
    return SingularReward(
        "deterministic",
        lambda t, x: np.broadcast_to(rho_fn(t), np.broadcast(t, x).shape),
        lambda t, x: np.zeros(np.broadcast(t, x).shape),
        "zero",
    )


@dataclass(frozen=True)
class TerminalWeight:
    """theta = c0 + c1 * B(T) + c2 * B(T)^2"""

    c0: float = 1.0
    c1: float = 0.0
    c2: float = 0.0

    @property
    def deterministic(self) -> bool:
        return self.c1 == 0.0 and self.c2 == 0.0

    def sample(self, W: BrownianEnsemble) -> np.ndarray:
        BT = W.increments.sum(axis=1)
        return self.c0 + self.c1 * BT + self.c2 * BT ** 2


@dataclass(frozen=True)
class PerformanceSpec:
    """J = E[ sum f0 dt + sum f1 dxi + theta * X(T) ]"""

    running: RunningReward = field(default_factory=zero_running)
    singular: SingularReward = field(default_factory=lambda: deterministic_price(0.0))
    theta: TerminalWeight = field(default_factory=TerminalWeight)


# =============================================================================
# Simulation
# =============================================================================

def _strict_lower(kernel: Optional[TwoTimeKernel], grid: TimeGrid) -> Optional[np.ndarray]:
    """(N+1, N) table K(t_i, t_j) for j < i, zero elsewhere."""
    if kernel is None or kernel.is_zero:
        return None
    return np.tril(kernel.table(grid), k=-1)[:, : grid.N]


def _check_grids(spec_grid: TimeGrid, *objects):
    for obj in objects:
        if obj is not None:
            spec_grid.check_same(obj.grid, type(obj).__name__)


def simulate(
    spec: SvieSpec,
    u: Optional[RegularControl],
    xi: Optional[SingularControl],
    W: BrownianEnsemble,
) -> ProcessPath:
    """
    Left-point Euler scheme. An atom at t_j moves X(t_i) only for i > j.

    Raises:
        SimulationDivergedError: first node where a path becomes NaN or infinite
    """
    grid = W.grid
    _check_grids(grid, u, xi)
    M, N, dt = W.M, grid.N, grid.dt
    dB = W.increments
    U = u.as_paths(M) if u is not None else np.zeros((M, N))
    dxi = xi.as_paths(M) if xi is not None else np.zeros((M, N))

    b0, bx, bu = (_strict_lower(k, grid) for k in spec.b.parts())
    s0, sx, su = (_strict_lower(k, grid) for k in spec.sigma.parts())
    H = _strict_lower(spec.h, grid)

    # state-free contributions in one matrix product each
    X = np.empty((M, N + 1))
    X[:] = spec.initial_curve(grid.nodes)
    with np.errstate(over="ignore", invalid="ignore"):
        if b0 is not None:
            X += (b0.sum(axis=1) * dt)[None, :]
        if bu is not None:
            X += (U @ bu.T) * dt
        if s0 is not None:
            X += dB @ s0.T
        if su is not None:
            X += (U * dB) @ su.T
        if H is not None:
            X += dxi @ H.T

        if bx is not None or sx is not None:
            XdB = np.empty((M, N))
            for i in range(1, N + 1):
                XdB[:, i - 1] = X[:, i - 1] * dB[:, i - 1]
                if bx is not None:
                    X[:, i] += (X[:, :i] @ bx[i, :i]) * dt
                if sx is not None:
                    X[:, i] += XdB[:, :i] @ sx[i, :i]
                _guard(X[:, i], i, grid)

    bad = ~np.isfinite(X)
    if bad.any():
        node = int(np.argmax(bad.any(axis=0)))
        _guard(X[:, node], node, grid)
    return ProcessPath(grid, X)


def _guard(column: np.ndarray, node: int, grid: TimeGrid):
    finite = np.isfinite(column)
    if not finite.all():
        path = int(np.argmin(finite))
        raise SimulationDivergedError(
            f"state diverged at node {node} (t={grid.nodes[node]:.6g}) on path {path}",
            node=node,
            t=float(grid.nodes[node]),
            path=path,
        )


def ensemble_summary(X: ProcessPath, xi: Optional[SingularControl] = None) -> pd.DataFrame:
    """Per-node statistics: t, mean_X, sd_X, mean_xi (cumulative, left limit)."""
    grid = X.grid
    if xi is None:
        mean_xi = np.zeros(grid.N + 1)
    else:
        cum = xi.cumulative()
        mean_xi = cum.mean(axis=0) if cum.ndim == 2 else cum
    return pd.DataFrame({"t": grid.nodes, "mean_X": X.mean(), "sd_X": X.std(), "mean_xi": mean_xi})


# =============================================================================
# Performance functional
# =============================================================================

@dataclass(frozen=True)
class PerformanceEstimate:
    value: float
    se: float
    samples: np.ndarray = field(repr=False)

    @property
    def estimate(self) -> Estimate:
        return Estimate(self.value, self.se)


def performance_samples(
    perf: PerformanceSpec,
    X: ProcessPath,
    u: Optional[RegularControl],
    xi: Optional[SingularControl],
    W: BrownianEnsemble,
) -> np.ndarray:
    """Per-path value of sum f0 dt + sum f1 dxi + theta X(T)."""
    grid = X.grid
    M, N = X.M, grid.N
    t = grid.nodes[:N][None, :]
    Xn = X.values[:, :N]
    U = u.as_paths(M) if u is not None else np.zeros((M, N))
    total = (perf.running.fn(t, Xn, U) * grid.dt).sum(axis=1)
    if xi is not None and not xi.is_zero:
        dxi = xi.as_paths(M)
        charged = dxi > 0
        if perf.singular.requires_positive:
            bad = charged & (Xn <= 0)
            if bad.any():
                path, node = (int(v) for v in np.argwhere(bad)[0])
                raise DomainError(
                    f"{perf.singular.kind} price needs X > 0: X={Xn[path, node]:.6g} on path {path} at node {node}"
                )
        rewards = np.where(charged, perf.singular.fn(t, np.where(charged, Xn, 1.0)), 0.0)
        total = total + (rewards * dxi).sum(axis=1)
    return total + perf.theta.sample(W) * X.terminal()


def evaluate_J(
    perf: PerformanceSpec,
    X: ProcessPath,
    u: Optional[RegularControl],
    xi: Optional[SingularControl],
    W: BrownianEnsemble,
) -> PerformanceEstimate:
    """Monte Carlo estimate of J with its standard error."""
    samples = performance_samples(perf, X, u, xi, W)
    est = mc_estimate(samples)
    return PerformanceEstimate(est.value, est.se, samples)


# =============================================================================
# Derivative processes
# =============================================================================

def derivative_process(
    spec: SvieSpec,
    u: Optional[RegularControl],
    xi: Optional[SingularControl],
    W: BrownianEnsemble,
    v: Optional[np.ndarray] = None,
    zeta: Optional[np.ndarray] = None,
    lam: float = 1e-4,
) -> ProcessPath:
    """
    Difference quotient (X^{u + lam v, xi + lam zeta} - X^{u, xi}) / lam on common
    random numbers. v perturbs the regular control, zeta the singular one.
    """
    if lam <= 0:
        raise InvalidArgumentError(f"lam must be positive, got {lam}")
    grid = W.grid
    base = simulate(spec, u, xi, W)
    u_pert, xi_pert = u, xi
    if v is not None:
        if u is None:
            u = RegularControl.constant(grid, 0.0)
        try:
            u_pert = u.shifted(v, lam)
        except InvalidArgumentError as e:
            raise InvalidArgumentError(f"perturbed regular control is inadmissible: {e}") from e
    if zeta is not None:
        current = xi.increments if xi is not None else np.zeros(grid.N)
        try:
            xi_pert = SingularControl(grid, current + lam * np.asarray(zeta, dtype=float))
        except InvalidArgumentError as e:
            raise InvalidArgumentError(f"perturbed singular control is inadmissible: {e}") from e
    if u_pert is u and xi_pert is xi:
        return ProcessPath(grid, np.zeros_like(base.values))
    bumped = simulate(spec, u_pert, xi_pert, W)
    return ProcessPath(grid, (bumped.values - base.values) / lam)
