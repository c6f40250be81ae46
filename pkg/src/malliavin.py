"""
Pathwise directional (Hida-Malliavin) derivatives and Monte Carlo checks of the
duality formula and the Fubini rearrangements.

A functional is evaluated on Brownian path values B(t_0..t_N); the Cameron-Martin
shift omega + eps*gamma adds Gamma(t_i) = sum_{j<i} gamma(t_j) dt to the path.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from core import BrownianEnsemble, Estimate, InvalidArgumentError, ProcessPath, SingularControl, TimeGrid, mc_estimate
from kernels import TwoTimeKernel
from regression import conditional_expectation

LOGGER = logging.getLogger(__name__)


# =============================================================================
# Path functionals
# =============================================================================

class PathFunctional(ABC):
    """F(omega) for a Brownian path on the grid, with optional analytic derivatives."""

    preset: str = "abstract"

    @abstractmethod
    def evaluate(self, paths: np.ndarray, grid: TimeGrid) -> np.ndarray:
        """paths: (M, N+1) values of B; returns (M,)."""
        pass

    def derivative(self, paths: np.ndarray, grid: TimeGrid) -> Optional[np.ndarray]:
        """D_{t_j} F for j = 0..N-1, shape (M, N); None when unknown."""
        return None

    def conditional_derivative(self, paths: np.ndarray, grid: TimeGrid) -> Optional[np.ndarray]:
        """E[D_{t_j} F | F_{t_j}], shape (M, N); None when unknown."""
        return None


class TerminalValue(PathFunctional):
    """F = B(T)"""

    preset = "terminal_value"

    def evaluate(self, paths, grid):
        return paths[:, -1].copy()

    def derivative(self, paths, grid):
        return np.ones((paths.shape[0], grid.N))

    def conditional_derivative(self, paths, grid):
        return np.ones((paths.shape[0], grid.N))


class TerminalSquare(PathFunctional):
    """F = B(T)^2"""

    preset = "terminal_square"

    def evaluate(self, paths, grid):
        return paths[:, -1] ** 2

    def derivative(self, paths, grid):
        return np.repeat(2.0 * paths[:, -1:], grid.N, axis=1)

    def conditional_derivative(self, paths, grid):
        return 2.0 * paths[:, :-1]


class WienerIntegral(PathFunctional):
    """F = sum_j phi(t_j) dB_j for a deterministic phi"""

    preset = "wiener_integral"

    def __init__(self, phi: Callable = np.cos):
        self.phi = phi

    def _weights(self, grid):
        return np.broadcast_to(np.asarray(self.phi(grid.nodes[:-1]), dtype=float), (grid.N,))

    def evaluate(self, paths, grid):
        return np.diff(paths, axis=1) @ self._weights(grid)

    def derivative(self, paths, grid):
        return np.broadcast_to(self._weights(grid), (paths.shape[0], grid.N)).copy()

    def conditional_derivative(self, paths, grid):
        return self.derivative(paths, grid)


class ExpWienerIntegral(WienerIntegral):
    """F = exp(sum phi dB - 1/2 sum phi^2 dt), a Doleans-Dade exponential"""

    preset = "exp_wiener"

    def _running(self, paths, grid):
        w = self._weights(grid)
        log_m = np.zeros(paths.shape)
        np.cumsum(np.diff(paths, axis=1) * w - 0.5 * w ** 2 * grid.dt, axis=1, out=log_m[:, 1:])
        return np.exp(log_m)

    def evaluate(self, paths, grid):
        return self._running(paths, grid)[:, -1]

    def derivative(self, paths, grid):
        return self._weights(grid)[None, :] * self.evaluate(paths, grid)[:, None]

    def conditional_derivative(self, paths, grid):
        return self._weights(grid)[None, :] * self._running(paths, grid)[:, :-1]


class ConstantFunctional(PathFunctional):
    preset = "constant"

    def __init__(self, c: float = 1.0):
        self.c = float(c)

    def evaluate(self, paths, grid):
        return np.full(paths.shape[0], self.c)

    def derivative(self, paths, grid):
        return np.zeros((paths.shape[0], grid.N))

    def conditional_derivative(self, paths, grid):
        return self.derivative(paths, grid)


class Composite(PathFunctional):
    """F = outer(inner) for a smooth outer function; chain rule gives D F = outer'(inner) D inner"""

    preset = "composite"

    def __init__(self, outer: Callable, outer_prime: Callable, inner: PathFunctional):
        self.outer = outer
        self.outer_prime = outer_prime
        self.inner = inner

    def evaluate(self, paths, grid):
        return self.outer(self.inner.evaluate(paths, grid))

    def derivative(self, paths, grid):
        inner_d = self.inner.derivative(paths, grid)
        if inner_d is None:
            return None
        return self.outer_prime(self.inner.evaluate(paths, grid))[:, None] * inner_d


FUNCTIONAL_PRESETS = {
    "terminal_value": TerminalValue,
    "terminal_square": TerminalSquare,
    "wiener_integral": WienerIntegral,
    "exp_wiener": ExpWienerIntegral,
    "constant": ConstantFunctional,
}


def get_functional(name: str) -> PathFunctional:
    if name not in FUNCTIONAL_PRESETS:
        raise InvalidArgumentError(f"Unsupported path functional preset: {name!r}")
    return FUNCTIONAL_PRESETS[name]()


# =============================================================================
# Directional derivatives
# =============================================================================

def default_epsilon(F: PathFunctional, W: BrownianEnsemble) -> float:
    """1e-4 times the root-mean-square size of F (at least 1)."""
    values = F.evaluate(W.paths, W.grid)
    return 1e-4 * max(1.0, float(np.sqrt(np.mean(values ** 2))))


def _central(F: PathFunctional, paths: np.ndarray, shift: np.ndarray, eps: float, grid: TimeGrid) -> np.ndarray:
    up = F.evaluate(paths + eps * shift, grid)
    down = F.evaluate(paths - eps * shift, grid)
    return (up - down) / (2.0 * eps)


def directional_derivative(
    F: PathFunctional,
    gamma: np.ndarray,
    W: BrownianEnsemble,
    eps: Optional[float] = None,
) -> np.ndarray:
    """Per-path central difference of F along the shift Gamma(t_i) = sum_{j<i} gamma(t_j) dt."""
    grid = W.grid
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (grid.N,))
    eps = default_epsilon(F, W) if eps is None else eps
    if eps <= 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    shift = np.concatenate([[0.0], np.cumsum(gamma) * grid.dt])
    return _central(F, W.paths, shift[None, :], eps, grid)


def hida_derivative_profile(F: PathFunctional, W: BrownianEnsemble, eps: Optional[float] = None) -> np.ndarray:
    """D_{t_j} F per path from directions 1_{[t_j, t_{j+1})} / dt, shape (M, N)."""
    grid = W.grid
    eps = default_epsilon(F, W) if eps is None else eps
    if eps <= 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    paths = W.paths
    profile = np.empty((W.M, grid.N))
    for j in range(grid.N):
        step = (np.arange(grid.N + 1) > j).astype(float)
        profile[:, j] = _central(F, paths, step[None, :], eps, grid)
    return profile


# =============================================================================
# Duality
# =============================================================================

@dataclass(frozen=True)
class Integrand:
    """phi(t_j) per path, shape (M, N); adapted integrands read B only up to t_j."""

    kind: str
    fn: Callable
    adapted: bool = True

    def values(self, paths: np.ndarray, grid: TimeGrid) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.fn(paths, grid), dtype=float), (paths.shape[0], grid.N))


def constant_integrand(c: float = 1.0) -> Integrand:
    return Integrand("constant", lambda paths, grid: np.full(grid.N, float(c)))


def deterministic_integrand(fn: Callable) -> Integrand:
    return Integrand("deterministic", lambda paths, grid: fn(grid.nodes[:-1]))


def brownian_integrand() -> Integrand:
    """phi(t) = B(t)"""
    return Integrand("brownian", lambda paths, grid: paths[:, :-1])


def terminal_integrand() -> Integrand:
    """phi(t) = B(T): anticipating, rejected by the duality check"""
    return Integrand("terminal", lambda paths, grid: np.repeat(paths[:, -1:], grid.N, axis=1), adapted=False)


@dataclass(frozen=True)
class DualityReport:
    name: str
    lhs: Estimate
    rhs: Estimate
    diff: Estimate

    def passed(self, n_se: float = 3.0, atol: float = 1e-10) -> bool:
        return self.diff.within(0.0, n_se, atol)


def conditional_profile(
    F: PathFunctional,
    W: BrownianEnsemble,
    eps: Optional[float] = None,
    degree: int = 3,
) -> np.ndarray:
    """E[D_{t_j} F | F_{t_j}]: analytic when the preset knows it, else regression on B(t_j)."""
    paths = W.paths
    known = F.conditional_derivative(paths, W.grid)
    if known is not None:
        return known
    profile = F.derivative(paths, W.grid)
    if profile is None:
        profile = hida_derivative_profile(F, W, eps)
    cond = np.empty_like(profile)
    for j in range(W.grid.N):
        cond[:, j], _ = conditional_expectation(profile[:, j], paths[:, j : j + 1], degree=degree)
    return cond


def duality_check(
    F: PathFunctional,
    phi: Integrand,
    W: BrownianEnsemble,
    eps: Optional[float] = None,
    degree: int = 3,
) -> DualityReport:
    """E[F sum phi dB] against E[sum E[D_t F | F_t] phi dt], with paired standard errors."""
    if not phi.adapted:
        raise InvalidArgumentError(f"integrand {phi.kind!r} is not adapted")
    grid = W.grid
    paths = W.paths
    phis = phi.values(paths, grid)
    lhs = F.evaluate(paths, grid) * np.sum(phis * W.increments, axis=1)
    rhs = np.sum(conditional_profile(F, W, eps, degree) * phis, axis=1) * grid.dt
    return DualityReport(F.preset, mc_estimate(lhs), mc_estimate(rhs), mc_estimate(lhs - rhs))


def duality_suite(names: Sequence[str], W: BrownianEnsemble, phi: Optional[Integrand] = None) -> pd.DataFrame:
    """Run duality_check for several presets; one row per preset."""
    phi = phi or constant_integrand(1.0)
    rows = []
    for name in names:
        report = duality_check(get_functional(name), phi, W)
        rows.append(
            {
                "test": name,
                "lhs": report.lhs.value,
                "lhs_se": report.lhs.se,
                "rhs": report.rhs.value,
                "rhs_se": report.rhs.se,
                "diff": report.diff.value,
                "diff_se": report.diff.se,
                "passed": report.passed(),
            }
        )
    return pd.DataFrame(rows)


# =============================================================================
# Fubini rearrangements
# =============================================================================

@dataclass(frozen=True)
class FubiniReport:
    residual_dt: float
    residual_dxi: float
    lhs_db: Optional[Estimate] = None
    rhs_db: Optional[Estimate] = None
    diff_db: Optional[Estimate] = None


def fubini_checks(
    p: ProcessPath,
    G: TwoTimeKernel,
    xi: SingularControl,
    W: BrownianEnsemble,
    p_functional: Optional[Callable] = None,
    eps: float = 1e-4,
    degree: int = 3,
) -> FubiniReport:
    """
    Both sides of
        int p(t) int_0^t G(t,s) ds dt        = int int_t^T p(s) G(s,t) ds dt
        int p(t) int_0^t G(t,s) dxi(s) dt    = int int_t^T p(s) G(s,t) ds dxi(t)
    as finite double sums, and, when p is given as a functional of the path,
        E[int p(t) int_0^t G(t,s) dB(s) dt] = E[int int_t^T E[D_t p(s) | F_t] G(s,t) ds dt].
    """
    grid = W.grid
    grid.check_same(p.grid, "process and ensemble")
    grid.check_same(xi.grid, "control and ensemble")
    N, dt = grid.N, grid.dt
    A = np.tril(G.table(grid), k=-1)[:N, :N]  # A[i, j] = G(t_i, t_j), j < i
    P = p.values[:, :N]
    dxi = xi.as_paths(p.M)

    lhs1 = (P @ A.sum(axis=1)) * dt * dt
    rhs1 = (P @ A).sum(axis=1) * dt * dt
    lhs2 = np.sum(P * (dxi @ A.T), axis=1) * dt
    rhs2 = np.sum((P @ A) * dxi, axis=1) * dt
    report = {
        "residual_dt": float(np.max(np.abs(lhs1 - rhs1))),
        "residual_dxi": float(np.max(np.abs(lhs2 - rhs2))),
    }

    if p_functional is not None:
        paths = W.paths
        lhs3 = np.sum(P * (W.increments @ A.T), axis=1) * dt
        inner = np.empty((W.M, N))
        for j in range(N):
            step = (np.arange(N + 1) > j).astype(float)[None, :]
            dp = (p_functional(paths + eps * step) - p_functional(paths - eps * step)) / (2 * eps)
            weights = dp[:, :N] @ A[:, j] * dt
            inner[:, j], _ = conditional_expectation(weights, paths[:, j : j + 1], degree=degree)
        rhs3 = inner.sum(axis=1) * dt
        report.update(lhs_db=mc_estimate(lhs3), rhs_db=mc_estimate(rhs3), diff_db=mc_estimate(lhs3 - rhs3))
    return FubiniReport(**report)
