"""
Solvers for the linear adjoint BSVIE with singular drift

    p(t) = theta + int_t^T {b0(t,s) p(s) + sigma0(s) q(t,s)} ds + int_t^T w(s) dxi(s) - int_t^T q(t,s) dB(s)

After the Girsanov change of measure dQ = K(T) dP the q-terms drop out and
p(t) = E_Q[theta + int b0 p ds + int w dxi | F_t]. Two independent solvers are
provided: the Neumann-resolvent closed form and a backward regression sweep.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from core import (
    BrownianEnsemble,
    DomainError,
    InvalidArgumentError,
    ProcessPath,
    SingularControl,
    TimeGrid,
    nodewise_estimates,
)
from forward import TerminalWeight
from kernels import ConstantKernel, ResolventTable, TwoTimeKernel, tabulate
from regression import conditional_expectation, stack_features

LOGGER = logging.getLogger(__name__)

WEIGHT_PRESETS = ("zero", "unit", "inverse_state")


@dataclass(frozen=True)
class BsvieSpec:
    """
    Attributes:
        b0: kernel b0(t, s), read for s >= t
        sigma0: kernel whose diagonal sigma0(s, s) is the Girsanov drift sigma0(s)
        weight: singular drift weight preset: zero | unit | inverse_state (1 / X)
        xi: singular control driving the dxi term
        theta: terminal datum
    """

    b0: TwoTimeKernel = field(default_factory=lambda: ConstantKernel(0.0))
    sigma0: TwoTimeKernel = field(default_factory=lambda: ConstantKernel(0.0))
    weight: str = "zero"
    xi: Optional[SingularControl] = None
    theta: TerminalWeight = field(default_factory=TerminalWeight)

    def __post_init__(self):
        if self.weight not in WEIGHT_PRESETS:
            raise InvalidArgumentError(f"Unsupported singular weight preset: {self.weight!r}")

    def weight_values(self, M: int, grid: TimeGrid, X: Optional[ProcessPath]) -> np.ndarray:
        """w(t_j) per path, shape (M, N)."""
        if self.weight == "zero":
            return np.zeros((M, grid.N))
        if self.weight == "unit":
            return np.ones((M, grid.N))
        if X is None:
            raise InvalidArgumentError("the 1/X singular weight needs the state process X")
        states = X.values[:, : grid.N]
        if np.any(states <= 0):
            path, node = (int(v) for v in np.argwhere(states <= 0)[0])
            raise DomainError(f"1/X weight needs X > 0: X={states[path, node]:.6g} on path {path} at node {node}")
        return 1.0 / states


@dataclass
class AdjointSolution:
    """p(t_i) per path plus diagnostics; fits[i] is the regression used at node i."""

    grid: TimeGrid
    p: np.ndarray = field(repr=False)
    method: str
    q_diag: Optional[np.ndarray] = field(default=None, repr=False)
    diagnostics: Dict = field(default_factory=dict)
    fits: List = field(default_factory=list, repr=False)
    features: Optional[List[np.ndarray]] = field(default=None, repr=False)

    @property
    def process(self) -> ProcessPath:
        return ProcessPath(self.grid, self.p)

    def summary(self) -> pd.DataFrame:
        """t, mean_p, sd_p, mean_q_diag"""
        mean_p = self.p.mean(axis=0)
        sd_p = self.p.std(axis=0, ddof=1) if self.p.shape[0] > 1 else np.zeros(self.grid.N + 1)
        mean_q = np.full(self.grid.N + 1, np.nan)
        if self.q_diag is not None:
            mean_q[: self.grid.N] = self.q_diag.mean(axis=0)
        return pd.DataFrame({"t": self.grid.nodes, "mean_p": mean_p, "sd_p": sd_p, "mean_q_diag": mean_q})


# =============================================================================
# Girsanov weight
# =============================================================================

def girsanov_weight(sigma0: TwoTimeKernel, W: BrownianEnsemble) -> np.ndarray:
    """K(T) = exp(sum sigma0(t_j) dB_j - 1/2 sum sigma0(t_j)^2 dt) per path."""
    s = sigma0.diagonal(W.grid.nodes[:-1])
    if not np.any(s):
        return np.ones(W.M)
    return np.exp(W.increments @ s - 0.5 * np.sum(s ** 2) * W.grid.dt)


def girsanov_density(sigma0: TwoTimeKernel, W: BrownianEnsemble) -> np.ndarray:
    """Density process K(t_i), shape (M, N+1)."""
    s = sigma0.diagonal(W.grid.nodes[:-1])
    log_k = np.zeros((W.M, W.grid.N + 1))
    np.cumsum(W.increments * s - 0.5 * s ** 2 * W.grid.dt, axis=1, out=log_k[:, 1:])
    return np.exp(log_k)


# =============================================================================
# Shared helpers
# =============================================================================

def node_features(
    W: BrownianEnsemble,
    X: Optional[ProcessPath] = None,
    xi: Optional[SingularControl] = None,
    use: tuple = ("B", "X", "xi"),
) -> List[np.ndarray]:
    """Regression features of the path up to t_i, one (M, k) matrix per node."""
    B = W.paths
    cum = None
    if xi is not None and "xi" in use and xi.per_path:
        cum = xi.cumulative()
    out = []
    for i in range(W.grid.N + 1):
        out.append(
            stack_features(
                B[:, i] if "B" in use else np.zeros(W.M),
                X.values[:, i] if X is not None and "X" in use else None,
                cum[:, i] if cum is not None else None,
            )
        )
    return out


def _singular_tail(spec: BsvieSpec, M: int, grid: TimeGrid, X: Optional[ProcessPath]) -> np.ndarray:
    """S_k = sum_{j >= k} w(t_j) dxi_j for k = 0..N (S_N = 0), shape (M, N+1)."""
    tail = np.zeros((M, grid.N + 1))
    if spec.xi is None or spec.xi.is_zero or spec.weight == "zero":
        return tail
    spec.xi.grid.check_same(grid, "singular control and ensemble")
    terms = spec.weight_values(M, grid, X) * spec.xi.as_paths(M)
    tail[:, : grid.N] = np.flip(np.cumsum(np.flip(terms, axis=1), axis=1), axis=1)
    return tail


def trapezoid_tail(table: np.ndarray, values: np.ndarray, dt: float) -> np.ndarray:
    """out[:, i] = trapezoid over k = i..N of table[i, k] * values[:, k]."""
    weighted = values @ np.triu(table).T  # sum_{k >= i} table[i, k] values[:, k]
    first = np.diag(table)[None, :] * values
    last = table[:, -1][None, :] * values[:, -1:]
    out = dt * (weighted - 0.5 * first - 0.5 * last)
    out[:, -1] = 0.0
    return out


# =============================================================================
# Closed form
# =============================================================================

def solve_closed_form(
    spec: BsvieSpec,
    psi: Optional[ResolventTable],
    W: BrownianEnsemble,
    X: Optional[ProcessPath] = None,
    degree: int = 2,
) -> AdjointSolution:
    """
    p(t_i) = E_Q[theta (1 + int_{t_i}^T Psi(t_i,s) ds) + int_{t_i}^T Psi(t_i,s) S(s) ds + S(t_i) | F_{t_i}]
    with S(s) = int_s^T w dxi, each E_Q a ratio of K(T)-weighted regressions.
    """
    grid = W.grid
    if psi is None:
        raise InvalidArgumentError("the closed form needs a resolvent table built from spec.b0")
    psi.grid.check_same(grid, "resolvent and ensemble")
    if not np.allclose(psi.base, tabulate(spec.b0, grid, "upper").values, rtol=0, atol=1e-14):
        raise InvalidArgumentError("the resolvent table was not built from spec.b0")
    if X is not None:
        grid.check_same(X.grid, "state and ensemble")

    M, N = W.M, grid.N
    theta = spec.theta.sample(W)
    K = girsanov_weight(spec.sigma0, W)
    S = _singular_tail(spec, M, grid, X)
    ones = np.ones((1, N + 1))
    resolvent_mass = trapezoid_tail(psi.values, ones, grid.dt)[0]  # int_{t_i}^T Psi(t_i, s) ds
    targets = theta[:, None] * (1.0 + resolvent_mass[None, :]) + trapezoid_tail(psi.values, S, grid.dt) + S

    features = node_features(W, X, spec.xi)
    weights = K if np.any(K != 1.0) else None
    p = np.empty((M, N + 1))
    fits = [None] * (N + 1)
    p[:, N] = theta
    for i in range(N):
        p[:, i], fits[i] = conditional_expectation(targets[:, i], features[i], weights, degree=degree, ratio=True)
    LOGGER.info("[adjoint] closed form: resolvent order %d, p(0) mean %.6g", psi.order, p[:, 0].mean())
    return AdjointSolution(
        grid,
        p,
        "closed_form",
        diagnostics={"truncation_order": psi.order, "tail_bound": psi.tail_bound, "degree": degree},
        fits=fits,
        features=features,
    )


# =============================================================================
# Backward regression
# =============================================================================

def solve_regression(
    spec: BsvieSpec,
    W: BrownianEnsemble,
    X: Optional[ProcessPath] = None,
    degree: int = 2,
    use: tuple = ("B", "X", "xi"),
) -> AdjointSolution:
    """
    Backward sweep p(t_i) = E_Q[theta + int_{t_i}^T b0(t_i,s) p(s) ds + sum_{j>=i} w dxi_j | F_{t_i}]
    with K(T)-weighted least squares on polynomial features of (B, X, xi) at t_i.

    The ds-integral is a trapezoid; its p(t_i) end is F_{t_i}-measurable and moves to the left,
    p(t_i) (1 - b0(t_i,t_i) dt / 2) = E_Q[rest | F_{t_i}].
    """
    grid = W.grid
    if X is not None:
        grid.check_same(X.grid, "state and ensemble")
    M, N, dt = W.M, grid.N, grid.dt
    theta = spec.theta.sample(W)
    K = girsanov_weight(spec.sigma0, W)
    weights = K if np.any(K != 1.0) else None
    S = _singular_tail(spec, M, grid, X)
    table = spec.b0.table(grid)
    implicit = 1.0 - 0.5 * dt * np.diag(table)
    if np.any(implicit <= 0):
        raise InvalidArgumentError(f"grid too coarse for the trapezoid sweep: need dt * b0(t,t) < 2, dt = {dt:.3g}")
    quad = np.full(N + 1, dt)
    quad[N] = 0.5 * dt
    features = node_features(W, X, spec.xi, use)

    p = np.empty((M, N + 1))
    p[:, N] = theta
    fits = [None] * (N + 1)
    conds = []
    for i in range(N - 1, -1, -1):
        target = (theta + p[:, i + 1 :] @ (table[i, i + 1 :] * quad[i + 1 :]) + S[:, i]) / implicit[i]
        p[:, i], fits[i] = conditional_expectation(target, features[i], weights, degree=degree)
        conds.append(fits[i].cond)
    LOGGER.info("[adjoint] regression sweep: degree %d, max condition %.3e", degree, max(conds) if conds else 1.0)
    return AdjointSolution(
        grid,
        p,
        "regression",
        diagnostics={"degree": degree, "max_condition": max(conds) if conds else 1.0},
        fits=fits,
        features=features,
    )


def estimate_q_diagonal(solution: AdjointSolution, W: BrownianEnsemble, degree: int = 2) -> np.ndarray:
    """
    Experimental estimate of q(t_i, t_i) from
    E[(p(t_{i+1}) - E[p(t_{i+1}) | F_{t_i}]) dB_i / dt | F_{t_i}], shape (M, N).
    """
    grid = W.grid
    grid.check_same(solution.grid, "adjoint solution and ensemble")
    features = solution.features or node_features(W)
    dB = W.increments
    q = np.empty((W.M, grid.N))
    for i in range(grid.N):
        nxt = solution.p[:, i + 1]
        mean_next, _ = conditional_expectation(nxt, features[i], degree=degree)
        q[:, i], _ = conditional_expectation((nxt - mean_next) * dB[:, i] / grid.dt, features[i], degree=degree)
    solution.q_diag = q
    solution.diagnostics["q_diag"] = "experimental"
    return q


def martingale_increments(solution: AdjointSolution, sigma0: TwoTimeKernel, W: BrownianEnsemble):
    """K(T)-weighted mean and standard error of p(t_{i+1}) - p(t_i) per step."""
    K = girsanov_weight(sigma0, W)
    return nodewise_estimates(K[:, None] * np.diff(solution.p, axis=1))
