"""
Two-time Volterra kernels, iterated kernels and the Neumann resolvent.

Kernels are evaluated on the whole square [0, T]^2: the forward equation reads
K(t, s) for s <= t while the adjoint and the resolvent read it for s >= t.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import gammainc, gammaln

from core import InvalidArgumentError, TimeGrid

LOGGER = logging.getLogger(__name__)


class MissingPartialError(InvalidArgumentError):
    """A kernel without an analytic time derivative was asked for one"""


# =============================================================================
# Abstract Base Class
# =============================================================================

class TwoTimeKernel(ABC):
    """Deterministic kernel K(t, s) with a certified bound and an optional dK/dt."""

    preset: str = "abstract"

    @abstractmethod
    def __call__(self, t, s) -> np.ndarray:
        pass

    @abstractmethod
    def bound(self, horizon: float) -> float:
        """C with |K(t, s)| <= C on [0, horizon]^2."""
        pass

    @property
    def has_dt(self) -> bool:
        return False

    @property
    def time_invariant(self) -> bool:
        """True when dK/dt vanishes identically (K depends on s only)."""
        return False

    def dt(self, t, s) -> np.ndarray:
        raise MissingPartialError(f"{self.preset} kernel has no analytic time derivative")

    def diagonal(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self(t, t), t.shape).astype(float)

    def table(self, grid: TimeGrid) -> np.ndarray:
        """Full (N+1, N+1) array of K(t_i, t_j)."""
        nodes = grid.nodes
        return np.broadcast_to(self(nodes[:, None], nodes[None, :]), (grid.N + 1, grid.N + 1)).astype(float)

    def dt_table(self, grid: TimeGrid) -> np.ndarray:
        nodes = grid.nodes
        return np.broadcast_to(self.dt(nodes[:, None], nodes[None, :]), (grid.N + 1, grid.N + 1)).astype(float)

    @property
    def is_zero(self) -> bool:
        return False


# =============================================================================
# Presets
# =============================================================================

class ConstantKernel(TwoTimeKernel):
    preset = "constant"

    def __init__(self, c: float):
        self.c = float(c)

    def __call__(self, t, s):
        return np.full(np.broadcast(np.asarray(t), np.asarray(s)).shape, self.c)

    def bound(self, horizon: float) -> float:
        return abs(self.c)

    @property
    def has_dt(self) -> bool:
        return True

    @property
    def time_invariant(self) -> bool:
        return True

    @property
    def is_zero(self) -> bool:
        return self.c == 0.0

    def dt(self, t, s):
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(s)).shape)

    def __repr__(self):
        return f"ConstantKernel({self.c})"


class ExpDecayKernel(TwoTimeKernel):
    """c * exp(-lam * (t - s))"""

    preset = "exp_decay"

    def __init__(self, c: float, lam: float):
        self.c = float(c)
        self.lam = float(lam)

    def __call__(self, t, s):
        return self.c * np.exp(-self.lam * (np.asarray(t, dtype=float) - np.asarray(s, dtype=float)))

    def bound(self, horizon: float) -> float:
        # |t - s| <= horizon on the square
        return abs(self.c) * float(np.exp(abs(self.lam) * horizon))

    @property
    def has_dt(self) -> bool:
        return True

    @property
    def time_invariant(self) -> bool:
        return self.c == 0.0 or self.lam == 0.0

    @property
    def is_zero(self) -> bool:
        return self.c == 0.0

    def dt(self, t, s):
        return -self.lam * self(t, s)

    def __repr__(self):
        return f"ExpDecayKernel(c={self.c}, lam={self.lam})"


class PolynomialKernel(TwoTimeKernel):
    """sum_k a_k (t - s)^k"""

    preset = "poly"

    def __init__(self, coeffs: Sequence[float]):
        if len(coeffs) == 0:
            raise InvalidArgumentError("polynomial kernel needs at least one coefficient")
        self.coeffs = np.asarray(coeffs, dtype=float)

    def __call__(self, t, s):
        lag = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        return np.polynomial.polynomial.polyval(lag, self.coeffs)

    def bound(self, horizon: float) -> float:
        return float(np.sum(np.abs(self.coeffs) * horizon ** np.arange(len(self.coeffs))))

    @property
    def has_dt(self) -> bool:
        return True

    @property
    def time_invariant(self) -> bool:
        return not np.any(self.coeffs[1:])

    @property
    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def dt(self, t, s):
        lag = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        if len(self.coeffs) == 1:
            return np.zeros(lag.shape)
        return np.polynomial.polynomial.polyval(lag, np.polynomial.polynomial.polyder(self.coeffs))

    def __repr__(self):
        return f"PolynomialKernel({self.coeffs.tolist()})"


class FunctionKernel(TwoTimeKernel):
    """Kernel given by vectorized callables fn(t, s) and, optionally, dfn/dt."""

    preset = "function"

    def __init__(
        self,
        fn: Callable,
        bound: float,
        dt_fn: Optional[Callable] = None,
        time_invariant: bool = False,
    ):
        self.fn = fn
        self._bound = float(bound)
        self.dt_fn = dt_fn
        self._time_invariant = time_invariant

    def __call__(self, t, s):
        t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        return np.asarray(self.fn(t, s), dtype=float)

    def bound(self, horizon: float) -> float:
        return self._bound

    @property
    def has_dt(self) -> bool:
        return self.dt_fn is not None or self._time_invariant

    @property
    def time_invariant(self) -> bool:
        return self._time_invariant

    def dt(self, t, s):
        t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        if self._time_invariant:
            return np.zeros(t.shape)
        if self.dt_fn is None:
            return super().dt(t, s)
        return np.asarray(self.dt_fn(t, s), dtype=float)


class ScaledKernel(TwoTimeKernel):
    """factor * base, used for the signed harvesting term -h."""

    def __init__(self, base: TwoTimeKernel, factor: float):
        self.base = base
        self.factor = float(factor)
        self.preset = f"scaled_{base.preset}"

    def __call__(self, t, s):
        return self.factor * self.base(t, s)

    def bound(self, horizon: float) -> float:
        return abs(self.factor) * self.base.bound(horizon)

    @property
    def has_dt(self) -> bool:
        return self.base.has_dt

    @property
    def time_invariant(self) -> bool:
        return self.base.time_invariant

    @property
    def is_zero(self) -> bool:
        return self.factor == 0.0 or self.base.is_zero

    def dt(self, t, s):
        return self.factor * self.base.dt(t, s)

    def __repr__(self):
        return f"ScaledKernel({self.base!r}, {self.factor})"


class TabulatedKernel(TwoTimeKernel):
    """Kernel known only at grid nodes, with a user-supplied bound."""

    preset = "tabulated"

    def __init__(self, grid: TimeGrid, values: np.ndarray, bound: float, dt_values: Optional[np.ndarray] = None):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.N + 1, grid.N + 1):
            raise InvalidArgumentError(f"tabulated kernel needs shape {(grid.N + 1,) * 2}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("tabulated kernel values must be finite")
        if np.max(np.abs(values)) > bound * (1 + 1e-12):
            raise InvalidArgumentError("tabulated kernel exceeds its declared bound")
        self.grid = grid
        self.values = values
        self.dt_values = None if dt_values is None else np.asarray(dt_values, dtype=float)
        self._bound = float(bound)

    def _index(self, t):
        pos = np.asarray(t, dtype=float) / self.grid.dt
        idx = np.rint(pos).astype(int)
        if np.any(np.abs(pos - idx) > 1e-9) or np.any(idx < 0) or np.any(idx > self.grid.N):
            raise InvalidArgumentError("tabulated kernel evaluated off its grid")
        return idx

    def __call__(self, t, s):
        return self.values[self._index(t), self._index(s)]

    def bound(self, horizon: float) -> float:
        return self._bound

    @property
    def has_dt(self) -> bool:
        return self.dt_values is not None

    def dt(self, t, s):
        if self.dt_values is None:
            return super().dt(t, s)
        return self.dt_values[self._index(t), self._index(s)]

    def table(self, grid: TimeGrid) -> np.ndarray:
        grid.check_same(self.grid, "tabulated kernel and table")
        return self.values.copy()


# =============================================================================
# Factory
# =============================================================================

def get_kernel(spec: Dict) -> TwoTimeKernel:
    """
    Build a kernel from a preset description.

    Args:
        spec: {"kind": "constant" | "exp_decay" | "poly", "params": [...]}

    Returns:
        TwoTimeKernel instance
    """
    kind = spec.get("kind")
    params = list(spec.get("params", []))
    if kind == "constant" and len(params) == 1:
        return ConstantKernel(params[0])
    if kind == "exp_decay" and len(params) == 2:
        return ExpDecayKernel(params[0], params[1])
    if kind == "poly" and len(params) >= 1:
        return PolynomialKernel(params)
    raise InvalidArgumentError(f"Unsupported kernel preset: {kind!r} with {len(params)} parameters")


def check_time_derivative(kernel: TwoTimeKernel, grid: TimeGrid) -> float:
    """Max gap between the analytic dK/dt and a central difference at interior nodes."""
    nodes = grid.nodes[1:-1]
    t, s = np.meshgrid(nodes, grid.nodes, indexing="ij")
    h = grid.dt
    fd = (kernel(t + h, s) - kernel(t - h, s)) / (2 * h)
    return float(np.max(np.abs(kernel.dt(t, s) - fd))) if nodes.size else 0.0


# =============================================================================
# Tables, iterated kernels and the resolvent
# =============================================================================

@dataclass(frozen=True)
class KernelTable:
    """
    Kernel values at grid nodes.

    triangle "lower" keeps entries j <= i (forward orientation); "upper" keeps
    j >= i (iterated kernels b0^n(t, r) with t <= r). Entries outside are zero.
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    triangle: str = "lower"


def tabulate(kernel: TwoTimeKernel, grid: TimeGrid, triangle: str = "lower") -> KernelTable:
    values = kernel.table(grid)
    if triangle == "lower":
        values = np.tril(values)
    elif triangle == "upper":
        values = np.triu(values)
    else:
        raise InvalidArgumentError(f"unknown triangle {triangle!r}")
    return KernelTable(grid, values, triangle)


def _compose(prev: np.ndarray, base: np.ndarray, dt: float) -> np.ndarray:
    # Trapezoid in s over [t_i, t_k] of prev[i, s] * base[s, k]; both upper triangular,
    # so the plain matrix product already restricts s to i..k. Endpoints get half weight.
    full = prev @ base
    first = np.diag(prev)[:, None] * base
    last = prev * np.diag(base)[None, :]
    return np.triu(dt * (full - 0.5 * first - 0.5 * last))


def iterated_kernel(b0: TwoTimeKernel, n: int, grid: TimeGrid) -> KernelTable:
    """b0^n(t, r) = int_t^r b0^{n-1}(t, s) b0(s, r) ds on the upper triangle, b0^1 = b0."""
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"iteration order must be a positive integer, got {n}")
    base = tabulate(b0, grid, "upper").values
    current = base
    for _ in range(int(n) - 1):
        current = _compose(current, base, grid.dt)
    return KernelTable(grid, current, "upper")


def majorant(C: float, T: float, n: int) -> float:
    """Certified bound C^n T^(n-1) / (n-1)! on |b0^n|."""
    if C == 0.0:
        return 0.0
    return float(np.exp(n * np.log(C) + (n - 1) * np.log(T) - gammaln(n)))


def neumann_tail(C: float, T: float, n: int) -> float:
    """sum_{k > n} C^k T^(k-1) / (k-1)!  =  C e^{CT} P(n, CT)."""
    if C == 0.0:
        return 0.0
    return float(C * np.exp(C * T) * gammainc(n, C * T))


@dataclass(frozen=True)
class ResolventTable:
    """Truncated Neumann series Psi = sum_{n <= n_star} b0^n on the upper triangle."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    order: int
    tail_bound: float
    tail_history: List[float] = field(repr=False)
    base: np.ndarray = field(repr=False)


def neumann_psi(b0: TwoTimeKernel, grid: TimeGrid, tol: float = 1e-10, max_order: int = 200) -> ResolventTable:
    """Sum iterated kernels until the certified tail bound drops below tol."""
    if not tol > 0:
        raise InvalidArgumentError(f"tolerance must be positive, got {tol}")
    C = b0.bound(grid.T)
    base = tabulate(b0, grid, "upper").values
    term = base
    total = base.copy()
    n = 1
    history = [neumann_tail(C, grid.T, 1)]
    while history[-1] >= tol and n < max_order:
        term = _compose(term, base, grid.dt)
        total += term
        n += 1
        history.append(neumann_tail(C, grid.T, n))
    if history[-1] >= tol:
        LOGGER.warning("[kernels] Neumann series stopped at order %d with tail %.3e >= %.1e", n, history[-1], tol)
    LOGGER.debug("[kernels] Neumann resolvent: order %d, tail %.3e", n, history[-1])
    return ResolventTable(grid, total, n, history[-1], history, base)


def resolvent_residual(b0: TwoTimeKernel, psi: ResolventTable) -> float:
    """max |Psi(t, r) - b0(t, r) - int_t^r b0(t, s) Psi(s, r) ds| over nodes t <= r."""
    base = tabulate(b0, psi.grid, "upper").values
    if base.shape != psi.values.shape:
        raise InvalidArgumentError("kernel and resolvent live on different grids")
    convolved = _compose(base, psi.values, psi.grid.dt)
    return float(np.max(np.abs(np.triu(psi.values - base - convolved))))


def adjoint_kernel(b_x: TwoTimeKernel, grid: TimeGrid) -> TabulatedKernel:
    """
    Kernel of the integral-form adjoint equation derived from the Hamiltonian:
    kappa(t, r) = b_x(r, r) + int_t^r db_x/dt(r, s) ds for t <= r.

    For kernels of t - s this equals b_x(r, t); for kernels of s alone, b_x(r, r).
    """
    n = grid.N + 1
    diag = b_x.diagonal(grid.nodes)
    if b_x.time_invariant or b_x.is_zero:
        values = np.triu(np.broadcast_to(diag[None, :], (n, n)))
    else:
        deriv = np.tril(b_x.dt_table(grid))  # deriv[k, j] = d_t b_x(t_k, t_j), j <= k
        tail = np.flip(np.cumsum(np.flip(deriv, axis=1), axis=1), axis=1)  # sum_{j=i}^{k} deriv[k, j]
        trap = grid.dt * (tail - 0.5 * deriv - 0.5 * np.diag(deriv)[:, None])
        values = np.triu(diag[None, :] + np.tril(trap).T)
    bound = float(np.max(np.abs(values))) if values.size else 0.0
    return TabulatedKernel(grid, values, bound)
