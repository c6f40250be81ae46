"""
Core containers shared by every module: time grids, Brownian ensembles,
singular and regular controls, process paths, Monte Carlo estimates and the
exception hierarchy.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np

from config import BLOCK_SIZE, WORKERS

LOGGER = logging.getLogger(__name__)


# =============================================================================
# Errors
# =============================================================================

class VolterraError(Exception):
    """Base class for every error raised by the library"""


class InvalidArgumentError(VolterraError, ValueError):
    """A precondition on an argument does not hold"""


class DomainError(VolterraError):
    """A function was evaluated outside its domain (e.g. log of a nonpositive state)"""


class SimulationDivergedError(VolterraError):
    """The forward scheme produced a NaN or an overflow"""

    def __init__(self, message: str, node: int, t: float, path: int):
        super().__init__(message)
        self.node = node
        self.t = t
        self.path = path


class RegressionError(VolterraError):
    """A cross-sectional regression could not be solved"""


class ConvergenceError(VolterraError):
    """An iteration that is required to converge did not"""

    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = list(history)


# =============================================================================
# Time grid
# =============================================================================

@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into N steps."""

    T: float
    N: int

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt

    def index_of(self, t: float) -> int:
        """Node index of t; raises if t is not a grid node."""
        pos = t / self.dt
        idx = int(round(pos))
        if idx < 0 or idx > self.N or abs(pos - idx) > 1e-9:
            raise InvalidArgumentError(f"t={t} is not a node of the grid (T={self.T}, N={self.N})")
        return idx

    def check_same(self, other: "TimeGrid", what: str = "objects"):
        if self != other:
            raise InvalidArgumentError(f"{what} live on different grids: {self} vs {other}")


def make_grid(T: float, N: int) -> TimeGrid:
    """Build a uniform time grid, validating T > 0 and N >= 1."""
    if not np.isfinite(T) or T <= 0:
        raise InvalidArgumentError(f"horizon T must be positive, got {T}")
    if int(N) != N or N < 1:
        raise InvalidArgumentError(f"step count N must be a positive integer, got {N}")
    return TimeGrid(float(T), int(N))


# =============================================================================
# Monte Carlo estimates
# =============================================================================

class Estimate(NamedTuple):
    value: float
    se: float

    def within(self, target: float, n_se: float = 3.0, atol: float = 0.0) -> bool:
        return abs(self.value - target) <= n_se * self.se + atol


def mc_estimate(samples: np.ndarray) -> Estimate:
    """Sample mean and standard error of a 1-d array of per-path values."""
    samples = np.asarray(samples, dtype=float).ravel()
    m = samples.size
    if m == 0:
        raise InvalidArgumentError("cannot estimate from an empty sample")
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return Estimate(mean, se)


def nodewise_estimates(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column mean and standard error of an (M, n) table."""
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    mean = values.mean(axis=0)
    if m > 1:
        se = values.std(axis=0, ddof=1) / np.sqrt(m)
    else:
        se = np.zeros_like(mean)
    return mean, se


# =============================================================================
# Brownian ensembles
# =============================================================================

@dataclass(frozen=True)
class BrownianEnsemble:
    """M Brownian paths sampled as N increments each."""

    grid: TimeGrid
    seed: int
    increments: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.increments.shape[0]

    @property
    def paths(self) -> np.ndarray:
        """Path values B(t_i), shape (M, N+1), with B(0) = 0."""
        out = np.zeros((self.M, self.grid.N + 1))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out


def _block_stream(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def sample_brownian(grid: TimeGrid, M: int, seed: int, workers: Optional[int] = None) -> BrownianEnsemble:
    """
    Draw M independent Brownian paths on the grid.

    Path k is row (k mod BLOCK_SIZE) of block k // BLOCK_SIZE, and every block has its
    own Philox stream keyed by (seed, block), so the result depends only on
    (seed, M, grid) and not on how many workers fill the blocks.
    """
    if int(M) != M or M < 1:
        raise InvalidArgumentError(f"path count M must be a positive integer, got {M}")
    M = int(M)
    workers = WORKERS if workers is None else workers
    increments = np.empty((M, grid.N))
    scale = np.sqrt(grid.dt)
    n_blocks = -(-M // BLOCK_SIZE)

    def fill(block: int):
        lo = block * BLOCK_SIZE
        hi = min(lo + BLOCK_SIZE, M)
        increments[lo:hi] = _block_stream(seed, block).standard_normal((hi - lo, grid.N)) * scale

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(n_blocks)))
    else:
        for block in range(n_blocks):
            fill(block)

    LOGGER.debug("[core] sampled %d paths x %d steps (seed=%d, blocks=%d)", M, grid.N, seed, n_blocks)
    return BrownianEnsemble(grid, int(seed), increments)


# =============================================================================
# Controls
# =============================================================================

@dataclass(frozen=True)
class SingularControl:
    """
    Nondecreasing left-continuous control stored as atoms at nodes t_0..t_{N-1}.

    increments has shape (N,) for a deterministic control or (M, N) per path.
    """

    grid: TimeGrid
    increments: np.ndarray = field(repr=False)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape[-1] != self.grid.N or inc.ndim not in (1, 2):
            raise InvalidArgumentError(
                f"singular control needs shape (N,) or (M, N) with N={self.grid.N}, got {inc.shape}"
            )
        if not np.all(np.isfinite(inc)):
            raise InvalidArgumentError("singular control increments must be finite")
        if np.any(inc < 0):
            raise InvalidArgumentError("singular control increments must be nonnegative")
        object.__setattr__(self, "increments", inc)

    @classmethod
    def zero(cls, grid: TimeGrid) -> "SingularControl":
        return cls(grid, np.zeros(grid.N))

    @classmethod
    def atom(cls, grid: TimeGrid, t: float, size: float) -> "SingularControl":
        inc = np.zeros(grid.N)
        idx = grid.index_of(t)
        if idx >= grid.N:
            raise InvalidArgumentError("atoms live on nodes t_0..t_{N-1}; t = T carries none")
        inc[idx] = size
        return cls(grid, inc)

    @classmethod
    def uniform_rate(cls, grid: TimeGrid, rate: float) -> "SingularControl":
        return cls(grid, np.full(grid.N, rate * grid.dt))

    @property
    def per_path(self) -> bool:
        return self.increments.ndim == 2

    @property
    def is_zero(self) -> bool:
        return not np.any(self.increments)

    def as_paths(self, M: int) -> np.ndarray:
        """Increments broadcast to shape (M, N)."""
        if self.per_path:
            if self.increments.shape[0] != M:
                raise InvalidArgumentError(f"control has {self.increments.shape[0]} paths, expected {M}")
            return self.increments
        return np.broadcast_to(self.increments, (M, self.grid.N))

    def cumulative(self) -> np.ndarray:
        """xi(t_i) for i = 0..N, excluding the atom at t_i; last axis has N+1 entries."""
        shape = self.increments.shape[:-1] + (self.grid.N + 1,)
        out = np.zeros(shape)
        np.cumsum(self.increments, axis=-1, out=out[..., 1:])
        return out

    def total(self) -> np.ndarray:
        return self.increments.sum(axis=-1)

    def scaled(self, factor: float) -> "SingularControl":
        return SingularControl(self.grid, self.increments * factor)

    def __add__(self, other: "SingularControl") -> "SingularControl":
        self.grid.check_same(other.grid, "singular controls")
        return SingularControl(self.grid, self.increments + other.increments)


def cumulate(xi: SingularControl, t: float):
    """xi(t) = sum of atoms strictly before t (per path when xi is per-path)."""
    idx = xi.grid.index_of(t)
    return xi.increments[..., :idx].sum(axis=-1)


@dataclass(frozen=True)
class RegularControl:
    """Control values u_i at nodes t_0..t_{N-1} with values in the closed interval U."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    U: Tuple[float, float] = (-np.inf, np.inf)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[-1] != self.grid.N or vals.ndim not in (1, 2):
            raise InvalidArgumentError(
                f"regular control needs shape (N,) or (M, N) with N={self.grid.N}, got {vals.shape}"
            )
        lo, hi = self.U
        if lo > hi:
            raise InvalidArgumentError(f"control set U=[{lo}, {hi}] is empty")
        if np.any(vals < lo) or np.any(vals > hi):
            raise InvalidArgumentError(f"control values leave U=[{lo}, {hi}]")
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, grid: TimeGrid, value: float, U: Tuple[float, float] = (-np.inf, np.inf)) -> "RegularControl":
        return cls(grid, np.full(grid.N, float(value)), U)

    def as_paths(self, M: int) -> np.ndarray:
        if self.values.ndim == 2:
            if self.values.shape[0] != M:
                raise InvalidArgumentError(f"control has {self.values.shape[0]} paths, expected {M}")
            return self.values
        return np.broadcast_to(self.values, (M, self.grid.N))

    def shifted(self, direction: np.ndarray, lam: float) -> "RegularControl":
        """u + lam * v; raises when the result leaves U."""
        return RegularControl(self.grid, self.values + lam * np.asarray(direction, dtype=float), self.U)

    def on_boundary(self, atol: float = 1e-12) -> np.ndarray:
        """-1 where u sits on the lower bound of U, +1 on the upper bound, 0 inside."""
        lo, hi = self.U
        flag = np.zeros(self.values.shape, dtype=int)
        flag[np.isclose(self.values, lo, atol=atol, rtol=0.0)] = -1
        flag[np.isclose(self.values, hi, atol=atol, rtol=0.0)] = 1
        return flag


# =============================================================================
# Processes
# =============================================================================

@dataclass(frozen=True)
class ProcessPath:
    """Values of a process at every node for every path, shape (M, N+1)."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[1] != self.grid.N + 1:
            raise InvalidArgumentError(f"process needs shape (M, {self.grid.N + 1}), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("process values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def std(self) -> np.ndarray:
        if self.M < 2:
            return np.zeros(self.grid.N + 1)
        return self.values.std(axis=0, ddof=1)

    def terminal(self) -> np.ndarray:
        return self.values[:, -1]
