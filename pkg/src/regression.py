"""
Cross-sectional least-squares regression (Longstaff-Schwartz style) used for
every conditional expectation E[Y | F_t] in the toolkit.

Features are standardized, constant or duplicated columns are dropped, and the
remaining ones are expanded into all monomials up to the requested degree.
Monomials that are exact combinations of others are pruned before the final solve.
"""
import logging
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import lstsq, qr

from config import COND_WARN
from core import InvalidArgumentError, RegressionError

LOGGER = logging.getLogger(__name__)


@dataclass
class RegressionConfig:
    """
    Attributes:
        degree: total degree of the monomial basis
        cond_warn: condition number above which a warning is logged
        collinearity: |correlation| above which a feature counts as a duplicate
    """

    degree: int = 2
    cond_warn: float = COND_WARN
    collinearity: float = 1.0 - 1e-10

    def __post_init__(self):
        if self.degree < 0:
            raise InvalidArgumentError("regression degree must be nonnegative")


def stack_features(*columns: Optional[np.ndarray]) -> np.ndarray:
    """Stack the non-None (M,) arrays into an (M, k) matrix."""
    present = [np.asarray(c, dtype=float) for c in columns if c is not None]
    if not present:
        raise InvalidArgumentError("no regression features supplied")
    return np.column_stack(present)


class PolynomialRegression:
    """Weighted least squares on a monomial basis of standardized features."""

    def __init__(self, config: Optional[RegressionConfig] = None):
        self.config = config or RegressionConfig()
        self.kept: List[int] = []
        self.center = np.zeros(0)
        self.scale = np.ones(0)
        self.exponents: List[Tuple[int, ...]] = []
        self.dropped: List[Tuple[int, ...]] = []
        self.coef = np.zeros(0)
        self.cond = 1.0

    # -------------------------------------------------------------------------

    def _select(self, features: np.ndarray):
        center = features.mean(axis=0)
        scale = features.std(axis=0)
        kept = []
        for j in range(features.shape[1]):
            if scale[j] <= 1e-12 * (1.0 + abs(center[j])):
                continue
            # k distinct values carry at most degree k - 1
            if np.unique(features[:, j]).size <= self.config.degree:
                LOGGER.debug("[regression] dropping feature %d: too few distinct values for degree %d", j, self.config.degree)
                continue
            z = (features[:, j] - center[j]) / scale[j]
            duplicate = False
            for k in kept:
                zk = (features[:, k] - center[k]) / scale[k]
                if abs(np.mean(z * zk)) > self.config.collinearity:
                    duplicate = True
                    break
            if duplicate:
                LOGGER.debug("[regression] dropping feature %d: collinear with feature %d", j, k)
                continue
            kept.append(j)
        self.kept = kept
        self.dropped = []
        self.center = center[kept]
        self.scale = scale[kept]
        self.exponents = [()]
        for d in range(1, self.config.degree + 1):
            self.exponents.extend(combinations_with_replacement(range(len(kept)), d))

    def design(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        z = (features[:, self.kept] - self.center) / self.scale
        cols = [np.prod(z[:, list(e)], axis=1) if e else np.ones(z.shape[0]) for e in self.exponents]
        return np.column_stack(cols)

    def fit(self, features: np.ndarray, target: np.ndarray, weights: Optional[np.ndarray] = None) -> "PolynomialRegression":
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        target = np.asarray(target, dtype=float)
        if features.shape[0] != target.shape[0]:
            raise InvalidArgumentError("features and target have different path counts")
        self._select(features)
        X = self.design(features)
        if X.shape[0] < X.shape[1]:
            raise RegressionError(
                f"singular regression design: {X.shape[0]} paths for {X.shape[1]} basis columns "
                f"({len(self.kept)} features, degree {self.config.degree})"
            )
        y = target
        if weights is not None:
            root = np.sqrt(np.asarray(weights, dtype=float))
            X = X * root[:, None]
            y = y * root
        coef, rank, sv = self._solve(X, y)
        if rank < X.shape[1]:
            # monomials of dependent features (B and |B|, say) are exact combinations of others
            _, pivots = qr(X, mode="r", pivoting=True)
            independent = np.sort(pivots[:rank])
            self.dropped = [self.exponents[j] for j in np.sort(pivots[rank:])]
            LOGGER.warning(
                "[regression] rank %d < %d columns; dropping dependent monomials %s",
                rank, X.shape[1], self.dropped,
            )
            coef = np.zeros(X.shape[1])
            coef[independent], _, sv = self._solve(X[:, independent], y)
        self.cond = float(sv[0] / sv[-1]) if sv.size and sv[-1] > 0 else 1.0
        if self.cond > self.config.cond_warn:
            LOGGER.warning("[regression] ill-conditioned design: condition number %.3e", self.cond)
        self.coef = coef
        return self

    @staticmethod
    def _solve(X: np.ndarray, y: np.ndarray):
        try:
            coef, _, rank, sv = lstsq(X, y, lapack_driver="gelsd")
        except (np.linalg.LinAlgError, ValueError) as e:
            raise RegressionError(f"least-squares solve failed: {e}") from e
        return coef, rank, sv

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.design(features) @ self.coef


class RatioRegression:
    """E_Q[Y | F] = E[K Y | F] / E[K | F] from two regressions."""

    def __init__(self, config: Optional[RegressionConfig] = None):
        self.numerator = PolynomialRegression(config)
        self.denominator = PolynomialRegression(config)

    def fit(self, features, target, weights) -> "RatioRegression":
        self.numerator.fit(features, np.asarray(weights) * np.asarray(target))
        self.denominator.fit(features, weights)
        return self

    def predict(self, features) -> np.ndarray:
        return self.numerator.predict(features) / self.denominator.predict(features)


def conditional_expectation(
    target: np.ndarray,
    features: Optional[np.ndarray],
    weights: Optional[np.ndarray] = None,
    degree: int = 2,
    ratio: bool = False,
):
    """
    Regression estimate of E[target | features], evaluated on the sample.

    Args:
        target: (M,) values
        features: (M, k) matrix, or None for a plain (weighted) mean
        weights: optional Girsanov weights K(T); the estimate is then under Q
        degree: total degree of the basis
        ratio: estimate E_Q as a ratio of two regressions instead of a weighted fit

    Returns:
        (fitted values, fitted model)
    """
    target = np.asarray(target, dtype=float)
    if features is None:
        features = np.zeros((target.shape[0], 1))
    config = RegressionConfig(degree=degree)
    if ratio and weights is not None:
        model = RatioRegression(config).fit(features, target, weights)
        denom = model.denominator.predict(features)
        if np.all(denom > 0):
            return model.numerator.predict(features) / denom, model
        LOGGER.warning("[regression] nonpositive density regression; falling back to a weighted fit")
    model = PolynomialRegression(config).fit(features, target, weights)
    return model.predict(features), model
