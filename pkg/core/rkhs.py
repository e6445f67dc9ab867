"""
Gaussian-kernel RKHS primitives.

Hypotheses are finite Nystrom expansions h(s) = sum_j beta_j k(s, c_j) over a
dictionary of centers drawn from the observed short-term outcomes, so every
risk in the estimators becomes a quadratic in the coefficient vector.
"""

from dataclasses import dataclass, field
from logging import getLogger
from typing import FrozenSet, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist

from core.errors import InputError
from core.rng import stream

logger = getLogger(__name__)


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel k(s, t) = exp(-|s - t|^2 / (2 nu^2)) on R^d."""

    bandwidth: float
    dimension: int = 1

    def __post_init__(self) -> None:
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise InputError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.dimension < 1:
            raise InputError(f"dimension must be a positive integer, got {self.dimension}")


def as_points(points: ArrayLike, dimension: int) -> NDArray[np.float64]:
    """Coerces `points` to an (m, d) float array, accepting a flat vector when d == 1."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dimension == 1 else arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dimension:
        raise InputError(f"expected points of dimension {dimension}, got array of shape {np.shape(points)}")
    return arr


def gram(points_a: ArrayLike, points_b: ArrayLike, spec: KernelSpec) -> NDArray[np.float64]:
    """
    Kernel matrix between two point sets.

    Args:
        points_a: m points of dimension spec.dimension
        points_b: p points of dimension spec.dimension
        spec: kernel bandwidth and dimension

    Returns:
        (m, p) matrix with entries exp(-|a_i - b_j|^2 / (2 nu^2))
    """
    a = as_points(points_a, spec.dimension)
    b = as_points(points_b, spec.dimension)
    sq = cdist(a, b, metric="sqeuclidean")
    return np.exp(-sq / (2.0 * spec.bandwidth**2))


@dataclass(frozen=True)
class RkhsFunction:
    """
    A hypothesis h(s) = sum_j beta_j k(s, c_j).

    `provenance` records the historical folds the function was trained on;
    the one-step estimator refuses nuisances that saw its evaluation folds.
    """

    spec: KernelSpec
    centers: NDArray[np.float64]
    coefficients: NDArray[np.float64]
    provenance: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        centers = as_points(self.centers, self.spec.dimension).copy()
        coefficients = np.asarray(self.coefficients, dtype=np.float64).reshape(-1).copy()
        if coefficients.shape[0] != centers.shape[0]:
            raise InputError(f"{coefficients.shape[0]} coefficients for {centers.shape[0]} centers")
        if not np.all(np.isfinite(coefficients)):
            raise InputError("coefficients must be finite")
        centers.setflags(write=False)
        coefficients.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "provenance", frozenset(self.provenance))

    @property
    def size(self) -> int:
        return int(self.coefficients.shape[0])

    def features(self, points: ArrayLike) -> NDArray[np.float64]:
        return gram(points, self.centers, self.spec)

    def __call__(self, points: ArrayLike) -> NDArray[np.float64]:
        return evaluate(self, points)

    def with_coefficients(self, coefficients: ArrayLike, provenance: Optional[FrozenSet[int]] = None) -> "RkhsFunction":
        """Same dictionary, new coefficients."""
        return RkhsFunction(
            spec=self.spec,
            centers=self.centers,
            coefficients=np.asarray(coefficients, dtype=np.float64),
            provenance=self.provenance if provenance is None else provenance,
        )


def evaluate(h: RkhsFunction, points: ArrayLike) -> NDArray[np.float64]:
    """Evaluates h at every point; entry i is sum_j beta_j k(p_i, c_j)."""
    return gram(points, h.centers, h.spec) @ h.coefficients


def zero_function(spec: KernelSpec, centers: ArrayLike) -> RkhsFunction:
    centers_arr = as_points(centers, spec.dimension)
    return RkhsFunction(spec=spec, centers=centers_arr, coefficients=np.zeros(centers_arr.shape[0]))


def choose_centers(pooled_S: ArrayLike, L: int, seed: int, dimension: Optional[int] = None) -> NDArray[np.float64]:
    """
    Nystrom dictionary: L points subsampled without replacement from the pool.

    Args:
        pooled_S: candidate points (historical and novel short-term outcomes)
        L: dictionary size
        seed: non-negative seed, the same seed always returns the same centers
        dimension: point dimension, inferred from the pool when omitted

    Returns:
        (L, d) array of centers
    """
    pool = np.asarray(pooled_S, dtype=np.float64)
    pool = as_points(pool, dimension if dimension is not None else (1 if pool.ndim <= 1 else pool.shape[1]))
    if L < 1:
        raise InputError(f"dictionary size must be positive, got {L}")
    if L > pool.shape[0]:
        raise InputError(f"cannot choose {L} centers from {pool.shape[0]} points")
    idx = stream(seed).choice(pool.shape[0], size=L, replace=False)
    logger.debug(f"Chose {L} centers from a pool of {pool.shape[0]} points")
    return pool[idx].copy()
