from dataclasses import dataclass
from logging import getLogger

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh

from core.errors import InputError, NumericalError

logger = getLogger(__name__)

# regularization floors sit at this multiple of the level where the system stops being convex
CONVEXITY_MARGIN = 2.0


def jitter_level(second_moment: NDArray[np.float64], relative: float) -> float:
    """Absolute ridge eps = relative * trace(G) / L added before any factorization."""
    L = second_moment.shape[0]
    scale = float(np.trace(second_moment)) / L if L else 0.0
    # an all-zero feature matrix still needs a strictly positive ridge
    return relative * (scale if scale > 0 else 1.0)


def convexity_level(curvature: NDArray[np.float64], metric: NDArray[np.float64]) -> float:
    """
    Smallest t >= 0 such that curvature + t * metric is positive semidefinite.

    This is minus the lowest generalized eigenvalue of (curvature, metric),
    clipped at zero. `metric` must be positive definite.

    Raises:
        NumericalError: the metric is not positive definite
    """
    curvature = 0.5 * (curvature + curvature.T)
    try:
        lowest = eigh(curvature, metric, eigvals_only=True, subset_by_index=[0, 0])
    except (LinAlgError, ValueError) as exc:
        raise NumericalError(f"penalty metric is not positive definite ({exc}); increase jitter") from exc
    return max(0.0, -float(lowest[0]))


def regularization_floor(
    level: float,
    curvature: NDArray[np.float64],
    second_moment: NDArray[np.float64],
    jitter: float,
    name: str = "lambda",
) -> float:
    """
    max(level, CONVEXITY_MARGIN * t*) where t* is the convexity level of `curvature`
    against G + eps I. With the margin the penalized system keeps half the
    penalty's curvature, so the Cholesky factorization cannot fail.
    """
    metric = second_moment + jitter_level(second_moment, jitter) * np.eye(second_moment.shape[0])
    floor = CONVEXITY_MARGIN * convexity_level(curvature, metric)
    if floor > level:
        logger.debug(f"Raised {name} from {level:.3g} to {floor:.3g} to keep the risk convex")
        return floor
    return level


@dataclass(frozen=True)
class QuadraticProblem:
    """
    The objective f(beta) = constant - linear' beta + beta' quad beta.

    `quad` is stored symmetrized; every estimator in the package reduces its
    penalized empirical risk to this form over the dictionary coefficients.
    """

    quad: NDArray[np.float64]
    linear: NDArray[np.float64]
    constant: float = 0.0

    def __post_init__(self) -> None:
        quad = np.asarray(self.quad, dtype=np.float64)
        linear = np.asarray(self.linear, dtype=np.float64).reshape(-1)
        if quad.ndim != 2 or quad.shape[0] != quad.shape[1] or quad.shape[0] != linear.shape[0]:
            raise InputError(f"incompatible quadratic {quad.shape} and linear term {linear.shape}")
        object.__setattr__(self, "quad", 0.5 * (quad + quad.T))
        object.__setattr__(self, "linear", linear)

    def objective(self, beta: ArrayLike) -> float:
        b = np.asarray(beta, dtype=np.float64)
        return float(self.constant - self.linear @ b + b @ self.quad @ b)

    def gradient(self, beta: ArrayLike) -> NDArray[np.float64]:
        return 2.0 * self.quad @ np.asarray(beta, dtype=np.float64) - self.linear

    def solve(self, remedy: str = "increase the regularization level") -> NDArray[np.float64]:
        """
        Unique minimizer 0.5 * quad^-1 linear.

        Raises:
            NumericalError: the quadratic is not positive definite, so the
                stationary point would be a saddle rather than a minimum.
        """
        try:
            factor = cho_factor(self.quad, lower=True, check_finite=True)
        except (LinAlgError, ValueError) as exc:
            raise NumericalError(f"regularized system is not positive definite ({exc}); {remedy}") from exc
        beta = cho_solve(factor, 0.5 * self.linear)
        if not np.all(np.isfinite(beta)):
            raise NumericalError(f"solution is not finite; {remedy}")
        logger.debug(f"Solved {self.quad.shape[0]}-dimensional quadratic, |grad|={np.linalg.norm(self.gradient(beta)):.2e}")
        return beta
