"""
Primary-nuisance risks and estimators.

Given dictionary features phi(s) in R^L, write m_{v,a} and phibar_{v,a} for the
fold-v, arm-a means of Y and phi(S). The plug-in (minimum-distance) risk is

    (1/2K) sum_a (m_a - phibar_a' beta)^2

and the npJIVE cross-fold risk replaces the square by the product of the two
fold means, which removes the own-observation term that makes the plug-in
risk inconsistent when n stays bounded:

    (1/2K) sum_a (m_{0,a} - phibar_{0,a}' beta)(m_{1,a} - phibar_{1,a}' beta)

Both are penalized by lambda * ||h||_{2,N}^2 over the rows the fit sees and
minimized in closed form.
"""

from dataclasses import dataclass
from logging import getLogger
from typing import FrozenSet, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from core.quadratic import QuadraticProblem, jitter_level, regularization_floor
from core.rkhs import KernelSpec, RkhsFunction, as_points, choose_centers, gram
from estimators.config import FitConfig
from sampling.datasets import HistoricalDataset, NovelDataset, cell_means

logger = getLogger(__name__)

# provenance tag for fits that used every row of an unfolded dataset
ALL_ROWS = -1

FoldPair = Tuple[int, int]


@dataclass(frozen=True)
class ArmMoments:
    """Per-arm, per-fold means of the outcome and of the dictionary features."""

    residual_means: NDArray[np.float64]  # (2, K)
    feature_means: NDArray[np.float64]  # (2, K, L)


def training_mask(D: HistoricalDataset, folds: Optional[Tuple[int, ...]]) -> NDArray[np.bool_]:
    if folds is None:
        return np.ones(D.N, dtype=bool)
    return D.require_folds(folds)


def provenance_of(D: HistoricalDataset, folds: Optional[Tuple[int, ...]]) -> FrozenSet[int]:
    if folds is not None:
        return frozenset(folds)
    if D.num_folds:
        return frozenset(range(D.num_folds))
    return frozenset({ALL_ROWS})


def dictionary(
    D: HistoricalDataset,
    cfg: FitConfig,
    novel: Optional[NovelDataset] = None,
    folds: Optional[Tuple[int, ...]] = None,
) -> NDArray[np.float64]:
    """Nystrom centers drawn from the training rows of D pooled with the novel arm."""
    pool = D.S[training_mask(D, folds)]
    if novel is not None:
        pool = np.vstack([pool, novel.S_new])
    return choose_centers(pool, cfg.L, cfg.seed, dimension=D.d)


def _features(D: HistoricalDataset, spec: KernelSpec, centers: NDArray[np.float64]) -> NDArray[np.float64]:
    return gram(D.S, centers, spec)


def _second_moment(Phi: NDArray[np.float64]) -> NDArray[np.float64]:
    return Phi.T @ Phi / Phi.shape[0]


def _penalty(G: NDArray[np.float64], lam: float, jitter: float) -> NDArray[np.float64]:
    return lam * G + jitter_level(G, jitter) * np.eye(G.shape[0])


def cross_fold_level(
    level: float, curvature: NDArray[np.float64], G: NDArray[np.float64], cfg: FitConfig, name: str = "lambda"
) -> float:
    """Penalty level of a cross-fold fit: `level`, raised to the convexity floor when cfg.adaptive_lambda is set."""
    if not cfg.adaptive_lambda:
        return level
    return regularization_floor(level, curvature, G, cfg.jitter, name)


def arm_moments(
    D: HistoricalDataset, spec: KernelSpec, centers: NDArray[np.float64], folds: FoldPair = (0, 1)
) -> ArmMoments:
    Phi = _features(D, spec, centers)
    m = np.stack([cell_means(D.Y, D, folds[0]), cell_means(D.Y, D, folds[1])])
    phibar = np.stack([cell_means(Phi, D, folds[0]), cell_means(Phi, D, folds[1])])
    return ArmMoments(residual_means=m, feature_means=phibar)


def plug_in_risk(h: RkhsFunction, D: HistoricalDataset, folds: Optional[Tuple[int, ...]] = None) -> float:
    """(1/2K) sum_a ([T_K (Y - h)](a))^2 over the rows in `folds` (all rows when None)."""
    residual = D.Y - h(D.S)
    means = cell_means(residual, D, folds)
    return float(np.sum(means**2) / (2 * D.K))


def crossfold_risk(h: RkhsFunction, D: HistoricalDataset, folds: FoldPair = (0, 1)) -> float:
    """(1/2K) sum_a [T_{K,0}(Y - h)](a) [T_{K,1}(Y - h)](a); may be negative."""
    residual = D.Y - h(D.S)
    m0 = cell_means(residual, D, folds[0])
    m1 = cell_means(residual, D, folds[1])
    return float(np.sum(m0 * m1) / (2 * D.K))


def plugin_problem(
    D: HistoricalDataset, cfg: FitConfig, centers: NDArray[np.float64], folds: Optional[Tuple[int, ...]] = None
) -> QuadraticProblem:
    spec = KernelSpec(bandwidth=cfg.bandwidth, dimension=D.d)
    mask = training_mask(D, folds)
    Phi = _features(D, spec, centers)
    m = cell_means(D.Y, D, folds)
    phibar = cell_means(Phi, D, folds)
    K = D.K
    return QuadraticProblem(
        quad=phibar.T @ phibar / (2 * K) + _penalty(_second_moment(Phi[mask]), cfg.lambda_, cfg.jitter),
        linear=phibar.T @ m / K,
        constant=float(m @ m / (2 * K)),
    )


def npjive_problem(
    D: HistoricalDataset, cfg: FitConfig, centers: NDArray[np.float64], folds: FoldPair = (0, 1)
) -> QuadraticProblem:
    spec = KernelSpec(bandwidth=cfg.bandwidth, dimension=D.d)
    mask = training_mask(D, folds)
    moments = arm_moments(D, spec, centers, folds)
    (m0, m1), (f0, f1) = moments.residual_means, moments.feature_means
    K = D.K
    cross = f0.T @ f1
    curvature = (cross + cross.T) / (4 * K)
    G = _second_moment(_features(D, spec, centers)[mask])
    lam = cross_fold_level(cfg.lambda_, curvature, G, cfg)
    return QuadraticProblem(
        quad=curvature + _penalty(G, lam, cfg.jitter),
        linear=(f1.T @ m0 + f0.T @ m1) / (2 * K),
        constant=float(m0 @ m1 / (2 * K)),
    )


def pooled_regression_problem(
    D: HistoricalDataset, cfg: FitConfig, centers: NDArray[np.float64], folds: Optional[Tuple[int, ...]] = None
) -> QuadraticProblem:
    spec = KernelSpec(bandwidth=cfg.bandwidth, dimension=D.d)
    mask = training_mask(D, folds)
    Phi = _features(D, spec, centers)[mask]
    Y = D.Y[mask]
    G = _second_moment(Phi)
    return QuadraticProblem(
        quad=G + _penalty(G, cfg.lambda_, cfg.jitter),
        linear=2.0 * Phi.T @ Y / Phi.shape[0],
        constant=float(Y @ Y / Y.shape[0]),
    )


def _fit(problem: QuadraticProblem, spec: KernelSpec, centers: NDArray[np.float64], provenance: FrozenSet[int], remedy: str) -> RkhsFunction:
    beta = problem.solve(remedy=remedy)
    return RkhsFunction(spec=spec, centers=centers, coefficients=beta, provenance=provenance)


def fit_plugin(
    D: HistoricalDataset,
    cfg: FitConfig,
    novel: Optional[NovelDataset] = None,
    folds: Optional[Tuple[int, ...]] = None,
    centers: Optional[NDArray[np.float64]] = None,
) -> RkhsFunction:
    """
    Minimum-distance fit: minimizes the plug-in risk plus lambda * ||h||_{2,N}^2.

    Args:
        D: historical data
        cfg: regularization and dictionary settings
        novel: novel-arm data pooled into the center selection
        folds: folds to train on, None for every row
        centers: explicit dictionary, overrides center selection

    Returns:
        the fitted function, tagged with the folds it saw
    """
    spec = KernelSpec(bandwidth=cfg.bandwidth, dimension=D.d)
    centers = dictionary(D, cfg, novel, folds) if centers is None else as_points(centers, D.d)
    problem = plugin_problem(D, cfg, centers, folds)
    return _fit(problem, spec, centers, provenance_of(D, folds), "increase lambda")


def fit_npjive(
    D: HistoricalDataset,
    cfg: FitConfig,
    novel: Optional[NovelDataset] = None,
    folds: FoldPair = (0, 1),
    centers: Optional[NDArray[np.float64]] = None,
) -> RkhsFunction:
    """
    npJIVE: minimizes the split-IV cross-fold risk plus lambda * ||h||_{2,N}^2.

    The cross-fold quadratic is symmetrized and can be indefinite in finite
    samples. With cfg.adaptive_lambda (the default) lambda is raised to twice
    the level where the penalized risk turns convex, which never exceeds 1.

    Raises:
        StateError: `folds` are missing from D
        NumericalError: adaptive_lambda is off and the regularized system is indefinite
    """
    spec = KernelSpec(bandwidth=cfg.bandwidth, dimension=D.d)
    centers = dictionary(D, cfg, novel, folds) if centers is None else as_points(centers, D.d)
    problem = npjive_problem(D, cfg, centers, folds)
    return _fit(problem, spec, centers, provenance_of(D, folds), f"increase lambda (currently {cfg.lambda_:g})")


def fit_pooled_regression(
    D: HistoricalDataset,
    cfg: FitConfig,
    novel: Optional[NovelDataset] = None,
    folds: Optional[Tuple[int, ...]] = None,
    centers: Optional[NDArray[np.float64]] = None,
) -> RkhsFunction:
    """Kernel ridge regression of Y on S, ignoring the arms (confounded baseline)."""
    spec = KernelSpec(bandwidth=cfg.bandwidth, dimension=D.d)
    centers = dictionary(D, cfg, novel, folds) if centers is None else as_points(centers, D.d)
    problem = pooled_regression_problem(D, cfg, centers, folds)
    return _fit(problem, spec, centers, provenance_of(D, folds), "increase lambda")
