"""
Debiasing nuisances.

Exact identification: xi solves T*T xi = alpha_K, the first-order condition of
the cross-fold risk

    (1/2K) sum_a [T_{K,0} xi](a) [T_{K,1} xi](a) - mean xi(S_new) + mu ||xi||_{2,N}^2.

Approximate identification: q = sum_a gamma_a 1{. = a}. The kernel least-squares
fit against the arm-a feature mean (`fit_qa_star`) estimates the density ratio
dP_a / dPbar = K T* 1{. = a}. The gamma system is written in the adjoint basis
q*_a = T* 1{. = a}, that fit divided by K, where E[q*_a(S)^2] = E[q*_a(S) | A = a] / K.
Its diagonal is jackknifed (leave-one-out basis fits) to remove the
own-observation bias.
"""

from dataclasses import dataclass, field
from enum import Enum
from logging import getLogger
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from core.errors import InputError, NumericalError
from core.quadratic import CONVEXITY_MARGIN, QuadraticProblem, jitter_level
from core.rkhs import KernelSpec, RkhsFunction, as_points, gram
from estimators.config import DebiasConfig
from estimators.npjive import FoldPair, arm_moments, cross_fold_level, dictionary, provenance_of, training_mask
from sampling.datasets import HistoricalDataset, NovelDataset, cell_means

logger = getLogger(__name__)


class WeightMode(str, Enum):
    # q(a) = gamma_a, the form used in the one-step correction
    ARM = "arm"
    # s -> sum_a gamma_a q*_a(s)
    SURROGATE = "surrogate"


@dataclass(frozen=True)
class ArmWeightFunction:
    gamma: NDArray[np.float64]
    basis: Tuple[RkhsFunction, ...]
    mode: WeightMode = WeightMode.ARM
    provenance: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        gamma = np.asarray(self.gamma, dtype=np.float64).reshape(-1).copy()
        if gamma.shape[0] != len(self.basis):
            raise InputError(f"{gamma.shape[0]} weights for {len(self.basis)} basis functions")
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "basis", tuple(self.basis))
        object.__setattr__(self, "mode", WeightMode(self.mode))
        object.__setattr__(self, "provenance", frozenset(self.provenance))

    @property
    def K(self) -> int:
        return int(self.gamma.shape[0])

    def at_arms(self, arms: ArrayLike) -> NDArray[np.float64]:
        return self.gamma[np.asarray(arms, dtype=np.int64)]

    def at_points(self, points: ArrayLike) -> NDArray[np.float64]:
        values = _basis_values(self.basis, points)
        return values @ self.gamma

    def weights(self, arms: ArrayLike, points: ArrayLike) -> NDArray[np.float64]:
        """Correction weights for rows with the given arms and short-term outcomes."""
        if self.mode is WeightMode.ARM:
            return self.at_arms(arms)
        return self.at_points(points)


@dataclass(frozen=True)
class LeaveOneOutBasis:
    """q*_{A_i,-i} for every training row i, stored as one coefficient row per i."""

    spec: KernelSpec
    centers: NDArray[np.float64]
    rows: NDArray[np.int64]
    arms: NDArray[np.int64]
    coefficients: NDArray[np.float64]
    provenance: FrozenSet[int] = field(default_factory=frozenset)

    def function(self, i: int) -> RkhsFunction:
        pos = np.flatnonzero(self.rows == i)
        if pos.size == 0:
            raise InputError(f"row {i} has no leave-one-out fit")
        return RkhsFunction(self.spec, self.centers, self.coefficients[pos[0]], self.provenance)

    def own_values(self, D: HistoricalDataset) -> NDArray[np.float64]:
        """q*_{A_i,-i}(S_i) for every stored row i."""
        Phi = gram(D.S[self.rows], self.centers, self.spec)
        return np.einsum("ij,ij->i", Phi, self.coefficients)


def _basis_values(basis: Sequence[RkhsFunction], points: ArrayLike) -> NDArray[np.float64]:
    """(m, K) matrix of basis evaluations, sharing the feature map when the dictionary is shared."""
    first = basis[0]
    if all(b.spec == first.spec and np.array_equal(b.centers, first.centers) for b in basis):
        coef = np.stack([b.coefficients for b in basis], axis=1)
        return first.features(points) @ coef
    return np.stack([b(points) for b in basis], axis=1)


def _second_moment(D: HistoricalDataset, spec: KernelSpec, centers: NDArray[np.float64], mask: NDArray[np.bool_]) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    Phi = gram(D.S[mask], centers, spec)
    return Phi, Phi.T @ Phi / Phi.shape[0]


def debias_exact_problem(
    D: HistoricalDataset, Dnew: NovelDataset, cfg: DebiasConfig, centers: NDArray[np.float64], folds: FoldPair = (0, 1)
) -> QuadraticProblem:
    spec = KernelSpec(bandwidth=cfg.bandwidth, dimension=D.d)
    mask = training_mask(D, folds)
    f0, f1 = arm_moments(D, spec, centers, folds).feature_means
    _, G = _second_moment(D, spec, centers, mask)
    cross = f0.T @ f1
    curvature = (cross + cross.T) / (4 * D.K)
    mu = cross_fold_level(cfg.effective_mu, curvature, G, cfg, name="mu")
    quad = curvature + mu * G + jitter_level(G, cfg.jitter) * np.eye(G.shape[0])
    return QuadraticProblem(quad=quad, linear=gram(Dnew.S_new, centers, spec).mean(axis=0), constant=0.0)


def fit_debias_exact(
    D: HistoricalDataset,
    Dnew: NovelDataset,
    cfg: DebiasConfig,
    folds: FoldPair = (0, 1),
    centers: Optional[NDArray[np.float64]] = None,
) -> RkhsFunction:
    """
    Exact-identification debiasing nuisance: minimizer of the Tikhonov
    regularized cross-fold risk over the dictionary. mu adapts like lambda in
    `fit_npjive` when cfg.adaptive_lambda is set.

    Raises:
        StateError: `folds` are missing from D
        NumericalError: adaptive_lambda is off and the regularized system is indefinite
    """
    spec = KernelSpec(bandwidth=cfg.bandwidth, dimension=D.d)
    centers = dictionary(D, cfg, Dnew, folds) if centers is None else as_points(centers, D.d)
    problem = debias_exact_problem(D, Dnew, cfg, centers, folds)
    beta = problem.solve(remedy=f"increase mu (currently {cfg.effective_mu:g})")
    return RkhsFunction(spec=spec, centers=centers, coefficients=beta, provenance=provenance_of(D, folds))


def qa_star_problem(
    D: HistoricalDataset,
    a: int,
    cfg: DebiasConfig,
    centers: NDArray[np.float64],
    exclude: Optional[int] = None,
    folds: FoldPair = (0, 1),
) -> QuadraticProblem:
    if not 0 <= a < D.K:
        raise InputError(f"arm {a} is outside 0..{D.K - 1}")
    spec = KernelSpec(bandwidth=cfg.bandwidth, dimension=D.d)
    mask = training_mask(D, folds)
    Phi, G = _second_moment(D, spec, centers, mask)
    in_arm = mask & (D.A == a)
    if exclude is not None:
        if not (0 <= exclude < D.N and in_arm[exclude]):
            raise InputError(f"row {exclude} is not a training row of arm {a}")
        in_arm = in_arm.copy()
        in_arm[exclude] = False
    m = int(in_arm.sum())
    if m == 0:
        raise InputError(f"arm {a} has no rows left after excluding row {exclude}")
    phibar = gram(D.S[in_arm], centers, spec).mean(axis=0)
    quad = G + jitter_level(G, cfg.jitter) * np.eye(G.shape[0])
    return QuadraticProblem(quad=quad, linear=2.0 * phibar, constant=0.0)


def fit_qa_star(
    D: HistoricalDataset,
    a: int,
    cfg: DebiasConfig,
    exclude: Optional[int] = None,
    folds: FoldPair = (0, 1),
    centers: Optional[NDArray[np.float64]] = None,
    novel: Optional[NovelDataset] = None,
) -> RkhsFunction:
    """
    Basis function q*_a, optionally leaving out one row of arm a.

    Minimizes (1/N) sum_i h(S_i)^2 - (2/m) sum_{i in arm a, i != exclude} h(S_i),
    i.e. beta = (G_N + eps I)^-1 phibar_a. This path factorizes on every call;
    `fit_jackknife_basis` shares one factorization across all arms and rows.
    """
    spec = KernelSpec(bandwidth=cfg.bandwidth, dimension=D.d)
    centers = dictionary(D, cfg, novel, folds) if centers is None else as_points(centers, D.d)
    problem = qa_star_problem(D, a, cfg, centers, exclude, folds)
    beta = problem.solve(remedy="increase jitter")
    return RkhsFunction(spec=spec, centers=centers, coefficients=beta, provenance=provenance_of(D, folds))


def fit_jackknife_basis(
    D: HistoricalDataset,
    cfg: DebiasConfig,
    novel: Optional[NovelDataset] = None,
    folds: FoldPair = (0, 1),
    centers: Optional[NDArray[np.float64]] = None,
    second_moment: Optional[NDArray[np.float64]] = None,
) -> Tuple[List[RkhsFunction], LeaveOneOutBasis]:
    """
    All K basis functions and all leave-one-out fits from one Cholesky factorization.

    With phibar_{a,-i} = (n phibar_a - phi(S_i)) / (n - 1), each leave-one-out
    coefficient is (n beta_a - (G + eps I)^-1 phi(S_i)) / (n - 1), so the only
    work per row is a triangular solve.

    Args:
        second_moment: replaces the empirical G_N, e.g. a known population matrix

    Raises:
        InputError: fewer than two training rows per arm
        NumericalError: G_N + eps I is not positive definite
    """
    spec = KernelSpec(bandwidth=cfg.bandwidth, dimension=D.d)
    centers = dictionary(D, cfg, novel, folds) if centers is None else as_points(centers, D.d)
    mask = training_mask(D, folds)
    rows = np.flatnonzero(mask)
    Phi, G = _second_moment(D, spec, centers, mask)
    if second_moment is not None:
        G = np.asarray(second_moment, dtype=np.float64)
    n = int(np.bincount(D.A[rows], minlength=D.K).min())
    if n < 2:
        raise InputError("leave-one-out fits need at least two training rows per arm")
    try:
        factor = cho_factor(G + jitter_level(G, cfg.jitter) * np.eye(G.shape[0]), lower=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericalError(f"feature second-moment matrix is not positive definite ({exc}); increase jitter") from exc
    phibar = cell_means(gram(D.S, centers, spec), D, folds)
    B = cho_solve(factor, phibar.T).T
    Z = cho_solve(factor, Phi.T).T
    arms = D.A[rows]
    loo = (n * B[arms] - Z) / (n - 1)
    provenance = provenance_of(D, folds)
    logger.debug(f"Jackknife basis: K={D.K}, {rows.shape[0]} leave-one-out fits sharing one factorization")
    basis = [RkhsFunction(spec, centers, B[a], provenance) for a in range(D.K)]
    return basis, LeaveOneOutBasis(spec, centers, rows, arms, loo, provenance)


def adjoint_basis(basis: Sequence[RkhsFunction]) -> Tuple[RkhsFunction, ...]:
    """q*_a = T* 1{. = a}: the density-ratio fits of `fit_qa_star` divided by K."""
    K = len(basis)
    return tuple(b.with_coefficients(b.coefficients / K) for b in basis)


def assemble_C(
    D: HistoricalDataset,
    basis: Sequence[RkhsFunction],
    loo_basis: LeaveOneOutBasis,
    folds: FoldPair = (0, 1),
) -> NDArray[np.float64]:
    """
    The K x K matrix of the gamma system, in the adjoint basis q*_a = qhat_a / K
    built from the density-ratio fits `basis` and `loo_basis`.

    Diagonal: (1/(K n)) sum_{i: A_i = a} q*_{a,-i}(S_i). Off-diagonal:
    (1/N) sum_i q*_a(S_i) q*_{a'}(S_i). Sums run over the training rows.
    """
    if len(basis) != D.K:
        raise InputError(f"{len(basis)} basis functions for {D.K} arms")
    mask = training_mask(D, folds)
    Q = _basis_values(adjoint_basis(basis), D.S[mask])
    C = Q.T @ Q / Q.shape[0]
    n = int(np.bincount(D.A[mask], minlength=D.K).min())
    own = np.bincount(loo_basis.arms, weights=loo_basis.own_values(D) / D.K, minlength=D.K)
    np.fill_diagonal(C, own / (D.K * n))
    return C


def default_tau(C_sym: NDArray[np.float64]) -> float:
    """Ridge of the gamma system: covers the most negative eigenvalue of C_sym twice over."""
    lowest = float(np.linalg.eigvalsh(C_sym)[0])
    return max(1e-6 * abs(float(np.mean(np.diag(C_sym)))), CONVEXITY_MARGIN * max(0.0, -lowest))


def fit_q_approx(
    D: HistoricalDataset,
    Dnew: NovelDataset,
    cfg: DebiasConfig,
    folds: FoldPair = (0, 1),
    centers: Optional[NDArray[np.float64]] = None,
    mode: WeightMode = WeightMode.ARM,
) -> ArmWeightFunction:
    """
    Approximate-identification debiasing nuisance q(a) = gamma_a.

    gamma solves (C_sym + tau I) gamma = v with v_a the novel-arm mean of q*_a.
    The jackknifed diagonal makes C_sym indefinite in finite samples, so when
    cfg.tau is None the ridge comes from `default_tau`.

    Raises:
        NumericalError: an explicit tau leaves C_sym + tau I indefinite
    """
    ratios, loo = fit_jackknife_basis(D, cfg, Dnew, folds, centers)
    C = assemble_C(D, ratios, loo, folds)
    C_sym = 0.5 * (C + C.T)
    basis = adjoint_basis(ratios)
    v = _basis_values(basis, Dnew.S_new).mean(axis=0)
    tau = cfg.tau if cfg.tau is not None else default_tau(C_sym)
    try:
        factor = cho_factor(C_sym + tau * np.eye(D.K), lower=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericalError(f"gamma system is not positive definite ({exc}); increase tau (currently {tau:g})") from exc
    gamma = cho_solve(factor, v)
    logger.debug(f"gamma system solved with tau={tau:.3g}, |gamma|={np.linalg.norm(gamma):.3g}")
    return ArmWeightFunction(gamma=gamma, basis=basis, mode=mode, provenance=provenance_of(D, folds))
