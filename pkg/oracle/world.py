"""
Exact finite-support worlds.

S takes M values, every arm has a pmf over them, Y given S = s_m is
outcome_mean[m] plus a zero-mean finite noise law. The hypothesis space is all
functions on the support, so T_K is the K x M matrix of arm pmfs and every
population object (Riesz representer, debiasing nuisance, minimum-norm NPIV
solution) is a finite linear-algebra computation.

Inner products on functions of S are taken under the pooled pmf
pbar = (1/K) sum_a p(.|a); on functions of A under the uniform law on arms.
"""

from dataclasses import dataclass
from logging import getLogger
from typing import Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import ContractError, InputError
from core.rng import stream
from sampling.datasets import HistoricalDataset, NovelDataset

logger = getLogger(__name__)

RANK_TOL = 1e-10
PMF_TOL = 1e-12
RANGE_TOL = 1e-8


@dataclass(frozen=True)
class DiscreteWorld:
    support: NDArray[np.float64]  # (M,)
    cond_pmf: NDArray[np.float64]  # (K, M), row a is p(s | a)
    novel_pmf: NDArray[np.float64]  # (M,)
    outcome_mean: NDArray[np.float64]  # (M,), E[Y | S = s_m]
    noise_values: NDArray[np.float64]  # (M, J), residual atoms at each support point
    noise_probs: NDArray[np.float64]  # (M, J)

    def __post_init__(self) -> None:
        cond = np.atleast_2d(np.asarray(self.cond_pmf, dtype=np.float64))
        novel = np.asarray(self.novel_pmf, dtype=np.float64).reshape(-1)
        M = cond.shape[1]
        for name, arr in (("support", self.support), ("outcome_mean", self.outcome_mean)):
            if np.asarray(arr).reshape(-1).shape[0] != M:
                raise InputError(f"{name} must have {M} entries")
        noise_values = np.asarray(self.noise_values, dtype=np.float64).reshape(M, -1)
        noise_probs = np.asarray(self.noise_probs, dtype=np.float64).reshape(M, -1)
        if novel.shape[0] != M or noise_values.shape != noise_probs.shape:
            raise InputError("novel pmf and noise law must match the support")
        for name, pmf in (("cond_pmf", cond), ("novel_pmf", novel[None, :]), ("noise_probs", noise_probs)):
            if np.any(pmf < 0) or np.any(np.abs(pmf.sum(axis=1) - 1.0) > PMF_TOL):
                raise InputError(f"{name} rows must be probability vectors")
        object.__setattr__(self, "support", np.asarray(self.support, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "cond_pmf", cond)
        object.__setattr__(self, "novel_pmf", novel)
        object.__setattr__(self, "outcome_mean", np.asarray(self.outcome_mean, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "noise_values", noise_values)
        object.__setattr__(self, "noise_probs", noise_probs)

    @property
    def K(self) -> int:
        return int(self.cond_pmf.shape[0])

    @property
    def M(self) -> int:
        return int(self.cond_pmf.shape[1])

    @property
    def pooled_pmf(self) -> NDArray[np.float64]:
        return self.cond_pmf.mean(axis=0)

    @property
    def theta_star(self) -> float:
        return float(self.novel_pmf @ self.outcome_mean)

    @property
    def arm_outcome_means(self) -> NDArray[np.float64]:
        """r_0(a) = E[Y | A = a]."""
        return self.cond_pmf @ self.outcome_mean


@dataclass(frozen=True)
class Nuisances:
    rho: NDArray[np.float64]
    alpha: NDArray[np.float64]
    xi: Optional[NDArray[np.float64]]
    h_dagger: NDArray[np.float64]
    identified: bool


def random_world(
    seed: int,
    K: int,
    M: int,
    noise_scale: float = 1.0,
    duplicate_arms: bool = False,
    novel_in_span: bool = False,
) -> DiscreteWorld:
    """
    A random world with Dirichlet(1) arm pmfs and a two-point noise law per support point.

    Args:
        duplicate_arms: copy arm 0 onto arm 1 to make T_K rank deficient
        novel_in_span: make the novel pmf a mixture of arm pmfs, which guarantees identification
    """
    rng = stream(seed, K, M)
    cond = rng.dirichlet(np.ones(M), size=K)
    if duplicate_arms and K > 1:
        cond[1] = cond[0]
    if novel_in_span:
        novel = rng.dirichlet(np.ones(K)) @ cond
        novel = novel / novel.sum()
    else:
        novel = rng.dirichlet(np.ones(M))
    scale = noise_scale * rng.uniform(0.5, 1.5, size=M)
    return DiscreteWorld(
        support=np.sort(rng.normal(size=M)),
        cond_pmf=cond,
        novel_pmf=novel,
        outcome_mean=rng.normal(size=M),
        noise_values=np.stack([-scale, scale], axis=1),
        noise_probs=np.full((M, 2), 0.5),
    )


def exact_operator(w: DiscreteWorld) -> NDArray[np.float64]:
    """T_K as a K x M matrix, T[a, m] = p(s_m | a); (T h)(a) = E[h(S) | A = a]."""
    return w.cond_pmf.copy()


def adjoint(w: DiscreteWorld, r: ArrayLike) -> NDArray[np.float64]:
    """T_K^* r under the pooled / uniform-arm inner products: (1/K) T' r / pbar."""
    return w.cond_pmf.T @ np.asarray(r, dtype=np.float64) / (w.K * _pooled_positive(w))


def weak_norm(w: DiscreteWorld, f: ArrayLike) -> float:
    """||T_K f|| = sqrt((1/K) sum_a (T f)(a)^2)."""
    Tf = w.cond_pmf @ np.asarray(f, dtype=np.float64)
    return float(np.sqrt(np.mean(Tf**2)))


def pooled_norm(w: DiscreteWorld, f: ArrayLike) -> float:
    f = np.asarray(f, dtype=np.float64)
    return float(np.sqrt(w.pooled_pmf @ f**2))


def _pooled_positive(w: DiscreteWorld) -> NDArray[np.float64]:
    pbar = w.pooled_pmf
    if np.any(pbar <= 0):
        raise InputError(f"pooled pmf has zero mass at support points {np.flatnonzero(pbar <= 0).tolist()}")
    return pbar


def _pinv(A: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.linalg.pinv(A, rcond=RANK_TOL)


def riesz_and_nuisances(w: DiscreteWorld) -> Nuisances:
    """
    Population nuisances of the world.

    rho = p_new / pbar; alpha = rho (the projection onto the full function
    space is the identity); xi is the minimum-norm solution of T*T xi = alpha
    when alpha lies in the range of T* (identification), else None; h_dagger
    is the minimum pooled-norm solution of T h = r_0.

    Raises:
        InputError: the pooled pmf has zero mass somewhere
    """
    pbar = _pooled_positive(w)
    T = w.cond_pmf
    root = np.sqrt(pbar)
    rho = w.novel_pmf / pbar
    alpha = rho.copy()
    # change of variables h = g / sqrt(pbar) turns the pooled norm into the Euclidean one
    B = T / root[None, :]
    # alpha in R(T*) <=> novel pmf in the row space of T
    coef, *_ = np.linalg.lstsq(T.T, w.novel_pmf, rcond=None)
    residual = float(np.linalg.norm(T.T @ coef - w.novel_pmf))
    identified = residual < RANGE_TOL
    xi = None
    if identified:
        g = _pinv(B.T @ B) @ (w.K * root * alpha)
        xi = g / root
    h_dagger = (_pinv(B) @ w.arm_outcome_means) / root
    logger.debug(f"Oracle nuisances: identified={identified}, range residual={residual:.2e}")
    return Nuisances(rho=rho, alpha=alpha, xi=xi, h_dagger=h_dagger, identified=identified)


def _rank(A: NDArray[np.float64]) -> int:
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0]))


def check_id_equiv(w: Union[DiscreteWorld, ArrayLike]) -> bool:
    """rank(T') == rank(T'T): the range of T* equals the range of T*T. Accepts a world or a bare K x M matrix."""
    T = w.cond_pmf if isinstance(w, DiscreteWorld) else np.atleast_2d(np.asarray(w, dtype=np.float64))
    return _rank(T.T) == _rank(T.T @ T)


def psi_expectation(w: DiscreteWorld, h: ArrayLike, xi: ArrayLike) -> float:
    """E[h(S_new) + xi(S')(Y - h(S))] with S' an independent copy of S within the arm."""
    h = np.asarray(h, dtype=np.float64)
    T = w.cond_pmf
    return float(w.novel_pmf @ h + np.mean((T @ np.asarray(xi, dtype=np.float64)) * (T @ (w.outcome_mean - h))))


def mixed_bias_check(w: DiscreteWorld, h: ArrayLike, xi: ArrayLike) -> Tuple[float, float]:
    """
    (|E psi(h, xi) - theta*|, ||T(xi - xi_K)|| * ||T(h - h_K)||); the first never exceeds the second.

    Raises:
        ContractError: theta* is not identified in this world
    """
    nuisances = riesz_and_nuisances(w)
    if not nuisances.identified or nuisances.xi is None:
        raise ContractError("mixed-bias bound needs an identified world")
    h = np.asarray(h, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    lhs = abs(psi_expectation(w, h, xi) - w.theta_star)
    rhs = weak_norm(w, xi - nuisances.xi) * weak_norm(w, h - nuisances.h_dagger)
    return lhs, rhs


def population_q_basis(w: DiscreteWorld) -> NDArray[np.float64]:
    """(K, M) rows q*_a = T* 1{. = a}."""
    return np.stack([adjoint(w, np.eye(w.K)[a]) for a in range(w.K)])


def population_gamma(w: DiscreteWorld) -> NDArray[np.float64]:
    """
    Minimum-norm gamma of sum gamma gamma' E[q*_a q*_a'] - 2 sum gamma_a E[q*_a(S_new)].

    The minimizer q = sum_a gamma_a 1{. = a} attains min_q ||alpha - T* q||.
    """
    Q = population_q_basis(w)
    pbar = _pooled_positive(w)
    gram_q = (Q * pbar[None, :]) @ Q.T
    v = Q @ w.novel_pmf
    return _pinv(gram_q) @ v


def approximate_identification_check(w: DiscreteWorld) -> Tuple[float, float]:
    """
    (|E psi(h_dagger, q_K) - theta*|, eps_K * delta_K) for psi(h, q) = h(S_new) + q(A)(Y - h(S)).

    eps_K is the pooled norm of the projection of h* (the outcome mean) onto
    the null space of T_K; delta_K = min_q ||alpha - T* q||.
    """
    nuisances = riesz_and_nuisances(w)
    pbar = _pooled_positive(w)
    root = np.sqrt(pbar)
    B = w.cond_pmf / root[None, :]
    g_star = root * w.outcome_mean
    null_part = g_star - _pinv(B) @ (B @ g_star)
    eps = float(np.linalg.norm(null_part))
    gamma = population_gamma(w)
    delta = pooled_norm(w, nuisances.alpha - adjoint(w, gamma))
    h = nuisances.h_dagger
    value = float(w.novel_pmf @ h + np.mean(gamma * (w.cond_pmf @ (w.outcome_mean - h))))
    return abs(value - w.theta_star), eps * delta


def sample_world(w: DiscreteWorld, n: int, n_new: int, seed: int) -> Tuple[HistoricalDataset, NovelDataset]:
    """Draws n units per arm and n_new novel units from the world."""
    S, Y, A = [], [], []
    for a in range(w.K):
        rng = stream(seed, 0, a)
        atoms = rng.choice(w.M, size=n, p=w.cond_pmf[a])
        noise = np.array([rng.choice(w.noise_values[m], p=w.noise_probs[m]) for m in atoms])
        S.append(w.support[atoms])
        Y.append(w.outcome_mean[atoms] + noise)
        A.append(np.full(n, a))
    new_atoms = stream(seed, 1, 0).choice(w.M, size=n_new, p=w.novel_pmf)
    D = HistoricalDataset(
        S=np.concatenate(S).reshape(-1, 1), Y=np.concatenate(Y), A=np.concatenate(A), K=w.K, n=n, metadata={"dgp": "discrete-world"}
    )
    return D, NovelDataset(S_new=w.support[new_atoms].reshape(-1, 1))
