"""
The two simulation designs: the continuous first-stage design with a Gaussian
confounder, and the discrete exact-identification design with Dirichlet
first stages over five support points.
"""

from logging import getLogger
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.integrate import quad
from scipy.stats import norm

from core.errors import NumericalError
from core.rng import stream
from sampling.datasets import HistoricalDataset, NovelDataset

logger = getLogger(__name__)

ARM_TAG = 0
NOVEL_TAG = 1
QUADRATURE_TOL = 1e-8
THRESHOLD = 0.25


def h_star(s: ArrayLike) -> NDArray[np.float64]:
    """Structural function s + sin(s) + 1{s > 0.25}."""
    s = np.asarray(s, dtype=np.float64)
    return s + np.sin(s) + (s > THRESHOLD)


class ContinuousDgpParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    K: int = Field(ge=1)
    n: int = Field(ge=1)
    n_new: int = Field(ge=1)
    sigma_gamma: float = Field(2.0, ge=0.0)
    gamma_new: float = 1.0
    sigma_u: float = Field(1.0, ge=0.0)
    seed: int = Field(0, ge=0)
    rep: int = Field(0, ge=0)


def _default_support() -> List[float]:
    return [-1 + 2 * m / 5 for m in range(1, 6)]


class ExactIdDgpParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    K: int = Field(ge=1)
    n: int = Field(ge=1)
    n_new: int = Field(ge=1)
    # None is the infinite-concentration limit: every arm uses the uniform pmf
    concentration: Optional[List[float]] = Field(default_factory=lambda: [10.0] * 5)
    support: List[float] = Field(default_factory=_default_support)
    confounder_half_width: float = Field(0.2, ge=0.0)
    outcome_confounder_scale: float = 10.0
    mu_new: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4])
    seed: int = Field(0, ge=0)
    rep: int = Field(0, ge=0)

    @field_validator("support")
    def check_support(cls, support: List[float]) -> List[float]:
        if len(support) < 1 or np.any(np.diff(support) <= 0):
            raise ValueError("support points must be strictly increasing")
        return support

    @field_validator("mu_new")
    def check_mu_new(cls, mu_new: List[float]) -> List[float]:
        if min(mu_new) < 0 or abs(sum(mu_new) - 1.0) > 1e-12:
            raise ValueError(f"mu_new must be a probability vector, got {mu_new}")
        return mu_new

    @model_validator(mode="after")
    def check_lengths(self) -> "ExactIdDgpParams":
        M = len(self.support)
        if len(self.mu_new) != M or (self.concentration is not None and len(self.concentration) != M):
            raise ValueError(f"mu_new and concentration must have one entry per support point ({M})")
        if self.concentration is not None and min(self.concentration) <= 0:
            raise ValueError("Dirichlet concentration must be positive")
        return self


DgpParams = Union[ContinuousDgpParams, ExactIdDgpParams]
Simulation = Tuple[HistoricalDataset, NovelDataset, float]


def dgp_continuous(p: ContinuousDgpParams) -> Simulation:
    """
    Historical arms with Gamma_a ~ N(0, sigma_gamma^2), S = Unif(Gamma_a +- 0.5) + U,
    Y = h*(S) - U, U ~ N(0, sigma_u^2); the novel arm uses Gamma_new.
    """
    S = np.empty(p.K * p.n)
    U = np.empty(p.K * p.n)
    for a in range(p.K):
        rng = stream(p.seed, p.rep, ARM_TAG, a)
        gamma = rng.normal(0.0, p.sigma_gamma)
        rows = slice(a * p.n, (a + 1) * p.n)
        U[rows] = rng.normal(0.0, p.sigma_u, size=p.n)
        S[rows] = rng.uniform(gamma - 0.5, gamma + 0.5, size=p.n) + U[rows]
    rng = stream(p.seed, p.rep, NOVEL_TAG, 0)
    U_new = rng.normal(0.0, p.sigma_u, size=p.n_new)
    S_new = rng.uniform(p.gamma_new - 0.5, p.gamma_new + 0.5, size=p.n_new) + U_new
    meta = {"dgp": "continuous", **p.model_dump()}
    D = HistoricalDataset(S=S.reshape(-1, 1), Y=h_star(S) - U, A=np.arange(p.K * p.n) // p.n, K=p.K, n=p.n, metadata=meta)
    return D, NovelDataset(S_new=S_new.reshape(-1, 1), metadata=meta), theta_star_quadrature(p)


def _draw_discrete(rng: np.random.Generator, pmf: NDArray[np.float64], size: int, p: ExactIdDgpParams) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    support = np.asarray(p.support)
    atoms = rng.choice(support.shape[0], size=size, p=pmf)
    U = rng.uniform(-p.confounder_half_width, p.confounder_half_width, size=size)
    return support[atoms] + U, U


def dgp_exact_id(p: ExactIdDgpParams) -> Simulation:
    """
    Historical arms with mu_a ~ Dirichlet(concentration), S = s_{Multinomial(mu_a)} + U,
    U ~ Unif(-w, w), Y = h*(S) - scale * U; the novel arm draws atoms from mu_new.
    """
    M = len(p.support)
    S = np.empty(p.K * p.n)
    U = np.empty(p.K * p.n)
    for a in range(p.K):
        rng = stream(p.seed, p.rep, ARM_TAG, a)
        mu = rng.dirichlet(p.concentration) if p.concentration is not None else np.full(M, 1.0 / M)
        rows = slice(a * p.n, (a + 1) * p.n)
        S[rows], U[rows] = _draw_discrete(rng, mu, p.n, p)
    S_new, _ = _draw_discrete(stream(p.seed, p.rep, NOVEL_TAG, 0), np.asarray(p.mu_new), p.n_new, p)
    meta = {"dgp": "exact-id", **p.model_dump()}
    Y = h_star(S) - p.outcome_confounder_scale * U
    D = HistoricalDataset(S=S.reshape(-1, 1), Y=Y, A=np.arange(p.K * p.n) // p.n, K=p.K, n=p.n, metadata=meta)
    return D, NovelDataset(S_new=S_new.reshape(-1, 1), metadata=meta), theta_star_quadrature(p)


def _integrate(f: Callable[[float], float], lo: float, hi: float, breaks: Sequence[float] = ()) -> float:
    inside = sorted({b for b in breaks if lo < b < hi})
    result = quad(f, lo, hi, points=inside or None, epsabs=QUADRATURE_TOL / 100, epsrel=1e-10, limit=500, full_output=1)
    value, abserr = result[0], result[1]
    if len(result) > 3 or abserr > QUADRATURE_TOL:
        raise NumericalError(f"quadrature on [{lo}, {hi}] did not converge (error estimate {abserr:.2e})")
    return float(value)


def _uniform_mean(center: float, half_width: float) -> float:
    """E[h*(center + V)] for V ~ Unif(-half_width, half_width)."""
    if half_width == 0:
        return float(h_star(center))
    lo, hi = center - half_width, center + half_width
    return _integrate(lambda s: float(h_star(s)), lo, hi, [THRESHOLD]) / (hi - lo)


def theta_star_quadrature(p: DgpParams) -> float:
    """
    theta* = E[h*(S_new)] by adaptive quadrature.

    For the continuous design S_new = Unif(gamma_new +- 0.5) + N(0, sigma_u^2)
    has density Phi((s - gamma_new + 0.5)/sigma_u) - Phi((s - gamma_new - 0.5)/sigma_u);
    the exact-identification design is a finite mixture of uniforms.

    Raises:
        NumericalError: the quadrature error estimate exceeds 1e-8
    """
    if isinstance(p, ContinuousDgpParams):
        if p.sigma_u == 0:
            return _uniform_mean(p.gamma_new, 0.5)
        lo_edge, hi_edge = p.gamma_new - 0.5, p.gamma_new + 0.5
        sigma = p.sigma_u

        def integrand(s: float) -> float:
            density = norm.cdf((s - lo_edge) / sigma) - norm.cdf((s - hi_edge) / sigma)
            return float(h_star(s)) * density

        span = 12.0 * sigma
        return _integrate(integrand, lo_edge - span, hi_edge + span, [THRESHOLD, lo_edge, hi_edge])
    return float(
        sum(w * _uniform_mean(s, p.confounder_half_width) for w, s in zip(p.mu_new, p.support) if w > 0)
    )
