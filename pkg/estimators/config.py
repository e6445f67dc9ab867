from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

# (lambda_h, nu_h, L_h) per historical cell size
CELL_SIZE_DEFAULTS: Dict[int, Tuple[float, float, int]] = {
    30: (1e-2, 1 / 3, 5),
    100: (1e-2, 1 / 4, 7),
    300: (1e-1, 1 / 10, 10),
    3000: (1e-1, 1 / 10, 10),
}
DEBIAS_BANDWIDTH = 1 / 10
DEBIAS_DICTIONARY_SIZE = 10


class FitConfig(BaseModel):
    """Settings shared by every dictionary fit."""

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    # Tikhonov level on the empirical L2 norm ||h||_{2,N}^2
    lambda_: float = Field(1e-2, alias="lambda", ge=0.0)
    # Nystrom dictionary size
    L: int = Field(5, ge=1)
    bandwidth: float = Field(1 / 3, gt=0.0)
    seed: int = Field(0, ge=0)
    # relative ridge, scaled by trace(G)/L before factorization
    jitter: float = Field(1e-8, gt=0.0)
    # cross-fold fits raise lambda (and mu) to twice the level where their risk turns convex
    adaptive_lambda: bool = True


class DebiasConfig(FitConfig):
    """Dictionary and regularization for the debiasing nuisances."""

    L: int = Field(DEBIAS_DICTIONARY_SIZE, ge=1)
    bandwidth: float = Field(DEBIAS_BANDWIDTH, gt=0.0)
    # Tikhonov level of the exact-identification risk; None means mu = lambda
    mu: Optional[float] = Field(None, ge=0.0)
    # ridge of the gamma system; None means the larger of 1e-6 * |mean diagonal of C_sym|
    # and twice its most negative eigenvalue
    tau: Optional[float] = Field(None, ge=0.0)

    @property
    def effective_mu(self) -> float:
        return self.lambda_ if self.mu is None else self.mu


def default_configs(n: int, seed: int = 0) -> Tuple[FitConfig, DebiasConfig]:
    """
    Primary and debiasing configurations for cell size n.

    Cell sizes missing from CELL_SIZE_DEFAULTS use the closest entry on a log scale.
    """
    sizes = np.array(sorted(CELL_SIZE_DEFAULTS))
    nearest = int(sizes[np.argmin(np.abs(np.log(sizes) - np.log(max(n, 1))))])
    lam, nu, L = CELL_SIZE_DEFAULTS[nearest]
    fit = FitConfig(lambda_=lam, bandwidth=nu, L=L, seed=seed)
    debias = DebiasConfig(lambda_=lam, bandwidth=DEBIAS_BANDWIDTH, L=DEBIAS_DICTIONARY_SIZE, seed=seed)
    return fit, debias
