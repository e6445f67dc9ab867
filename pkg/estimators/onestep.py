"""
Four-fold one-step estimator of theta = E[h*(S(new))].

Nuisances are trained on folds 0 and 1. Every fold-2 row i is paired with a
fold-3 row j(i) of the same arm, so that (S_i, Y_j(i)) behaves like (S', Y)
with S' an independent copy of S within the cell, and

    theta = mean_new h(S_new) + mean_i xi(S_i) (Y_j(i) - h(S_j(i))).
"""

from dataclasses import dataclass
from logging import getLogger
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.stats import norm

from core.errors import ContractError, InputError
from core.rkhs import RkhsFunction
from core.rng import stream
from estimators.debias import ArmWeightFunction
from estimators.npjive import ALL_ROWS
from sampling.datasets import HistoricalDataset, NovelDataset

logger = getLogger(__name__)

Debias = Union[RkhsFunction, ArmWeightFunction]
EVALUATION_FOLDS: Tuple[int, int] = (2, 3)


class ThetaEstimate(BaseModel):
    """Point estimate, standard error and Wald interval for theta."""

    model_config = ConfigDict(frozen=True)

    theta: float
    # se, the variance components and the bounds are NaN when a variance cannot be estimated
    se: float
    ci_low: float
    ci_high: float
    sigma1_sq: float
    sigma2_sq: float
    n_eff: int = Field(ge=1)
    level: float = 0.95
    estimator: Optional[str] = None
    provenance: Dict[str, List[int]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_interval(self) -> "ThetaEstimate":
        if self.se < 0 or self.sigma1_sq < 0 or self.sigma2_sq < 0:
            raise ValueError("standard error and variance components must be non-negative")
        if np.isnan(self.ci_low) and np.isnan(self.ci_high):
            return self
        if not self.ci_low <= self.theta <= self.ci_high:
            raise ValueError(f"interval [{self.ci_low}, {self.ci_high}] does not contain theta={self.theta}")
        return self

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


@dataclass(frozen=True)
class FoldPairing:
    """One-to-one, arm-respecting map j from fold-2 rows to fold-3 rows."""

    source: NDArray[np.int64]
    target: NDArray[np.int64]
    folds: Tuple[int, int] = EVALUATION_FOLDS

    def __post_init__(self) -> None:
        if self.source.shape != self.target.shape or np.unique(self.target).shape[0] != self.target.shape[0]:
            raise InputError("pairing must be a bijection")

    def __len__(self) -> int:
        return int(self.source.shape[0])

    def as_dict(self) -> Dict[int, int]:
        return {int(i): int(j) for i, j in zip(self.source, self.target)}

    def inverse(self) -> "FoldPairing":
        return FoldPairing(source=self.target, target=self.source, folds=(self.folds[1], self.folds[0]))


def pair_folds(D: HistoricalDataset, seed: int, folds: Tuple[int, int] = EVALUATION_FOLDS) -> FoldPairing:
    """
    Seeded random bijection between the fold-2 and fold-3 rows of every arm.

    Raises:
        StateError: folds missing or fold-2 and fold-3 cells of unequal size
    """
    D.require_folds(folds)
    sources, targets = [], []
    for a in range(D.K):
        src = np.flatnonzero((D.A == a) & (D.V == folds[0]))
        tgt = np.flatnonzero((D.A == a) & (D.V == folds[1]))
        sources.append(src)
        targets.append(tgt[stream(seed, 1, a).permutation(tgt.shape[0])])
    return FoldPairing(source=np.concatenate(sources), target=np.concatenate(targets), folds=folds)


def _check_provenance(name: str, nuisance: object, pairing: FoldPairing) -> None:
    provenance = getattr(nuisance, "provenance", frozenset())
    if not provenance:
        raise ContractError(f"{name} carries no training-fold provenance")
    if set(provenance) & set(pairing.folds) or ALL_ROWS in provenance:
        raise ContractError(f"{name} was trained on folds {sorted(provenance)}, which overlap the evaluation folds {pairing.folds}")


def correction_terms(h: RkhsFunction, debias: Optional[Debias], D: HistoricalDataset, pairing: FoldPairing) -> NDArray[np.float64]:
    """xi(S_i) (Y_j(i) - h(S_j(i))) for every paired fold-2 row i."""
    if debias is None:
        return np.zeros(len(pairing))
    src, tgt = pairing.source, pairing.target
    residual = D.Y[tgt] - h(D.S[tgt])
    if isinstance(debias, ArmWeightFunction):
        if debias.K != D.K:
            raise InputError(f"arm weights cover {debias.K} arms, dataset has {D.K}")
        weights = debias.weights(D.A[src], D.S[src])
    else:
        weights = debias(D.S[src])
    return weights * residual


def _components(
    h: RkhsFunction, debias: Optional[Debias], D: HistoricalDataset, Dnew: NovelDataset, pairing: Optional[FoldPairing]
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    if pairing is None:
        if debias is not None:
            raise InputError("a debiasing correction needs a fold pairing")
        return h(Dnew.S_new), np.zeros(0)
    _check_provenance("primary nuisance", h, pairing)
    if debias is not None:
        _check_provenance("debiasing nuisance", debias, pairing)
    return h(Dnew.S_new), correction_terms(h, debias, D, pairing)


def variance_components(
    h: RkhsFunction, debias: Optional[Debias], D: HistoricalDataset, Dnew: NovelDataset, pairing: Optional[FoldPairing]
) -> Tuple[float, float]:
    """
    (sigma1^2, sigma2^2): sample variances of h over the novel arm and of the realized correction terms.

    Raises:
        InputError: fewer than two novel rows or fewer than two pairs
    """
    plug, corr = _components(h, debias, D, Dnew, pairing)
    if plug.shape[0] < 2:
        raise InputError(f"need at least 2 novel rows for a variance, got {plug.shape[0]}")
    if pairing is not None and corr.shape[0] < 2:
        raise InputError(f"need at least 2 fold pairs for a variance, got {corr.shape[0]}")
    sigma2 = float(np.var(corr, ddof=1)) if corr.shape[0] >= 2 else 0.0
    return float(np.var(plug, ddof=1)), sigma2


def one_step_theta(
    h: RkhsFunction,
    debias: Optional[Debias],
    D: HistoricalDataset,
    Dnew: NovelDataset,
    pairing: Optional[FoldPairing],
    level: float = 0.95,
    estimator: Optional[str] = None,
) -> ThetaEstimate:
    """
    One-step estimate with a Wald interval.

    se^2 = sigma1^2 / n' + sigma2^2 / (number of pairs). A component that cannot
    be estimated (a single novel row, or a single pair) is NaN, and so are se
    and the interval; theta is still reported.

    Raises:
        ContractError: a nuisance was trained on the evaluation folds or has no provenance
    """
    plug, corr = _components(h, debias, D, Dnew, pairing)
    theta = float(plug.mean() + (corr.mean() if corr.shape[0] else 0.0))
    sigma1 = float(np.var(plug, ddof=1)) if plug.shape[0] >= 2 else float("nan")
    if pairing is None:
        sigma2 = 0.0
    else:
        sigma2 = float(np.var(corr, ddof=1)) if corr.shape[0] >= 2 else float("nan")
    if np.isnan(sigma1) or np.isnan(sigma2):
        logger.warning(f"Too few novel rows ({plug.shape[0]}) or fold pairs ({corr.shape[0]}) for a variance; interval is undefined")
    n_pairs = corr.shape[0]
    se = float(np.sqrt(sigma1 / plug.shape[0] + (sigma2 / max(n_pairs, 1) if pairing is not None else 0.0)))
    z = float(norm.ppf(0.5 + level / 2))
    provenance = {"h": sorted(getattr(h, "provenance", frozenset()))}
    if debias is not None:
        provenance["debias"] = sorted(debias.provenance)
    return ThetaEstimate(
        theta=theta,
        se=se,
        ci_low=theta - z * se,
        ci_high=theta + z * se,
        sigma1_sq=sigma1,
        sigma2_sq=sigma2,
        n_eff=int(min(plug.shape[0], n_pairs) if n_pairs else plug.shape[0]),
        level=level,
        estimator=estimator,
        provenance=provenance,
    )
