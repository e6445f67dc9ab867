"""
Exact expectations of the empirical risks by enumerating every joint outcome.

Within an arm each unit draws a support point m with probability p(s_m | a)
and a noise atom j with probability noise_probs[m, j]. Both risks are sums of
per-arm terms, so the expectation is enumerated arm by arm over the
(M * J)^(2 * n_per_fold) joint outcomes of that arm's units.
"""

import math
from dataclasses import dataclass
from logging import getLogger
from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import InputError
from oracle.world import DiscreteWorld

logger = getLogger(__name__)

MAX_ATOMS = 10_000_000


@dataclass(frozen=True)
class RiskExpectation:
    crossfold: float
    plug_in: float
    atoms: int


def _unit_law(w: DiscreteWorld, h: NDArray[np.float64], a: int) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Residual values Y - h(S) and their probabilities for one unit of arm a."""
    residual = w.outcome_mean[:, None] + w.noise_values - h[:, None]
    prob = w.cond_pmf[a][:, None] * w.noise_probs
    return residual.reshape(-1), prob.reshape(-1)


def _check_h(w: DiscreteWorld, h: ArrayLike) -> NDArray[np.float64]:
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    if h.shape[0] != w.M:
        raise InputError(f"h must have one value per support point ({w.M}), got {h.shape[0]}")
    return h


def enumerate_crossfold_expectation(w: DiscreteWorld, h: ArrayLike, n_per_fold: int) -> RiskExpectation:
    """
    Exact E[cross-fold risk] and E[plug-in risk] of a fixed h with n_per_fold units per arm and fold.

    Raises:
        InputError: n_per_fold < 1 or more than MAX_ATOMS joint outcomes to enumerate
    """
    h = _check_h(w, h)
    if n_per_fold < 1:
        raise InputError(f"n_per_fold must be positive, got {n_per_fold}")
    units = 2 * n_per_fold
    per_unit = w.M * w.noise_values.shape[1]
    atoms = w.K * per_unit**units
    if atoms > MAX_ATOMS:
        raise InputError(f"{atoms} joint outcomes exceed the enumeration limit of {MAX_ATOMS}; use a smaller world or fewer units per fold")

    crossfold_terms, plug_in_terms = [], []
    for a in range(w.K):
        residual, prob = _unit_law(w, h, a)
        idx = np.indices((per_unit,) * units).reshape(units, -1)
        Z = residual[idx]
        P = np.prod(prob[idx], axis=0)
        m0 = Z[:n_per_fold].mean(axis=0)
        m1 = Z[n_per_fold:].mean(axis=0)
        crossfold_terms.append(math.fsum(P * m0 * m1))
        plug_in_terms.append(math.fsum(P * Z.mean(axis=0) ** 2))
    logger.debug(f"Enumerated {atoms} joint outcomes over {w.K} arms")
    return RiskExpectation(
        crossfold=math.fsum(crossfold_terms) / (2 * w.K),
        plug_in=math.fsum(plug_in_terms) / (2 * w.K),
        atoms=atoms,
    )


def population_risk(w: DiscreteWorld, h: ArrayLike) -> float:
    """R(h) = (1/2K) sum_a E[Y - h(S) | A = a]^2."""
    h = _check_h(w, h)
    r = w.cond_pmf @ (w.outcome_mean - h)
    return float(np.sum(r**2) / (2 * w.K))


def residual_variances(w: DiscreteWorld, h: ArrayLike) -> NDArray[np.float64]:
    """Var(Y - h(S) | A = a) for every arm."""
    h = _check_h(w, h)
    second = np.empty(w.K)
    first = np.empty(w.K)
    for a in range(w.K):
        residual, prob = _unit_law(w, h, a)
        first[a] = prob @ residual
        second[a] = prob @ residual**2
    return second - first**2


def plug_in_bias(w: DiscreteWorld, h: ArrayLike, n_total: int) -> float:
    """E[plug-in risk] - R(h) = (1/2K) sum_a Var(Y - h | A = a) / n_total for n_total units per arm."""
    if n_total < 1:
        raise InputError(f"n_total must be positive, got {n_total}")
    return float(np.sum(residual_variances(w, h)) / (2 * w.K * n_total))
