from logging import getLogger
from typing import Any, Dict, Optional, Tuple

from pydantic import ValidationError

from core.errors import DataValidationError, InputError
from estimators.config import DebiasConfig, FitConfig, default_configs
from estimators.onestep import ThetaEstimate
from estimators.selector import get_estimator
from harness.config import Dgp, FitRequest
from sampling.datasets import HistoricalDataset, NovelDataset, load_csv
from sampling.simulate import ContinuousDgpParams, ExactIdDgpParams, Simulation, dgp_continuous, dgp_exact_id

logger = getLogger(__name__)


def simulate_dgp(dgp: Dgp, K: int, n: int, n_new: int, seed: int, rep: int = 0, options: Optional[Dict[str, Any]] = None) -> Simulation:
    """
    Draws (D, Dnew, theta*) from one of the two simulation designs.

    Raises:
        InputError: `options` does not fit the design's parameters
    """
    fields = {"K": K, "n": n, "n_new": n_new, "seed": seed, "rep": rep, **(options or {})}
    try:
        if dgp == Dgp.continuous:
            return dgp_continuous(ContinuousDgpParams(**fields))
        return dgp_exact_id(ExactIdDgpParams(**fields))
    except ValidationError as exc:
        raise InputError(f"invalid {dgp.value} DGP parameters: {exc}") from exc


def resolve_configs(n: int, seed: int, fit: Optional[FitConfig], debias: Optional[DebiasConfig]) -> Tuple[FitConfig, DebiasConfig]:
    """Explicit configs win; missing ones fall back to default_configs(n)."""
    default_fit, default_debias = default_configs(n, seed)
    return fit or default_fit, debias or default_debias


def load_pair(request: FitRequest) -> Tuple[HistoricalDataset, NovelDataset]:
    assert request.historical is not None and request.novel is not None
    D = load_csv(request.historical)
    Dnew = load_csv(request.novel)
    if not isinstance(D, HistoricalDataset):
        raise DataValidationError(f"{request.historical} has no arm column")
    if not isinstance(Dnew, NovelDataset):
        raise DataValidationError(f"{request.novel} must hold only s_ columns")
    if Dnew.d != D.d:
        raise DataValidationError(f"novel data has {Dnew.d} surrogate columns, historical data has {D.d}")
    return D, Dnew


def fit_once(request: FitRequest) -> ThetaEstimate:
    """
    Runs one estimator on CSV files or on one simulated dataset.

    Errors from the estimators (contract, state, numerical) propagate unchanged.
    """
    if request.dgp is not None:
        D, Dnew, theta_true = simulate_dgp(request.dgp, request.K, request.n, request.n_new, request.seed, 0, request.dgp_options)
        logger.info(f"Simulated {request.dgp.value} data: K={D.K}, n={D.n}, n_new={Dnew.n_new}, theta*={theta_true:.6f}")
    else:
        D, Dnew = load_pair(request)
        logger.info(f"Loaded {D.N} historical rows over {D.K} arms and {Dnew.n_new} novel rows")
    fit_cfg, debias_cfg = resolve_configs(D.n, request.seed, request.fit, request.debias)
    estimate = get_estimator(request.estimator)(D, Dnew, fit_cfg, debias_cfg, request.seed, request.level)
    logger.info(f"{request.estimator}: theta={estimate.theta:.6f} (se {estimate.se:.4f})")
    return estimate
