from enum import Enum
from logging import getLogger
from typing import Callable, Dict, List, Union

from core.errors import InputError
from estimators.config import DebiasConfig, FitConfig
from estimators.debias import fit_debias_exact, fit_q_approx
from estimators.npjive import fit_npjive, fit_plugin, fit_pooled_regression
from estimators.onestep import ThetaEstimate, one_step_theta, pair_folds
from sampling.datasets import HistoricalDataset, NovelDataset, assign_folds

logger = getLogger(__name__)

Estimator = Callable[[HistoricalDataset, NovelDataset, FitConfig, DebiasConfig, int, float], ThetaEstimate]


class EstimatorType(Enum):
    PLUGIN_MD = "plugin-md"
    NPJIVE = "npjive"
    ONESTEP_EXACT = "npjive+onestep-exact"
    ONESTEP_APPROX = "npjive+onestep-approx"
    POOLED_REGRESSION = "pooled-regression-baseline"


def get_available_estimators() -> List[str]:
    """Returns a list of all available estimator IDs."""
    return [estimator.value for estimator in EstimatorType]


def _plugin_md(D: HistoricalDataset, Dnew: NovelDataset, fit_cfg: FitConfig, debias_cfg: DebiasConfig, seed: int, level: float) -> ThetaEstimate:
    h = fit_plugin(D, fit_cfg, Dnew)
    return one_step_theta(h, None, D, Dnew, None, level=level, estimator=EstimatorType.PLUGIN_MD.value)


def _pooled_regression(
    D: HistoricalDataset, Dnew: NovelDataset, fit_cfg: FitConfig, debias_cfg: DebiasConfig, seed: int, level: float
) -> ThetaEstimate:
    h = fit_pooled_regression(D, fit_cfg, Dnew)
    return one_step_theta(h, None, D, Dnew, None, level=level, estimator=EstimatorType.POOLED_REGRESSION.value)


def _npjive(D: HistoricalDataset, Dnew: NovelDataset, fit_cfg: FitConfig, debias_cfg: DebiasConfig, seed: int, level: float) -> ThetaEstimate:
    D2 = assign_folds(D, 2, seed)
    h = fit_npjive(D2, fit_cfg, Dnew)
    return one_step_theta(h, None, D2, Dnew, None, level=level, estimator=EstimatorType.NPJIVE.value)


def _onestep(approx: bool) -> Estimator:
    name = EstimatorType.ONESTEP_APPROX.value if approx else EstimatorType.ONESTEP_EXACT.value

    def estimate(D: HistoricalDataset, Dnew: NovelDataset, fit_cfg: FitConfig, debias_cfg: DebiasConfig, seed: int, level: float) -> ThetaEstimate:
        D4 = assign_folds(D, 4, seed)
        h = fit_npjive(D4, fit_cfg, Dnew)
        debias = fit_q_approx(D4, Dnew, debias_cfg) if approx else fit_debias_exact(D4, Dnew, debias_cfg)
        return one_step_theta(h, debias, D4, Dnew, pair_folds(D4, seed), level=level, estimator=name)

    return estimate


_ESTIMATORS: Dict[EstimatorType, Estimator] = {
    EstimatorType.PLUGIN_MD: _plugin_md,
    EstimatorType.NPJIVE: _npjive,
    EstimatorType.ONESTEP_EXACT: _onestep(approx=False),
    EstimatorType.ONESTEP_APPROX: _onestep(approx=True),
    EstimatorType.POOLED_REGRESSION: _pooled_regression,
}


def get_estimator(estimator_id: Union[EstimatorType, str]) -> Estimator:
    """
    Estimator callable (D, Dnew, fit_cfg, debias_cfg, seed, level) -> ThetaEstimate.

    Fold-based estimators split D themselves with `seed`; the seed also drives the fold pairing.

    Raises:
        InputError: unknown estimator id
    """
    if isinstance(estimator_id, str):
        try:
            estimator_id = EstimatorType(estimator_id)
        except ValueError:
            raise InputError(f"Unknown estimator: {estimator_id}; available: {', '.join(get_available_estimators())}") from None
    logger.debug(f"Selected estimator {estimator_id.value}")
    return _ESTIMATORS[estimator_id]
