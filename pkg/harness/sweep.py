"""
Monte Carlo sweeps: for every (K, n) grid point and replication, simulate once,
run every requested estimator on the same draw and aggregate the errors.
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from logging import getLogger
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from core.errors import NpivError, NumericalError
from core.rng import derive_seed
from estimators.selector import get_estimator
from harness.config import McRow, ReplicationRow, SweepConfig
from harness.fit import resolve_configs, simulate_dgp

logger = getLogger(__name__)

SUMMARY_COLUMNS = list(McRow.model_fields)
REPLICATION_COLUMNS = list(ReplicationRow.model_fields)

Task = Tuple[int, int, int]


def replication_seed(cfg: SweepConfig, K: int, n: int) -> int:
    """Simulation seed of a grid point; replications differ by `rep`, so every draw has its own stream."""
    return derive_seed(cfg.seed, K, n)


def error_code(exc: Exception) -> str:
    """Value of the error column; raw linear-algebra failures count as numerical errors."""
    if isinstance(exc, np.linalg.LinAlgError):
        return NumericalError.__name__
    return type(exc).__name__


def run_replication(cfg: SweepConfig, K: int, n: int, rep: int) -> List[ReplicationRow]:
    """Simulates one dataset and runs every estimator on it. Library and linear-algebra errors become error rows."""
    seed = replication_seed(cfg, K, n)
    try:
        D, Dnew, theta_true = simulate_dgp(cfg.dgp, K, n, cfg.n_new, seed, rep, cfg.dgp_options)
    except (NpivError, np.linalg.LinAlgError) as exc:
        logger.warning(f"Simulation failed at K={K}, n={n}, rep={rep}: {exc}")
        return [ReplicationRow(estimator=e, K=K, n=n, rep=rep, theta_true=float("nan"), error=error_code(exc)) for e in cfg.estimators]

    fit_cfg, debias_cfg = resolve_configs(n, derive_seed(seed, rep), cfg.fit, cfg.debias)
    fold_seed = derive_seed(seed, rep, 1)
    rows = []
    for name in cfg.estimators:
        start = time.perf_counter()
        try:
            estimate = get_estimator(name)(D, Dnew, fit_cfg, debias_cfg, fold_seed, cfg.level)
        except (NpivError, np.linalg.LinAlgError) as exc:
            logger.warning(f"{name} failed at K={K}, n={n}, rep={rep}: {exc}")
            rows.append(ReplicationRow(estimator=name, K=K, n=n, rep=rep, theta_true=theta_true, error=error_code(exc)))
            continue
        runtime_ms = 1e3 * (time.perf_counter() - start) if cfg.record_timing else 0.0
        rows.append(
            ReplicationRow(
                estimator=name,
                K=K,
                n=n,
                rep=rep,
                theta=estimate.theta,
                theta_true=theta_true,
                se=estimate.se,
                ci_low=estimate.ci_low,
                ci_high=estimate.ci_high,
                runtime_ms=runtime_ms,
            )
        )
    return rows


def _resolve_workers(workers: int) -> int:
    return (os.cpu_count() or 1) if workers == -1 else max(workers, 1)


def run_replications(cfg: SweepConfig, workers: int = 1) -> List[ReplicationRow]:
    """Every replication of the sweep, sorted by (estimator, K, n, rep) whatever the scheduling."""
    tasks: List[Task] = [(K, n, rep) for K in cfg.K_grid for n in cfg.n_grid for rep in range(cfg.R)]
    workers = _resolve_workers(workers)
    results: Dict[Task, List[ReplicationRow]] = {}
    if workers == 1:
        for i, task in enumerate(tasks):
            results[task] = run_replication(cfg, *task)
            _log_progress(i + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(run_replication, cfg, *task): task for task in tasks}
            for i, future in enumerate(as_completed(futures)):
                results[futures[future]] = future.result()
                _log_progress(i + 1, len(tasks))
    rows = [row for task in sorted(results) for row in results[task]]
    order = {name: i for i, name in enumerate(cfg.estimators)}
    return sorted(rows, key=lambda r: (order[r.estimator], r.K, r.n, r.rep))


def _log_progress(done: int, total: int) -> None:
    if done == total or done % max(total // 10, 1) == 0:
        logger.info(f"Replications: {done}/{total}")


def summarize(rows: List[ReplicationRow], cfg: SweepConfig) -> List[McRow]:
    """
    Moments of theta - theta* over the successful replications of each (estimator, K, n).

    variance has no degrees-of-freedom correction, so mse = bias^2 + variance.
    """
    groups: Dict[Tuple[str, int, int], List[ReplicationRow]] = {}
    for row in rows:
        groups.setdefault((row.estimator, row.K, row.n), []).append(row)
    summary = []
    for (name, K, n), group in groups.items():
        ok = [r for r in group if not r.error]
        truths = [r.theta_true for r in group if np.isfinite(r.theta_true)]
        theta_true = truths[0] if truths else float("nan")
        if ok:
            errors = np.array([r.theta for r in ok]) - np.array([r.theta_true for r in ok])
            bias = float(errors.mean())
            variance = float(np.mean((errors - bias) ** 2))
            sq = errors**2
            mse = float(sq.mean())
            mean_se = float(np.mean([r.se for r in ok]))
            coverage = float(np.mean([r.ci_low <= r.theta_true <= r.ci_high for r in ok]))  # type: ignore[operator]
            median_sq = float(np.median(sq))
            runtime = float(np.mean([r.runtime_ms for r in ok]))
        else:
            bias = variance = mse = mean_se = coverage = median_sq = runtime = float("nan")
        summary.append(
            McRow(
                estimator=name,
                K=K,
                n=n,
                n_new=cfg.n_new,
                R=cfg.R,
                theta_true=theta_true,
                bias=bias,
                bias_sq=bias**2,
                variance=variance,
                mse=mse,
                mean_se=mean_se,
                coverage95=coverage if ok else 0.0,
                mean_runtime_ms=runtime,
                failures=len(group) - len(ok),
                median_sq_error=median_sq,
            )
        )
    return summary


def replications_path(out: Path) -> Path:
    return out.with_name(f"{out.stem}.replications.csv")


def _write(frame: pd.DataFrame, path: Path, float_format: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=float_format, encoding="utf-8", lineterminator="\n")


def run_sweep(cfg: SweepConfig, workers: int = 1, out: Optional[Path] = None, float_format: str = "%.17g") -> pd.DataFrame:
    """
    Runs the sweep and writes the summary CSV plus `<stem>.replications.csv` next to it.

    Replication failures (any NpivError or LinAlgError) are recorded with their
    error code and excluded from the moments; other exceptions abort the sweep.

    Returns:
        the summary table
    """
    out = Path(out or cfg.out)
    logger.info(
        f"Sweep: dgp={cfg.dgp.value}, K={cfg.K_grid}, n={cfg.n_grid}, R={cfg.R}, estimators={cfg.estimators}, workers={workers}"
    )
    rows = run_replications(cfg, workers)
    summary = pd.DataFrame([row.model_dump() for row in summarize(rows, cfg)], columns=SUMMARY_COLUMNS)
    replications = pd.DataFrame([row.model_dump() for row in rows], columns=REPLICATION_COLUMNS)
    _write(summary, out, float_format)
    _write(replications, replications_path(out), float_format)
    failures = int(summary["failures"].sum())
    if failures:
        logger.warning(f"{failures} replication(s) failed; see {replications_path(out)}")
    logger.info(f"Wrote {len(summary)} summary rows to {out}")
    return summary
