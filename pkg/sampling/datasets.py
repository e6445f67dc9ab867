"""
Data model for the many-arm historical experiments and the novel arm.

Historical rows carry an arm index A in 0..K-1 (canonicalized from whatever
labels the file used) and, once assigned, a fold label V. Every arm holds
exactly n rows and, after fold assignment, every arm-fold cell the same number.
"""

from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from core.errors import DataValidationError, InputError, StateError
from core.rng import stream

logger = getLogger(__name__)

UNASSIGNED = -1
ALLOWED_FOLDS = (2, 4)


def _frozen(arr: NDArray[Any]) -> NDArray[Any]:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


def _as_matrix(S: ArrayLike) -> NDArray[np.float64]:
    arr = np.asarray(S, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DataValidationError(f"S must be a matrix of shape (rows, d), got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class HistoricalDataset:
    """N = n * K observations (A_i, S_i, Y_i) with optional fold labels V_i."""

    S: NDArray[np.float64]
    Y: NDArray[np.float64]
    A: NDArray[np.int64]
    K: int
    n: int
    V: Optional[NDArray[np.int64]] = None
    arm_labels: Tuple[Any, ...] = ()
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        S = _as_matrix(self.S)
        Y = np.asarray(self.Y, dtype=np.float64).reshape(-1)
        A = np.asarray(self.A).reshape(-1).astype(np.int64)
        N = S.shape[0]
        if N == 0:
            raise DataValidationError("no rows")
        if Y.shape[0] != N or A.shape[0] != N:
            raise DataValidationError(f"S, Y and A disagree on the number of rows ({N}, {Y.shape[0]}, {A.shape[0]})")
        if N != self.n * self.K:
            raise DataValidationError(f"{N} rows but K={self.K} arms of n={self.n} units")
        bad = np.flatnonzero(~np.isfinite(Y) | ~np.all(np.isfinite(S), axis=1))
        if bad.size:
            raise DataValidationError(f"row {int(bad[0])} has non-finite values")
        if A.min() < 0 or A.max() >= self.K:
            raise DataValidationError(f"arm indices must lie in 0..{self.K - 1}")
        counts = np.bincount(A, minlength=self.K)
        for a, count in enumerate(counts):
            if count != self.n:
                raise DataValidationError(f"arm {self.label_of(a)} has {count} units, expected {self.n}")
        object.__setattr__(self, "S", _frozen(S))
        object.__setattr__(self, "Y", _frozen(Y))
        object.__setattr__(self, "A", _frozen(A))
        if self.V is not None:
            V = np.asarray(self.V).reshape(-1).astype(np.int64)
            if V.shape[0] != N:
                raise DataValidationError(f"{V.shape[0]} fold labels for {N} rows")
            object.__setattr__(self, "V", _frozen(V))
        if not self.arm_labels:
            object.__setattr__(self, "arm_labels", tuple(range(self.K)))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def N(self) -> int:
        return int(self.S.shape[0])

    @property
    def d(self) -> int:
        return int(self.S.shape[1])

    @property
    def num_folds(self) -> int:
        if self.V is None or np.all(self.V == UNASSIGNED):
            return 0
        return int(self.V.max()) + 1

    def label_of(self, a: int) -> Any:
        return self.arm_labels[a] if a < len(self.arm_labels) else a

    def require_folds(self, folds: Iterable[int]) -> NDArray[np.bool_]:
        """
        Mask of rows in `folds`, checking that the labels exist and every arm-fold cell is equal.

        Raises:
            StateError: fold labels are missing or cells are unequal
        """
        folds = tuple(folds)
        if self.V is None or self.num_folds == 0:
            raise StateError("dataset has no fold labels; call assign_folds first")
        missing = [v for v in folds if v >= self.num_folds or v < 0]
        if missing:
            raise StateError(f"dataset has {self.num_folds} folds, folds {missing} are not present")
        sizes = cell_sizes(self)
        used = sizes[:, list(folds)]
        if used.size and (used.min() != used.max() or used.min() == 0):
            raise StateError(f"arm-fold cells for folds {folds} are not of equal positive size")
        return np.isin(self.V, folds)

    def with_folds(self, V: ArrayLike) -> "HistoricalDataset":
        return HistoricalDataset(
            S=self.S, Y=self.Y, A=self.A, K=self.K, n=self.n, V=np.asarray(V), arm_labels=self.arm_labels, metadata=self.metadata
        )


@dataclass(frozen=True)
class NovelDataset:
    """n' draws of the short-term outcomes under the novel treatment."""

    S_new: NDArray[np.float64]
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        S = _as_matrix(self.S_new)
        if S.shape[0] < 1:
            raise DataValidationError("no rows")
        bad = np.flatnonzero(~np.all(np.isfinite(S), axis=1))
        if bad.size:
            raise DataValidationError(f"row {int(bad[0])} has non-finite values")
        object.__setattr__(self, "S_new", _frozen(S))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n_new(self) -> int:
        return int(self.S_new.shape[0])

    @property
    def d(self) -> int:
        return int(self.S_new.shape[1])


@dataclass(frozen=True)
class FoldPlan:
    """The per-arm permutations behind a fold assignment."""

    num_folds: int
    seed: int
    permutations: Tuple[NDArray[np.int64], ...]
    dropped: Tuple[int, ...] = ()


def cell_sizes(D: HistoricalDataset) -> NDArray[np.int64]:
    """(K, num_folds) counts of rows per arm-fold cell."""
    if D.V is None or D.num_folds == 0:
        return np.zeros((D.K, 0), dtype=np.int64)
    sizes = np.zeros((D.K, D.num_folds), dtype=np.int64)
    keep = D.V >= 0
    np.add.at(sizes, (D.A[keep], D.V[keep]), 1)
    return sizes


def cell_means(values: ArrayLike, D: HistoricalDataset, fold: Optional[Union[int, Tuple[int, ...]]] = None) -> NDArray[np.float64]:
    """
    Per-arm means of `values` (one entry or row per historical row).

    Args:
        values: (N,) or (N, L) array aligned with the rows of D
        D: the dataset
        fold: restrict to one fold, a tuple of folds, or None for all rows

    Returns:
        (K,) or (K, L) array of arm means
    """
    vals = np.asarray(values, dtype=np.float64)
    if fold is None:
        mask = np.ones(D.N, dtype=bool)
    else:
        folds = (fold,) if isinstance(fold, (int, np.integer)) else tuple(fold)
        mask = D.require_folds(folds)
    sums = np.zeros((D.K,) + vals.shape[1:], dtype=np.float64)
    np.add.at(sums, D.A[mask], vals[mask])
    counts = np.bincount(D.A[mask], minlength=D.K).astype(np.float64)
    return sums / counts.reshape((-1,) + (1,) * (vals.ndim - 1))


def plan_folds(D: HistoricalDataset, num_folds: int, seed: int) -> FoldPlan:
    if num_folds not in ALLOWED_FOLDS:
        raise InputError(f"num_folds must be one of {ALLOWED_FOLDS}, got {num_folds}")
    perms = []
    dropped = []
    drop = D.n % num_folds
    for a in range(D.K):
        rows = np.flatnonzero(D.A == a)
        perm = rows[stream(seed, a).permutation(rows.shape[0])]
        perms.append(perm)
        dropped.extend(int(i) for i in perm[D.n - drop :])
    return FoldPlan(num_folds=num_folds, seed=seed, permutations=tuple(perms), dropped=tuple(sorted(dropped)))


def assign_folds(D: HistoricalDataset, num_folds: int, seed: int) -> HistoricalDataset:
    """
    Splits every arm into `num_folds` folds of identical size.

    Within each arm a seeded uniform permutation puts the first n/num_folds
    units in fold 0, the next in fold 1, and so on. When n is not divisible
    by num_folds, n mod num_folds units per arm are dropped at random.

    Returns:
        a new dataset with fold labels (and possibly fewer rows)
    """
    plan = plan_folds(D, num_folds, seed)
    kept_per_arm = D.n - D.n % num_folds
    if kept_per_arm == 0:
        raise InputError(f"arms of {D.n} units cannot be split into {num_folds} folds")
    if plan.dropped:
        logger.warning(
            f"n={D.n} is not divisible by {num_folds}: dropping {D.n % num_folds} unit(s) per arm ({len(plan.dropped)} rows)"
        )
    cell = kept_per_arm // num_folds
    V = np.full(D.N, UNASSIGNED, dtype=np.int64)
    for perm in plan.permutations:
        V[perm[:kept_per_arm]] = np.arange(kept_per_arm) // cell
    keep = V != UNASSIGNED
    return HistoricalDataset(
        S=D.S[keep],
        Y=D.Y[keep],
        A=D.A[keep],
        K=D.K,
        n=kept_per_arm,
        V=V[keep],
        arm_labels=D.arm_labels,
        metadata={**D.metadata, "num_folds": num_folds, "fold_seed": seed},
    )


def _s_columns(columns: Iterable[str]) -> Tuple[str, ...]:
    s_cols = sorted((c for c in columns if c.startswith("s_")), key=lambda c: int(c[2:]) if c[2:].isdigit() else -1)
    expected = [f"s_{j}" for j in range(len(s_cols))]
    if not s_cols or list(s_cols) != expected:
        raise DataValidationError(f"expected columns s_0..s_{{d-1}}, found {sorted(columns)}")
    return tuple(s_cols)


def load_csv(path: Union[str, Path]) -> Union[HistoricalDataset, NovelDataset]:
    """
    Reads a historical (`arm, y, s_0..s_{d-1}` [, `fold`]) or novel (`s_0..s_{d-1}`) CSV file.

    Raises:
        DataValidationError: empty file, missing or non-numeric fields, unequal arm sizes
    """
    try:
        frame = pd.read_csv(path, encoding="utf-8", skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise DataValidationError("no rows") from exc
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise DataValidationError(f"cannot read {path}: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    if frame.shape[0] == 0:
        raise DataValidationError("no rows")
    s_cols = _s_columns(frame.columns)
    numeric_cols = list(s_cols) + (["y"] if "arm" in frame.columns else [])
    if "arm" in frame.columns and "y" not in frame.columns:
        raise DataValidationError("historical file needs a 'y' column")
    numeric = frame[numeric_cols].apply(pd.to_numeric, errors="coerce")
    missing = numeric.isna().any(axis=1).to_numpy()
    if "arm" in frame.columns:
        missing |= frame["arm"].isna().to_numpy()
    if missing.any():
        raise DataValidationError(f"row {int(np.flatnonzero(missing)[0])} has missing values")
    S = numeric[list(s_cols)].to_numpy(dtype=np.float64)
    if "arm" not in frame.columns:
        return NovelDataset(S_new=S, metadata={"source": str(path)})

    codes, labels = pd.factorize(frame["arm"], sort=True)
    counts = np.bincount(codes, minlength=len(labels))
    expected = int(counts[0])
    for a, count in enumerate(counts):
        if count != expected:
            raise DataValidationError(f"arm {labels[a]} has {count} units, expected {expected}")
    V = None
    if "fold" in frame.columns:
        fold = pd.to_numeric(frame["fold"], errors="coerce")
        if fold.isna().any():
            raise DataValidationError(f"row {int(np.flatnonzero(fold.isna().to_numpy())[0])} has missing values")
        V = fold.to_numpy(dtype=np.int64)
    label_tuple = tuple(lbl.item() if hasattr(lbl, "item") else lbl for lbl in labels)
    logger.debug(f"Loaded {frame.shape[0]} historical rows over {len(labels)} arms from {path}")
    return HistoricalDataset(
        S=S,
        Y=numeric["y"].to_numpy(dtype=np.float64),
        A=codes.astype(np.int64),
        K=len(labels),
        n=expected,
        V=V,
        arm_labels=label_tuple,
        metadata={"source": str(path)},
    )


def write_csv(data: Union[HistoricalDataset, NovelDataset], path: Union[str, Path]) -> Path:
    """Writes a dataset in the format `load_csv` reads."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, NovelDataset):
        frame = pd.DataFrame({f"s_{j}": data.S_new[:, j] for j in range(data.d)})
    else:
        columns: Dict[str, Any] = {"arm": [data.label_of(int(a)) for a in data.A], "y": data.Y}
        columns.update({f"s_{j}": data.S[:, j] for j in range(data.d)})
        if data.V is not None:
            columns["fold"] = data.V
        frame = pd.DataFrame(columns)
    frame.to_csv(out, index=False, float_format="%.17g", encoding="utf-8")
    return out
