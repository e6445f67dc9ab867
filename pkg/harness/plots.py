from logging import getLogger
from pathlib import Path
from typing import Union

import pandas as pd

from core.errors import InputError

logger = getLogger(__name__)

METRICS = ("mse", "bias_sq", "variance")


def render_svg(summary: Union[pd.DataFrame, str, Path], path: Union[str, Path]) -> Path:
    """
    MSE, squared bias and variance against K on log-log axes, one panel per n.

    Needs the optional `plot` extra (matplotlib).
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise InputError("SVG output needs matplotlib: pip install 'npjive-surrogates[plot]'") from exc

    frame = summary if isinstance(summary, pd.DataFrame) else pd.read_csv(summary)
    if frame.empty:
        raise InputError("summary table is empty")
    sizes = sorted(frame["n"].unique())
    fig, axes = plt.subplots(len(METRICS), len(sizes), figsize=(4 * len(sizes), 3 * len(METRICS)), squeeze=False)
    for col, n in enumerate(sizes):
        panel = frame[frame["n"] == n]
        for row, metric in enumerate(METRICS):
            ax = axes[row][col]
            for name, group in panel.groupby("estimator", sort=False):
                group = group.sort_values("K")
                ax.loglog(group["K"], group[metric], marker="o", label=str(name))
            ax.set_xlabel("K")
            ax.set_ylabel(metric)
            ax.set_title(f"n={n}")
    axes[0][0].legend(fontsize="small")
    fig.tight_layout()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg")
    plt.close(fig)
    logger.info(f"Wrote {out}")
    return out
