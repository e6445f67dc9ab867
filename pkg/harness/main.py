import json
import logging
from functools import wraps
from pathlib import Path
from typing import Annotated, Any, Callable, Dict, Optional

import numpy as np
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler

from core.errors import InputError, NpivError, NumericalError
from estimators.selector import get_available_estimators
from harness.checks import run_checks
from harness.config import CheckConfig, Dgp, FitRequest, SweepConfig
from harness.fit import fit_once, simulate_dgp
from harness.settings import get_settings
from harness.sweep import run_sweep
from sampling.datasets import write_csv

logger = logging.getLogger(__name__)

app = typer.Typer(name="npjive", help="npJIVE surrogate-index estimation: simulate, fit, sweep and oracle checks.", add_completion=False)

ConfigOption = Annotated[Optional[Path], typer.Option("--config", help="JSON file with the command's settings")]
SeedOption = Annotated[Optional[int], typer.Option("--seed", help="Master seed")]
OutOption = Annotated[Optional[Path], typer.Option("--out", help="Output file or directory")]
WorkersOption = Annotated[Optional[int], typer.Option("--workers", help="Parallel workers, -1 for every core")]
LogLevelOption = Annotated[Optional[str], typer.Option("--log-level", help="DEBUG, INFO, WARNING or ERROR")]


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)],
        force=True,
    )


def exit_on_error(fn: Callable[..., None]) -> Callable[..., None]:
    """Maps library errors to exit codes: 2 for input, state and contract errors, 3 for numerical ones (including raw LinAlgErrors)."""

    @wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            fn(*args, **kwargs)
        except NpivError as exc:
            logger.error(f"{type(exc).__name__}: {exc}")
            raise typer.Exit(code=exc.exit_code) from exc
        except ValidationError as exc:
            logger.error(f"Invalid configuration: {exc}")
            raise typer.Exit(code=InputError.exit_code) from exc
        except np.linalg.LinAlgError as exc:
            logger.error(f"NumericalError: {exc}")
            raise typer.Exit(code=NumericalError.exit_code) from exc

    return wrapper


def load_config(path: Optional[Path], model: type, overrides: Dict[str, Any]) -> Any:
    """Reads the JSON config (if any) and applies the command-line flags that were given."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    return model.model_validate(data)


def _start(log_level: Optional[str]) -> None:
    setup_logging(log_level or get_settings().log_level)


######################################################
## Simulate a dataset
######################################################


@app.command()
@exit_on_error
def simulate(
    dgp: Annotated[Dgp, typer.Option("--dgp")] = Dgp.continuous,
    K: Annotated[int, typer.Option("-K", "--arms")] = 100,
    n: Annotated[int, typer.Option("-n", "--units")] = 30,
    n_new: Annotated[int, typer.Option("--n-new")] = 500,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    log_level: LogLevelOption = None,
) -> None:
    """Writes historical.csv and novel.csv and prints theta* as a JSON line."""
    _start(log_level)
    options: Dict[str, Any] = {}
    if config is not None:
        options = load_config(config, FitRequest, {"dgp": dgp.value}).dgp_options
    out_dir = out or get_settings().out_dir
    D, Dnew, theta = simulate_dgp(dgp, K, n, n_new, seed or 0, 0, options)
    historical = write_csv(D, out_dir / "historical.csv")
    novel = write_csv(Dnew, out_dir / "novel.csv")
    logger.info(f"Wrote {historical} and {novel}")
    typer.echo(json.dumps({"dgp": dgp.value, "K": K, "n": n, "n_new": n_new, "theta_star": theta, "historical": str(historical), "novel": str(novel)}))


######################################################
## Fit one estimator
######################################################


@app.command()
@exit_on_error
def fit(
    estimator: Annotated[Optional[str], typer.Option("--estimator", help=f"One of {', '.join(get_available_estimators())}")] = None,
    historical: Annotated[Optional[Path], typer.Option("--historical")] = None,
    novel: Annotated[Optional[Path], typer.Option("--novel")] = None,
    dgp: Annotated[Optional[Dgp], typer.Option("--dgp")] = None,
    K: Annotated[Optional[int], typer.Option("-K", "--arms")] = None,
    n: Annotated[Optional[int], typer.Option("-n", "--units")] = None,
    n_new: Annotated[Optional[int], typer.Option("--n-new")] = None,
    level: Annotated[Optional[float], typer.Option("--level")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    log_level: LogLevelOption = None,
) -> None:
    """Prints the estimate, its variance components and nuisance provenance as a JSON line."""
    _start(log_level)
    overrides = {
        "estimator": estimator,
        "historical": historical,
        "novel": novel,
        "dgp": dgp.value if dgp is not None else None,
        "K": K,
        "n": n,
        "n_new": n_new,
        "level": level,
        "seed": seed,
    }
    request = load_config(config, FitRequest, overrides)
    line = fit_once(request).model_dump_json()
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(line + "\n", encoding="utf-8")
    typer.echo(line)


######################################################
## Monte Carlo sweep
######################################################


@app.command()
@exit_on_error
def sweep(
    svg: Annotated[Optional[Path], typer.Option("--svg", help="Also render MSE / bias^2 / variance against K")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    workers: WorkersOption = None,
    log_level: LogLevelOption = None,
) -> None:
    """Writes the summary CSV and the per-replication CSV next to it."""
    _start(log_level)
    settings = get_settings()
    cfg: SweepConfig = load_config(config, SweepConfig, {"seed": seed, "out": out})
    summary = run_sweep(cfg, workers=workers if workers is not None else settings.workers, float_format=settings.float_format)
    if svg is not None:
        from harness.plots import render_svg

        render_svg(summary, svg)
    typer.echo(json.dumps({"summary": str(cfg.out), "rows": len(summary), "failures": int(summary["failures"].sum())}))


######################################################
## Oracle checks
######################################################


@app.command("oracle-check")
@exit_on_error
def oracle_check(
    worlds: Annotated[Optional[int], typer.Option("--worlds", min=1, help="Worlds per check (default 50)")] = None,
    id_worlds: Annotated[Optional[int], typer.Option("--id-worlds", min=1, help="Worlds for identification equivalence (default 1000)")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    log_level: LogLevelOption = None,
) -> None:
    """Runs the exact-world checks and prints a JSON report; a failed check is a numerical error (exit code 3)."""
    _start(log_level)
    cfg: CheckConfig = load_config(config, CheckConfig, {"worlds": worlds, "id_worlds": id_worlds, "seed": seed})
    report = run_checks(cfg.worlds, cfg.seed, cfg.id_worlds)
    line = json.dumps({**report.model_dump(), "passed": report.passed})
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(line + "\n", encoding="utf-8")
    typer.echo(line)
    if not report.passed:
        failed = [check.name for check in report.checks if not check.passed]
        raise NumericalError(f"exact identities violated beyond tolerance: {failed}")


if __name__ == "__main__":
    app()
