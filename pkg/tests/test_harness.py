import json

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from typer.testing import CliRunner

from core.errors import InputError, NumericalError
from estimators.selector import EstimatorType, get_available_estimators, get_estimator
from harness.checks import CheckReport, CheckResult, run_checks
from harness.config import FitRequest, SweepConfig
from harness.fit import fit_once
from harness.main import app
from harness.settings import get_settings
from harness.sweep import replications_path, run_sweep

SAFE = {"lambda": 0.5}

runner = CliRunner()


def _json_line(output: str) -> dict:
    return json.loads([line for line in output.splitlines() if line.startswith("{")][-1])


def _sweep_config(tmp_path, **kwargs) -> SweepConfig:
    fields = dict(
        dgp="continuous",
        K=[4],
        n=[8],
        n_new=20,
        R=3,
        estimators=["plugin-md", "npjive+onestep-exact"],
        fit=SAFE,
        debias=SAFE,
        out=tmp_path / "summary.csv",
    )
    fields.update(kwargs)
    return SweepConfig.model_validate(fields)


def test_available_estimators():
    assert get_available_estimators() == [
        "plugin-md",
        "npjive",
        "npjive+onestep-exact",
        "npjive+onestep-approx",
        "pooled-regression-baseline",
    ]
    assert get_estimator("npjive") is get_estimator(EstimatorType.NPJIVE)
    with pytest.raises(InputError):
        get_estimator("two-stage-least-squares")


def test_sweep_config_validation(tmp_path):
    with pytest.raises(ValidationError):
        _sweep_config(tmp_path, R=0)
    with pytest.raises(ValidationError):
        _sweep_config(tmp_path, K=[])
    with pytest.raises(ValidationError):
        _sweep_config(tmp_path, estimators=["unknown"])


def test_fit_request_needs_one_source():
    with pytest.raises(ValidationError):
        FitRequest(estimator="npjive")
    with pytest.raises(ValidationError):
        FitRequest(estimator="npjive", historical="a.csv")


@pytest.mark.parametrize("estimator", get_available_estimators())
def test_fit_once_on_simulated_data(estimator):
    request = FitRequest(estimator=estimator, dgp="continuous", K=10, n=8, n_new=30, seed=2, fit=SAFE, debias=SAFE)
    estimate = fit_once(request)
    assert estimate.estimator == estimator
    assert estimate.ci_low <= estimate.theta <= estimate.ci_high
    assert estimate.provenance["h"]


def test_onestep_provenance_excludes_evaluation_folds():
    request = FitRequest(estimator="npjive+onestep-exact", dgp="exact-id", K=10, n=8, n_new=30, fit=SAFE, debias=SAFE)
    estimate = fit_once(request)
    assert estimate.provenance == {"h": [0, 1], "debias": [0, 1]}
    assert estimate.sigma2_sq > 0


def test_sweep_summary(tmp_path):
    cfg = _sweep_config(tmp_path)
    summary = run_sweep(cfg)
    assert list(summary.columns) == [
        "estimator",
        "K",
        "n",
        "n_new",
        "R",
        "theta_true",
        "bias",
        "bias_sq",
        "variance",
        "mse",
        "mean_se",
        "coverage95",
        "mean_runtime_ms",
        "failures",
        "median_sq_error",
    ]
    assert len(summary) == 2
    np.testing.assert_allclose(summary["mse"], summary["bias_sq"] + summary["variance"], atol=1e-10)
    assert summary["coverage95"].between(0, 1).all()
    assert (summary["failures"] == 0).all()
    replications = pd.read_csv(replications_path(cfg.out))
    assert len(replications) == 2 * cfg.R
    assert list(replications["rep"][: cfg.R]) == list(range(cfg.R))


def test_single_replication_gives_single_row(tmp_path):
    summary = run_sweep(_sweep_config(tmp_path, R=1, estimators=["plugin-md"]))
    assert len(summary) == 1


def test_sweep_is_deterministic(tmp_path):
    first = _sweep_config(tmp_path, out=tmp_path / "a.csv")
    second = _sweep_config(tmp_path, out=tmp_path / "b.csv")
    run_sweep(first)
    run_sweep(second, workers=2)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert replications_path(first.out).read_bytes() == replications_path(second.out).read_bytes()


def test_sweep_records_failures(tmp_path):
    cfg = _sweep_config(tmp_path, estimators=["plugin-md"], fit={"lambda": 0.5, "L": 10_000})
    summary = run_sweep(cfg)
    assert summary.loc[0, "failures"] == cfg.R
    replications = pd.read_csv(replications_path(cfg.out))
    assert (replications["error"] == "InputError").all()


def test_oracle_checks_pass():
    report = run_checks(worlds=4, seed=1)
    assert report.passed
    assert {check.name for check in report.checks} == {
        "crossfold-unbiased",
        "plug-in-bias",
        "id-equiv",
        "mixed-bias",
        "approximate-id",
    }


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("NPJIVE_WORKERS", "3")
    monkeypatch.setenv("NPJIVE_LOG_LEVEL", "debug")
    settings = get_settings()
    assert settings.workers == 3
    assert settings.log_level == "DEBUG"


def test_cli_simulate_then_fit(tmp_path):
    result = runner.invoke(app, ["simulate", "--dgp", "exact-id", "-K", "6", "-n", "8", "--n-new", "20", "--out", str(tmp_path), "--log-level", "WARNING"])
    assert result.exit_code == 0, result.output
    simulated = _json_line(result.stdout)
    assert np.isfinite(simulated["theta_star"])

    args = ["fit", "--estimator", "plugin-md", "--historical", simulated["historical"], "--novel", simulated["novel"], "--log-level", "WARNING"]
    first = runner.invoke(app, args)
    assert first.exit_code == 0, first.output
    estimate = _json_line(first.stdout)
    assert estimate["estimator"] == "plugin-md"
    assert estimate["sigma2_sq"] == 0.0
    second = runner.invoke(app, args)
    assert _json_line(second.stdout) == estimate


def test_cli_fit_with_config(tmp_path):
    config = tmp_path / "fit.json"
    config.write_text(json.dumps({"estimator": "npjive+onestep-exact", "dgp": "continuous", "K": 8, "n": 8, "n_new": 20, "fit": SAFE, "debias": SAFE}))
    result = runner.invoke(app, ["fit", "--config", str(config), "--seed", "4", "--log-level", "WARNING"])
    assert result.exit_code == 0, result.output
    assert _json_line(result.stdout)["provenance"] == {"h": [0, 1], "debias": [0, 1]}


def test_cli_malformed_csv_exits_with_2(tmp_path):
    historical = tmp_path / "historical.csv"
    historical.write_text("arm,y,s_0\n0,1,1\n1,,1\n")
    novel = tmp_path / "novel.csv"
    novel.write_text("s_0\n0.1\n")
    result = runner.invoke(app, ["fit", "--estimator", "plugin-md", "--historical", str(historical), "--novel", str(novel)])
    assert result.exit_code == 2


def test_cli_unknown_estimator_exits_with_2():
    result = runner.invoke(app, ["fit", "--estimator", "nope", "--dgp", "continuous"])
    assert result.exit_code == 2


def test_cli_numerical_error_exits_with_3(monkeypatch):
    def failing_fit(request):
        raise NumericalError("regularized system is not positive definite; increase lambda")

    monkeypatch.setattr("harness.main.fit_once", failing_fit)
    result = runner.invoke(app, ["fit", "--estimator", "npjive", "--dgp", "continuous", "--log-level", "ERROR"])
    assert result.exit_code == 3


def test_cli_sweep(tmp_path):
    config = tmp_path / "sweep.json"
    config.write_text(
        json.dumps({"K": [4], "n": [8], "n_new": 20, "R": 2, "estimators": ["plugin-md"], "fit": SAFE})
    )
    out = tmp_path / "sweep.csv"
    result = runner.invoke(app, ["sweep", "--config", str(config), "--out", str(out), "--workers", "1", "--log-level", "WARNING"])
    assert result.exit_code == 0, result.output
    assert _json_line(result.stdout)["rows"] == 1
    assert out.exists() and replications_path(out).exists()


def test_cli_oracle_check():
    result = runner.invoke(app, ["oracle-check", "--worlds", "3", "--seed", "2", "--log-level", "WARNING"])
    assert result.exit_code == 0, result.output
    assert _json_line(result.stdout)["passed"] is True


def test_render_svg(tmp_path):
    pytest.importorskip("matplotlib")
    from harness.plots import render_svg

    summary = pd.DataFrame(
        {"estimator": ["a", "a"], "K": [10, 100], "n": [30, 30], "mse": [1.0, 0.5], "bias_sq": [0.5, 0.1], "variance": [0.5, 0.4]}
    )
    out = render_svg(summary, tmp_path / "plot.svg")
    assert out.read_text().lstrip().startswith("<?xml")


CROSS_FOLD = ["npjive", "npjive+onestep-exact", "npjive+onestep-approx"]


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("estimator", CROSS_FOLD)
def test_default_settings_fit_the_weak_design(estimator, seed):
    estimate = fit_once(FitRequest(estimator=estimator, dgp="continuous", K=25, n=30, n_new=100, seed=seed))
    assert np.isfinite(estimate.theta) and np.isfinite(estimate.se)


@pytest.mark.parametrize("estimator", CROSS_FOLD)
def test_default_settings_fit_the_exact_id_design(estimator):
    estimate = fit_once(FitRequest(estimator=estimator, dgp="exact-id", K=25, n=100, n_new=100, seed=1))
    assert np.isfinite(estimate.theta) and np.isfinite(estimate.se)


def test_default_sweep_has_no_failures(tmp_path):
    cfg = SweepConfig.model_validate(
        {"K": [25], "n": [30], "n_new": 100, "R": 5, "estimators": CROSS_FOLD, "out": tmp_path / "defaults.csv"}
    )
    summary = run_sweep(cfg)
    assert (summary["failures"] == 0).all()


def test_timing_is_off_by_default(tmp_path):
    assert SweepConfig().record_timing is False
    summary = run_sweep(_sweep_config(tmp_path))
    assert (summary["mean_runtime_ms"] == 0).all()


def test_linear_algebra_failures_are_recorded_as_numerical(tmp_path, monkeypatch):
    def singular(*args, **kwargs):
        raise np.linalg.LinAlgError("Singular matrix")

    monkeypatch.setattr("harness.sweep.get_estimator", lambda name: singular)
    cfg = _sweep_config(tmp_path, estimators=["npjive"])
    summary = run_sweep(cfg)
    assert summary.loc[0, "failures"] == cfg.R
    assert (pd.read_csv(replications_path(cfg.out))["error"] == "NumericalError").all()


def test_identification_equivalence_runs_on_its_own_world_count():
    report = run_checks(worlds=2, seed=3)
    assert report.id_worlds == 1000
    assert {check.name: check.cases for check in report.checks}["id-equiv"] == 1000


def test_cli_oracle_check_world_counts():
    result = runner.invoke(app, ["oracle-check", "--worlds", "2", "--id-worlds", "20", "--log-level", "WARNING"])
    assert result.exit_code == 0, result.output
    report = _json_line(result.stdout)
    assert (report["worlds"], report["id_worlds"]) == (2, 20)


def test_cli_failed_oracle_check_exits_with_3(monkeypatch):
    failing = CheckReport(worlds=1, id_worlds=1, seed=0, checks=[CheckResult(name="mixed-bias", cases=1, failures=1, worst=1.0)])
    monkeypatch.setattr("harness.main.run_checks", lambda *args: failing)
    result = runner.invoke(app, ["oracle-check", "--worlds", "1", "--log-level", "ERROR"])
    assert result.exit_code == 3
    assert _json_line(result.stdout)["passed"] is False


def test_cli_raw_linear_algebra_error_exits_with_3(monkeypatch):
    def failing_fit(request):
        raise np.linalg.LinAlgError("Singular matrix")

    monkeypatch.setattr("harness.main.fit_once", failing_fit)
    result = runner.invoke(app, ["fit", "--estimator", "npjive", "--dgp", "continuous", "--log-level", "ERROR"])
    assert result.exit_code == 3


@pytest.mark.parametrize("command", ["simulate", "fit", "oracle-check"])
def test_workers_is_a_sweep_only_option(command):
    result = runner.invoke(app, [command, "--workers", "2"])
    assert result.exit_code == 2
