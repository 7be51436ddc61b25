import csv
import io
import json
import math

import numpy as np
import pytest

from cop_place.experiments import (
    SWEEP_COLUMNS,
    ExperimentConfig,
    emit_report,
    run_cop_sweep,
    run_tve_experiment,
    worker_count,
)


@pytest.fixture(scope="module")
def small_sweep():
    cfg = ExperimentConfig(case="ieee14", pmu_range=(3, 4), n_samples=200, seed=5)
    return run_cop_sweep(cfg)


@pytest.fixture(scope="module")
def small_tve():
    cfg = ExperimentConfig(case="ieee14", n_pmu=3, trials=4, n_samples=100, max_iters=15, seed=2, redraw_scada=False)
    return run_tve_experiment(cfg, workers=1)


def test_sweep_rows(small_sweep):
    rows = small_sweep.rows
    assert len(rows) == 2 * 4
    assert {r["method"] for r in rows} == {"proposed", "exhaustive", "accuracy", "observability"}
    for k in (3, 4):
        prop = next(r for r in small_sweep.table("proposed") if r["n_pmu"] == k)
        ex = next(r for r in small_sweep.table("exhaustive") if r["n_pmu"] == k)
        assert prop["tau"] >= ex["rho"] * (1 - 1e-6)
        assert prop["rho"] <= ex["rho"] * (1 + 1e-9)


def test_sweep_csv_is_rfc4180(small_sweep):
    text = small_sweep.to_csv()
    assert text.endswith("\r\n")
    assert "\n" not in text.replace("\r\n", "")
    parsed = list(csv.reader(io.StringIO(text, newline="")))
    assert parsed[0] == SWEEP_COLUMNS
    assert len(parsed) == len(small_sweep.rows) + 1
    # floats round-trip exactly
    row = parsed[1]
    assert float(row[SWEEP_COLUMNS.index("rho")]) == small_sweep.rows[0]["rho"]


def test_sweep_is_deterministic(small_sweep):
    again = run_cop_sweep(ExperimentConfig(case="ieee14", pmu_range=(3, 4), n_samples=200, seed=5))
    assert again.to_csv() == small_sweep.to_csv()


def test_sweep_skips_large_exhaustive():
    cfg = ExperimentConfig(case="ieee14", pmu_range=(5, 5), methods=("exhaustive",), exhaustive_limit=10)
    row = run_cop_sweep(cfg).rows[0]
    assert row["note"].startswith("skipped") and math.isnan(row["rho"])


def test_tve_curves(small_tve):
    assert set(small_tve.curves) == {"proposed", "accuracy", "observability", "none"}
    for c in small_tve.curves.values():
        assert c.n_trials == 4
        assert 0.0 <= c.divergence_fraction <= 1.0
        assert c.mean_tve.shape == (15,)
    prop = small_tve.curves["proposed"]
    assert prop.n_converged > 0
    assert prop.asymptotic_tve < prop.initial_tve


def test_tve_parallel_matches_serial(small_tve):
    cfg = small_tve.config
    par = run_tve_experiment(cfg, workers=2)
    assert par.to_csv() == small_tve.to_csv()
    assert par.summary_csv() == small_tve.summary_csv()


def test_tve_redraw_changes_scada():
    cfg = ExperimentConfig(case="ieee14", n_pmu=3, trials=2, n_samples=50, max_iters=10, methods=("none", "observability"))
    res = run_tve_experiment(cfg, workers=1)
    assert len(res.trials) == 2
    assert res.curves["none"].n_trials == 2


def test_emit_report(tmp_path, small_sweep, small_tve):
    files = emit_report(small_sweep, tmp_path / "sweep")
    names = sorted(p.name for p in files)
    assert names == ["summary.json", "sweep.csv", "sweep.svg"]
    summary = json.loads((tmp_path / "sweep" / "summary.json").read_text())
    assert summary["kind"] == "sweep" and summary["config"]["seed"] == 5
    svg1 = (tmp_path / "sweep" / "sweep.svg").read_bytes()
    emit_report(small_sweep, tmp_path / "again")
    assert (tmp_path / "again" / "sweep.svg").read_bytes() == svg1

    emit_report(small_tve, tmp_path / "tve", trace_dir=tmp_path / "traces")
    assert (tmp_path / "tve" / "tve_summary.csv").read_bytes().startswith(b"method,n_trials")
    traces = sorted(p.name for p in (tmp_path / "traces").iterdir())
    assert "trial0000_proposed.csv" in traces
    with pytest.raises(TypeError):
        emit_report(object(), tmp_path / "x")


def test_summary_json_encodes_special_floats(tmp_path, small_tve):
    emit_report(small_tve, tmp_path)
    text = (tmp_path / "summary.json").read_text()
    assert "NaN" not in text and "Infinity" not in text
    json.loads(text)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("COP_PLACE_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("COP_PLACE_THREADS", "many")
    assert worker_count() >= 1
    monkeypatch.delenv("COP_PLACE_THREADS")
    assert worker_count() >= 1


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(scada_fraction=2.0)
    with pytest.raises(ValueError):
        ExperimentConfig(trials=0)
    with pytest.raises(ValueError):
        ExperimentConfig(sigma2=0.0)
    cfg = ExperimentConfig(sigma2=4e-4)
    assert cfg.sigmas.flow == pytest.approx(0.02)
    assert json.dumps(cfg.to_dict())
    np.testing.assert_equal(cfg.to_dict()["methods"], [])
