import csv
import math

import numpy as np
import pytest
import yaml

from nonadiabatic import cli
from nonadiabatic.errors import ConfigurationError, DependencyError
from nonadiabatic.harness import (
    ComparisonReport,
    ComparisonRow,
    ExperimentConfig,
    emit_figure_data,
    load_config,
    parse_seed_range,
    read_comparison,
    run_experiment,
)

LZ_CONFIG = {
    "model": {"kind": "landau_zener", "delta": 1.0, "slope": 1.0},
    "epsilons": [0.1, 0.05, 0.02],
    "window": [-40.0, 40.0],
    "scan": {"region": [-3.0, 3.0, 0.0, 2.0], "nx": 61, "ny": 21},
    "renorm": {"epsilon": 0.1, "k_max": 6, "grid_size": 257, "stride": 16},
}


@pytest.fixture(scope="module")
def lz_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("lz")
    report = run_experiment(ExperimentConfig.from_dict(LZ_CONFIG), out)
    return out, report


def write_config(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def test_lz_end_to_end(lz_run):
    _, report = lz_run
    up = [r for r in report.rows if (r.n, r.m) == (0, 1)]
    assert len(report.rows) == 2 and len(up) == 1
    assert up[0].lambda_theory == pytest.approx(math.pi / 4, rel=1e-6)
    assert up[0].fractional_difference <= 0.02


def test_lz_outputs_written(lz_run):
    out, _ = lz_run
    seed = out / "landau_zener"
    for name in ("branch_points.csv", "stokes_polylines.csv", "stokes_index.csv",
                 "level_curves.csv", "sequences.csv", "empirical.csv", "extrapolation.csv"):
        assert (seed / name).stat().st_size > 0
    for name in ("comparison.csv", "exclusions.csv", "manifest.txt"):
        assert (out / name).exists()
    manifest = (out / "manifest.txt").read_text()
    assert "schema_version: 1" in manifest and "numpy:" in manifest


def test_rerun_is_byte_identical(lz_run, tmp_path):
    out, _ = lz_run
    run_experiment(ExperimentConfig.from_dict(LZ_CONFIG), tmp_path)
    for path in sorted(out.rglob("*.csv")):
        other = tmp_path / path.relative_to(out)
        assert other.read_bytes() == path.read_bytes(), path.name


def test_aggregate_recomputable_from_csv(lz_run):
    out, report = lz_run
    rows = read_comparison(out / "comparison.csv")
    vals = [r["fractional_difference"] for r in rows if not r["excluded"]]
    assert np.mean(vals) == pytest.approx(report.mean_fractional_difference, rel=1e-15)
    s = report.summary()
    assert s["rows_total"] == s["rows_compared"] + s["rows_excluded"]


def test_exclusions_carry_reason_codes(lz_run):
    out, report = lz_run
    with open(out / "exclusions.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(report.rows) - len(report.compared)
    assert all(r["reason"].split(":")[0] in {"no_prediction", "flagged", "module_error"}
               for r in rows)


def test_figure_data(lz_run):
    out, _ = lz_run
    fig = out / "figures"
    with open(fig / "levels_landau_zener.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert all(len(r) == 3 for r in rows)
    assert len(rows) == 1 + 1001
    with open(fig / "diagram_landau_zener.csv", newline="") as fh:
        diagram = list(csv.DictReader(fh))
    upper = [r for r in diagram if r["kind"] == "branch_point" and float(r["im_tau"]) > 0]
    assert len(upper) == 1
    assert float(upper[0]["re_tau"]) == pytest.approx(0.0, abs=1e-8)
    assert float(upper[0]["im_tau"]) == pytest.approx(1.0, abs=1e-8)
    crossing = [r for r in diagram if r["kind"] == "stokes_crossing"]
    assert len(crossing) == 1 and crossing[0]["label"] == "1,2"
    assert abs(float(crossing[0]["re_tau"])) < 1e-6


def test_diagram_covers_sequence_points(lz_run):
    out, _ = lz_run
    with open(out / "figures" / "diagram_landau_zener.csv", newline="") as fh:
        labels = {(r["label"], round(float(r["re_tau"]), 6)) for r in csv.DictReader(fh)
                  if r["kind"] == "branch_point"}
    with open(out / "landau_zener" / "sequences.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            for step in filter(None, r["chain"].split(";")):
                pair, re_tau = step.split("@")
                assert (pair.strip("()"), round(float(re_tau), 6)) in labels


def test_missing_artifact_names_dependency(tmp_path):
    with pytest.raises(DependencyError, match="level_curves.csv"):
        emit_figure_data(tmp_path, "levels")


@pytest.mark.parametrize("patch, field", [
    ({"epsilons": [0.05, 0.1]}, "epsilons"),
    ({"epsilons": [0.1, -0.05]}, "epsilons"),
    ({"model": {"kind": "goe_interp", "seeds": []}}, "model.seeds"),
    ({"model": {"kind": "goe_interp", "seeds": [1]},
      "scan": {"region": [-6, 6, 0, 3.2]}}, "scan.region"),
    ({"version": 2}, "version"),
    ({"window": [5, -5]}, "window"),
])
def test_config_validation(patch, field):
    with pytest.raises(ConfigurationError) as exc:
        ExperimentConfig.from_dict({**LZ_CONFIG, **patch})
    assert exc.value.field == field


def test_seed_range():
    assert parse_seed_range("3..6") == [3, 4, 5, 6]
    with pytest.raises(ConfigurationError):
        parse_seed_range("6..3")
    cfg = ExperimentConfig.from_dict({"model": {"kind": "goe_interp", "seed_range": "1..3"}})
    assert cfg.seeds == [1, 2, 3] and cfg.model["dim"] == 6 and cfg.model["alpha"] == 2.0


def test_env_overrides(tmp_path, monkeypatch):
    path = write_config(tmp_path / "c.yaml", LZ_CONFIG)
    monkeypatch.setenv("NONADIABATIC_OUT", str(tmp_path / "elsewhere"))
    monkeypatch.setenv("NONADIABATIC_WORKERS", "3")
    cfg = load_config(path)
    assert cfg.output == str(tmp_path / "elsewhere") and cfg.workers == 3


def test_report_aggregate_excludes_flagged_rows():
    rows = [ComparisonRow(1, 0, 1, 0.5, "", 0.51, 0.02, "poly2", True),
            ComparisonRow(1, 1, 0, 0.5, "", None, None, "", True, "flagged:x"),
            ComparisonRow(1, 0, 2, None, "", 0.3, None, "poly2", True, "no_prediction:x")]
    rep = ComparisonReport(rows)
    assert rep.mean_fractional_difference == pytest.approx(0.02)
    assert rep.n_flagged == 1 and rep.n_no_prediction == 1 and rep.n_errors == 0


def test_cli_stages_and_figures(tmp_path):
    path = write_config(tmp_path / "c.yaml", LZ_CONFIG)
    out = tmp_path / "out"
    for stage in ("branchpoints", "stokes", "sequences"):
        assert cli.main([stage, "--config", str(path), "--out", str(out)]) == 0
    assert (out / "landau_zener" / "sequences.csv").exists()
    assert cli.main(["figures", "--config", str(path), "--out", str(out),
                     "--which", "diagram"]) == 0
    assert (out / "figures" / "diagram_landau_zener.csv").exists()


def test_cli_renorm(tmp_path):
    path = write_config(tmp_path / "c.yaml", LZ_CONFIG)
    assert cli.main(["renorm", "--config", str(path), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "landau_zener" / "renorm_summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 and all(abs(float(r["peak_tau"])) < 0.05 for r in rows[3:])


def test_cli_bad_config_exit_code(tmp_path, capsys):
    path = write_config(tmp_path / "c.yaml", {**LZ_CONFIG, "epsilons": [0.01, 0.1]})
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "epsilon" in capsys.readouterr().err


def test_cli_missing_artifacts_exit_code(tmp_path):
    path = write_config(tmp_path / "c.yaml", LZ_CONFIG)
    assert cli.main(["figures", "--config", str(path), "--out", str(tmp_path)]) == 2
