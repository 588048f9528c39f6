import csv
import json

import numpy as np
import pytest

from ordinal_intensity.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_SAMPLER, main
from ordinal_intensity.data import read_tuples_csv

SAMPLER_FLAGS = ["--draws", "60", "--warmup", "60", "--chains", "1"]


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "sim.csv"
    code = run(
        "simulate", "--output", str(path), "--n", "500", "--classes", "3",
        "--seed", "3", "--locations", "2", "--n-months", "30",
    )
    assert code == EXIT_OK
    return path


def read_rows(path):
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


class TestSimulate:
    def test_output_has_labels_and_provenance(self, sim_csv):
        text = sim_csv.read_text(encoding="utf-8")
        assert text.startswith("# provenance: ")
        rows = read_rows(sim_csv)
        assert len(rows) == 500
        assert {"subject", "predicate", "quantifier", "object", "label"} <= set(rows[0])

    def test_tuples_readable(self, sim_csv):
        tuples = read_tuples_csv(sim_csv)
        assert len(tuples) == 500

    def test_params_roundtrip(self, tmp_path):
        params = tmp_path / "theta.json"
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        assert run("simulate", "--output", str(out1), "--n", "50", "--classes", "3",
                   "--seed", "5", "--params-out", str(params)) == EXIT_OK
        assert run("simulate", "--output", str(out2), "--n", "50",
                   "--seed", "5", "--params", str(params)) == EXIT_OK
        assert read_rows(out1) == read_rows(out2)


class TestIngest:
    def test_raw_to_tuples_with_report(self, tmp_path):
        raw = tmp_path / "raw.csv"
        raw.write_text(
            "verb10,actor3,actor6,target3,target6,fatalities,wounded,location,date\n"
            "18,MIL,,CVL,,1,1,Afghanistan,2012-05-19\n"
            "21,MIL,,CVL,,0,0,Iraq,2004-01-02\n"
            "19,,,MIL,,2,0,Syria,2011-06-07\n",
            encoding="utf-8",
        )
        out = tmp_path / "tuples.csv"
        report = tmp_path / "report.json"
        assert run("ingest", "--input", str(raw), "--output", str(out),
                   "--report", str(report)) == EXIT_OK
        rows = read_rows(out)
        assert len(rows) == 1
        assert rows[0]["subject"] == "military" and rows[0]["quantifier"] == "2"
        doc = json.loads(report.read_text(encoding="utf-8"))
        assert doc["skipped"] == {"unscored category": 1, "unmappable actor": 1}

    def test_missing_column_is_data_error(self, tmp_path):
        raw = tmp_path / "bad.csv"
        raw.write_text("a,b\n1,2\n", encoding="utf-8")
        assert run("ingest", "--input", str(raw), "--output", str(tmp_path / "o.csv")) == EXIT_DATA


class TestFitScoreRoundTrip:
    def test_fit_then_score(self, sim_csv, tmp_path):
        fit_dir = tmp_path / "fit"
        assert run("fit", "--input", str(sim_csv), "--output", str(fit_dir),
                   "--classes", "3", "--seed", "1", *SAMPLER_FLAGS) == EXIT_OK
        assert (fit_dir / "posterior.jsonl").exists()
        diag = json.loads((fit_dir / "diagnostics.json").read_text(encoding="utf-8"))
        assert "parameters" in diag and "provenance" in diag

        scores = tmp_path / "scores.csv"
        assert run("score", "--input", str(sim_csv), "--posterior",
                   str(fit_dir / "posterior.jsonl"), "--output", str(scores)) == EXIT_OK
        rows = read_rows(scores)
        assert len(rows) == 500
        assert {"z_mean", "z_mode", "mass_1", "mass_3"} <= set(rows[0])
        z = float(rows[0]["z_mean"])
        assert 1.0 <= z <= 3.0

    def test_fit_is_byte_deterministic(self, sim_csv, tmp_path):
        d1, d2 = tmp_path / "f1", tmp_path / "f2"
        for d in (d1, d2):
            assert run("fit", "--input", str(sim_csv), "--output", str(d),
                       "--classes", "3", "--seed", "7", *SAMPLER_FLAGS) == EXIT_OK
        assert (d1 / "posterior.jsonl").read_bytes() == (d2 / "posterior.jsonl").read_bytes()

    def test_label_recovery_end_to_end(self, sim_csv, tmp_path):
        fit_dir = tmp_path / "fit"
        assert run("fit", "--input", str(sim_csv), "--output", str(fit_dir),
                   "--classes", "3", "--seed", "2", "--draws", "150",
                   "--warmup", "120", "--chains", "1") == EXIT_OK
        scores = tmp_path / "scores.csv"
        assert run("score", "--input", str(sim_csv), "--posterior",
                   str(fit_dir / "posterior.jsonl"), "--output", str(scores)) == EXIT_OK
        modes = np.array([int(r["z_mode"]) for r in read_rows(scores)])
        labels = np.array([int(r["label"]) for r in read_rows(sim_csv)])
        agreement = np.mean(modes == labels)
        # prior-drawn generator classes may overlap; demand clear association
        assert agreement >= 0.5


class TestImputeCommand:
    def test_one_row_per_method(self, sim_csv, tmp_path):
        out = tmp_path / "metrics.csv"
        assert run("impute", "--input", str(sim_csv), "--output", str(out),
                   "--site", "predicate", "--classes", "3", "--seed", "4",
                   *SAMPLER_FLAGS) == EXIT_OK
        rows = read_rows(out)
        methods = {r["method"] for r in rows}
        assert methods == {"model", "naive", "prior", "lr"}
        model_metrics = {r["metric"] for r in rows if r["method"] == "model"}
        assert model_metrics == {"sppd", "mse"}
        lr_metrics = {r["metric"] for r in rows if r["method"] == "lr"}
        assert lr_metrics == {"mse"}

    def test_unknown_baseline_is_config_error(self, sim_csv, tmp_path):
        assert run("impute", "--input", str(sim_csv), "--output",
                   str(tmp_path / "m.csv"), "--baselines", "bogus") == EXIT_CONFIG


class TestSelectCCommand:
    def test_summary_and_cells(self, sim_csv, tmp_path):
        out = tmp_path / "sweep.csv"
        cells = tmp_path / "cells.csv"
        assert run("select-c", "--input", str(sim_csv), "--output", str(out),
                   "--cells", str(cells), "--c-values", "2,3", "--sweep-seeds", "1",
                   "--draws", "40", "--warmup", "40", "--chains", "1") == EXIT_OK
        summary = read_rows(out)
        assert [r["n_classes"] for r in summary] == ["2", "3"]
        assert all(r["sppd_sd"] == "0" for r in summary)
        assert len(read_rows(cells)) == 2


class TestForecastCommand:
    def test_rows_and_metrics(self, tmp_path):
        sim = tmp_path / "multi.csv"
        assert run("simulate", "--output", str(sim), "--n", "2500", "--classes", "3",
                   "--seed", "6", "--locations", "3", "--n-months", "48") == EXIT_OK
        out = tmp_path / "forecast.csv"
        assert run("forecast", "--input", str(sim), "--output", str(out),
                   "--location", "loc-0", "--folds", "8", "--max-lag", "3",
                   "--classes", "3", "--seed", "2", "--draws", "80",
                   "--warmup", "80", "--chains", "1") == EXIT_OK
        rows = read_rows(out)
        experiments = {r["experiment"] for r in rows}
        assert "ar:pbar->pbar" in experiments
        assert "var:pbar+zbar->pbar" in experiments
        assert "var:qbar+zbar->qbar" in experiments
        granger_rows = [r for r in rows if r["metric"] == "granger_p"]
        assert granger_rows and all(0.0 <= float(r["value"]) <= 1.0 for r in granger_rows)


class TestCorrelateCommand:
    def test_matrix_structure(self, tmp_path):
        sim = tmp_path / "multi.csv"
        assert run("simulate", "--output", str(sim), "--n", "1200", "--classes", "3",
                   "--seed", "8", "--locations", "2", "--n-months", "36") == EXIT_OK
        out = tmp_path / "corr.csv"
        assert run("correlate", "--input", str(sim), "--output", str(out),
                   "--location", "loc-1", "--classes", "3", "--seed", "2",
                   *SAMPLER_FLAGS) == EXIT_OK
        rows = read_rows(out)
        names = [r["series"] for r in rows]
        assert names == ["pbar", "qbar", "zbar"]
        for row in rows:
            assert float(row[row["series"]]) == pytest.approx(1.0)


class TestConfigAndExitCodes:
    def test_config_file_defaults_and_flag_override(self, sim_csv, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("draws = 30\nwarmup = 30\nchains = 1\nclasses = 3\n", encoding="utf-8")
        fit_dir = tmp_path / "fit"
        assert run("fit", "--config", str(cfg), "--input", str(sim_csv),
                   "--output", str(fit_dir), "--seed", "1") == EXIT_OK
        header = json.loads(
            (fit_dir / "posterior.jsonl").read_text(encoding="utf-8").splitlines()[0]
        )
        assert header["config"]["draws"] == 30
        # flag beats file
        fit2 = tmp_path / "fit2"
        assert run("fit", "--config", str(cfg), "--input", str(sim_csv),
                   "--output", str(fit2), "--seed", "1", "--draws", "45") == EXIT_OK
        header2 = json.loads(
            (fit2 / "posterior.jsonl").read_text(encoding="utf-8").splitlines()[0]
        )
        assert header2["config"]["draws"] == 45

    def test_json_config(self, sim_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"draws": 25, "warmup": 25, "chains": 1, "classes": 3}', encoding="utf-8")
        fit_dir = tmp_path / "fitj"
        assert run("fit", "--config", str(cfg), "--input", str(sim_csv),
                   "--output", str(fit_dir), "--seed", "1") == EXIT_OK

    def test_env_var_config(self, sim_csv, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("draws = 20\nwarmup = 20\nchains = 1\nclasses = 3\n", encoding="utf-8")
        monkeypatch.setenv("ORDINAL_INTENSITY_CONFIG", str(cfg))
        fit_dir = tmp_path / "fite"
        assert run("fit", "--input", str(sim_csv), "--output", str(fit_dir),
                   "--seed", "1") == EXIT_OK
        header = json.loads(
            (fit_dir / "posterior.jsonl").read_text(encoding="utf-8").splitlines()[0]
        )
        assert header["config"]["draws"] == 20

    def test_bad_flag_exit(self):
        assert run("fit") == EXIT_CONFIG

    def test_missing_input_exit(self, tmp_path):
        assert run("fit", "--input", str(tmp_path / "none.csv"),
                   "--output", str(tmp_path / "out")) == EXIT_DATA

    def test_sampler_failure_exit(self, sim_csv, tmp_path, monkeypatch):
        from ordinal_intensity.infer import SamplerError

        import ordinal_intensity.cli as cli_mod

        def boom(*args, **kwargs):
            raise SamplerError("synthetic failure")

        monkeypatch.setattr(cli_mod, "sample_posterior", boom)
        assert run("fit", "--input", str(sim_csv), "--output",
                   str(tmp_path / "out"), *SAMPLER_FLAGS) == EXIT_SAMPLER

    def test_unreadable_config_is_config_error(self, sim_csv, tmp_path):
        assert run("fit", "--config", str(tmp_path / "nope.toml"), "--input",
                   str(sim_csv), "--output", str(tmp_path / "o")) == EXIT_CONFIG

    def test_idempotent_rerun(self, sim_csv, tmp_path):
        out = tmp_path / "s.csv"
        for _ in range(2):
            assert run("simulate", "--output", str(out), "--n", "40",
                       "--classes", "3", "--seed", "5") == EXIT_OK
        first = out.read_bytes()
        assert run("simulate", "--output", str(out), "--n", "40",
                   "--classes", "3", "--seed", "5") == EXIT_OK
        assert out.read_bytes() == first
