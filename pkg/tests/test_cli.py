import csv
import json
import os
from pathlib import Path

import numpy as np
import pytest

from curvecal import cli, featurize as fz
from curvecal.cli import EXIT_CONFIG, EXIT_GATE, EXIT_OK

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(autouse=True)
def fixed_terminal(monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    monkeypatch.delenv("CURVECAL_CONFIG", raising=False)


@pytest.fixture(scope="module")
def config_file(tmp_path_factory, tiny_config):
    path = tmp_path_factory.mktemp("config") / "config.json"
    tiny_config.save(path)
    return path


class TestHelpGolden:
    def test_main_help_matches_golden(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--help"])
        assert exc.value.code == 0
        assert capsys.readouterr().out == (GOLDEN / "help_main.txt").read_text()

    @pytest.mark.parametrize(
        "command",
        ["simulate", "featurize", "train-curvature", "fit-calibration",
         "evaluate", "pipeline-run", "session-serve", "session-replay"],
    )
    def test_subcommand_help_matches_golden(self, capsys, command):
        with pytest.raises(SystemExit) as exc:
            cli.main([command, "--help"])
        assert exc.value.code == 0
        golden = (GOLDEN / f"help_{command.replace('-', '_')}.txt").read_text()
        assert capsys.readouterr().out == golden

    def test_every_declared_flag_is_listed(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["session-serve", "--help"])
        out = capsys.readouterr().out
        for flag in ("--config", "--seed", "--output-dir", "--artifacts",
                     "--object-curvature", "--host", "--port", "--speed"):
            assert flag in out


class TestErrors:
    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["simulate", "--no-such-flag"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_config_file_exits_2(self, capsys):
        code = cli.main(["simulate", "--config", "/nonexistent/config.json"])
        assert code == EXIT_CONFIG

    def test_config_via_environment(self, tmp_path, monkeypatch, capsys, config_file):
        monkeypatch.setenv("CURVECAL_CONFIG", str(config_file))
        code = cli.main(["simulate", "--frames", "3", "--output-dir", str(tmp_path)])
        assert code == EXIT_OK
        assert (tmp_path / "frames.csv").exists()


class TestSimulate:
    def test_writes_frames_csv(self, tmp_path, config_file):
        code = cli.main(["simulate", "--config", str(config_file), "--frames", "5",
                        "--curvature", "25", "--force", "4", "--output-dir", str(tmp_path)])
        assert code == EXIT_OK
        rows = list(csv.reader((tmp_path / "frames.csv").open()))
        assert rows[0][:3] == ["t", "f_true", "kappa_true"]
        assert len(rows) == 6


class TestFeaturizeAndTrain:
    def test_featurize_then_train_round_trip(self, tmp_path, config_file):
        code = cli.main(["featurize", "--config", str(config_file), "--output-dir", str(tmp_path)])
        assert code == EXIT_OK
        dataset = tmp_path / "features.csv"
        assert dataset.exists()
        code = cli.main(["train-curvature", "--config", str(config_file),
                        "--dataset", str(dataset), "--output-dir", str(tmp_path)])
        assert code == EXIT_OK
        assert (tmp_path / "model.json").exists()

    def test_train_rejects_excluded_curvature_with_message(self, tmp_path, config_file, capsys):
        X = np.random.default_rng(0).random((60, fz.N_FEATURES))
        y = np.linspace(0, 100, 60)  # includes the excluded 100 fixture
        dataset = tmp_path / "bad.csv"
        fz.save_feature_dataset(dataset, X, y, fz.NormalizationSpec())
        code = cli.main(["train-curvature", "--config", str(config_file),
                        "--dataset", str(dataset), "--output-dir", str(tmp_path)])
        assert code == EXIT_CONFIG
        assert "excluded" in capsys.readouterr().err


class TestPipelineRun:
    def test_default_run_writes_manifest(self, tmp_path, config_file, capsys):
        out = tmp_path / "out"
        code = cli.main(["pipeline-run", "--config", str(config_file), "--output-dir", str(out)])
        assert code == EXIT_OK
        assert (out / "manifest.json").exists()
        stdout = capsys.readouterr().out
        assert "gate curvature_r2: pass" in stdout
        assert "gate calibration_r2: pass" in stdout

    def test_gate_failure_exits_3(self, tmp_path, config_file, tiny_config):
        strict = tmp_path / "strict.json"
        strict.write_text(json.dumps({**tiny_config.to_dict(), "curvature_gate_threshold": 0.999999}))
        code = cli.main(["pipeline-run", "--config", str(strict), "--output-dir", str(tmp_path / "o")])
        assert code == EXIT_GATE

    def test_exit_codes_stable_across_runs(self, tmp_path, config_file):
        out = tmp_path / "stable"
        codes = {cli.main(["pipeline-run", "--config", str(config_file), "--output-dir", str(out)])
                 for _ in range(2)}
        assert codes == {EXIT_OK}


class TestEvaluateAndReplay:
    def test_evaluate_emits_table_layout(self, tmp_path, config_file, tiny_pipeline):
        objects = tmp_path / "objects.json"
        objects.write_text(json.dumps([{"name": "demo", "curvature": 17.5}]))
        out = tmp_path / "eval"
        code = cli.main(["evaluate", "--config", str(config_file),
                        "--artifacts", str(tiny_pipeline.out_dir),
                        "--objects", str(objects), "--output-dir", str(out)])
        assert code == EXIT_OK
        header = (out / "report.csv").read_text().splitlines()[0].split(",")
        assert header[:3] == ["object", "curvature_gt", "curvature_pred"]
        assert "flat_mae_2N" in header and "nh_curve_sd" in header
        assert (out / "report.txt").exists()
        assert (out / "report.json").exists()

    def test_session_replay_writes_report(self, tmp_path, config_file, tiny_pipeline):
        trace = tmp_path / "trace.csv"
        with trace.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "force"])
            writer.writerow([0.0, 2.0])
            writer.writerow([5.0, 2.0])
        out = tmp_path / "replay"
        code = cli.main(["session-replay", "--config", str(config_file),
                        "--artifacts", str(tiny_pipeline.out_dir), "--trace", str(trace),
                        "--object-curvature", "25", "--output-dir", str(out)])
        assert code == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert len(report["target_rows"]) == 1
        assert (out / "report.csv").exists()
