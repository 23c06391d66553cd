import pandas as pd
import pytest
import yaml

from app import create_app
from app.cli import main
from tests.helpers import tiny_config


@pytest.fixture
def config_path(tmp_path):
    raw = tiny_config(tmp_path / "out", seeds=[0], methods=["dvdf", "merge_all"])
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


class TestExitCodes:
    def test_usage_errors_are_config_errors(self):
        assert main([]) == 1
        assert main(["bench", "--n-instances", "many"]) == 1
        assert main(["teleport"]) == 1

    def test_missing_config(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1

    def test_bad_sweep_values(self, config_path):
        assert main(["sweep", "--config", str(config_path), "--param", "lambda", "--values", "a,b"]) == 1
        assert main(["sweep", "--config", str(config_path), "--param", "xi", "--values", ""]) == 1

    def test_bench_passes_and_writes_summary(self, tmp_path):
        assert main(["bench", "--n-instances", "5", "--out", str(tmp_path)]) == 0
        summary = pd.read_csv(tmp_path / "theory_summary.csv")
        assert (summary["holds_count"] == summary["instances"]).all()
        assert (tmp_path / "charts" / "theory_slack.html").exists()

    def test_bench_mutation_self_test(self):
        assert main(["bench", "--n-instances", "10", "--c1-scale", "0.5"]) == 0

    def test_strict_checks_without_verdicts_exit_two(self, config_path):
        assert main(["run", "--config", str(config_path), "--strict-checks"]) == 2


class TestCommands:
    def test_stage_commands(self, config_path, tmp_path):
        out = tmp_path / "stages"
        assert main(["gen", "--config", str(config_path), "--out", str(out)]) == 0
        assert main(["baseline", "--config", str(config_path), "--out", str(out), "--method", "merge_all"]) == 0
        assert (out / "seed_0" / "d_src.csv").exists()
        assert (out / "seed_0" / "baseline_merge_all.yaml").exists()

    def test_run_then_report(self, config_path, tmp_path):
        assert main(["run", "--config", str(config_path)]) == 0
        results = tmp_path / "out" / "results.csv"
        assert results.exists()
        report_dir = tmp_path / "reports"
        assert main(["report", "--results", str(results), "--out", str(report_dir), "--pdf", "--excel"]) == 0
        for name in ("summary.csv", "summary.txt", "report.pdf", "report.xlsx"):
            assert (report_dir / "report" / name).exists(), name

    def test_report_plots_score_model_losses(self, config_path, tmp_path):
        out = tmp_path / "stages"
        assert main(["run", "--config", str(config_path)]) == 0
        assert main(["score", "--config", str(config_path), "--out", str(out)]) == 0
        model_path = out / "seed_0" / "score_model.txt"
        report_dir = tmp_path / "reports"
        assert main(["report", "--results", str(tmp_path / "out" / "results.csv"), "--out", str(report_dir),
                     "--score-models", str(model_path), "--pdf"]) == 0
        assert (report_dir / "report" / "charts" / "nce_loss_0_seed_0.png").exists()
        text = (report_dir / "report" / "summary.txt").read_text()
        assert "[score models] 0_seed_0.best_epoch = " in text

    def test_report_rejects_a_missing_score_model(self, config_path, tmp_path):
        assert main(["run", "--config", str(config_path)]) == 0
        assert main(["report", "--results", str(tmp_path / "out" / "results.csv"),
                     "--out", str(tmp_path / "reports"), "--score-models", str(tmp_path / "none.txt")]) == 3

    def test_create_app_returns_parser(self):
        parser = create_app(log_level="WARNING")
        assert parser.prog == "dvdf-bench"
        assert main(["bench", "--n-instances", "2"], parser=parser) == 0
