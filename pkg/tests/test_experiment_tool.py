from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from tests.helpers import synthetic_rows, tiny_config
from numpy.testing import assert_array_equal

from tools import experiment_tool
from tools.env_tool import ShiftSpec, apply_shift, make_gridworld
from tools.errors import ConfigError, RejectedInputError, TrainingDivergedError
from tools.experiment_tool import (
    RESULT_COLUMNS,
    RESULTS_HEADER,
    DatasetConfig,
    ExperimentTool,
    SourceComponent,
    build_domains,
    config_hash,
    config_to_dict,
    dump_config,
    load_config,
    motivating_checks,
    parse_composition,
    parse_config,
    read_results,
    run_experiment,
    run_sweep,
    stage_gen,
    stage_train,
    sweep_checks,
    sweep_configs,
    write_results,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestParseConfig:
    def test_sections_become_typed_configs(self, tmp_path):
        cfg = parse_config(tiny_config(tmp_path))
        assert cfg.env.reward_map == {(2, 2): 1.0}
        assert cfg.env.terminal_cells == ((2, 2),)
        assert cfg.shift.affected == (2,)
        assert cfg.filter.lam == 0.7
        assert cfg.seeds == (0, 1)
        assert [c.record_label for c in cfg.datasets.source_components] == ["random", "shifted-expert"]
        assert cfg.critic_config is cfg.sql

    @pytest.mark.parametrize("override", [
        {"colour": "blue"},
        {"env": {"width": 3, "height": 3, "walls": []}},
        {"env": {"width": 3, "height": 3, "reward_map": {"(2, 2)": 1.0}}},
        {"filter": {"lambda": 1.5}},
        {"filter": {"lam": 0.5}},
        {"datasets": {"n_tar": 500, "n_src": 400}},
        {"datasets": {"n_tar": 10, "n_src": 400, "source_components": [{"quality": "random", "fraction": 0.5}]}},
        {"seeds": []},
        {"methods": ["dvdf", "oracle"]},
        {"learner": "cql"},
        {"shift": {"kind": "teleport", "magnitude": 0.2}},
        {"shift": {"kind": "action_block", "magnitude": 2.0}},
        {"shift": []},
        {"shift": [{"kind": "sharpen", "magnitude": 1.0}, {"kind": "teleport"}]},
        {"nce": {"k": 0}},
    ])
    def test_invalid_configs_raise_config_error(self, tmp_path, override):
        with pytest.raises(ConfigError):
            parse_config(tiny_config(tmp_path, **override))

    def test_env_section_is_required(self, tmp_path):
        raw = tiny_config(tmp_path)
        del raw["env"]
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_component_sizes_absorb_rounding(self):
        dc = DatasetConfig(n_tar=10, n_src=1001, source_components=(
            SourceComponent(fraction=0.3), SourceComponent(fraction=0.7, kernel="source")))
        assert dc.component_sizes() == [300, 701]

    def test_shift_list_applies_in_order(self, tmp_path):
        shifts = [{"kind": "sharpen", "magnitude": 1.0},
                  {"kind": "action_block", "affected": [[0, 1]], "magnitude": 1.0, "stay_action": 2}]
        cfg = parse_config(tiny_config(tmp_path, shift=shifts))
        assert cfg.shifts == (ShiftSpec("sharpen", (), 1.0), ShiftSpec("action_block", ((0, 1),), 1.0, stay_action=2))
        target, source = build_domains(cfg)
        expected = apply_shift(apply_shift(make_gridworld(cfg.env), cfg.shifts[0]), cfg.shifts[1])
        assert_array_equal(source.P, expected.P)
        assert_array_equal(source.P[0, 1], target.P[0, 2].round())
        assert config_to_dict(cfg)["shift"][1]["affected"] == [[0, 1]]
        assert config_hash(parse_config(yaml.safe_load(yaml.safe_dump(config_to_dict(cfg))))) == config_hash(cfg)

    def test_single_shift_stays_a_mapping(self, tmp_path):
        cfg = parse_config(tiny_config(tmp_path))
        assert cfg.shifts == (cfg.shift,)
        assert config_to_dict(cfg)["shift"]["kind"] == "action_block"

    @pytest.mark.parametrize("name", ["motivating.yaml", "zero_shift.yaml"])
    def test_shipped_configs_load(self, name):
        cfg = load_config(CONFIG_DIR / name)
        assert cfg.name == Path(name).stem


class TestLoadConfig:
    def test_name_defaults_to_file_stem_and_env_fills_output_dir(self, tmp_path, monkeypatch):
        raw = tiny_config(tmp_path)
        del raw["name"], raw["output_dir"]
        path = tmp_path / "my_run.yaml"
        path.write_text(yaml.safe_dump(raw))
        monkeypatch.setenv("DVDF_OUTPUT_DIR", str(tmp_path / "elsewhere"))
        cfg = load_config(path)
        assert cfg.name == "my_run"
        assert cfg.output_dir == str(tmp_path / "elsewhere")

    def test_bad_files(self, tmp_path, monkeypatch):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")
        broken = tmp_path / "broken.yaml"
        broken.write_text("env: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(broken)
        scalar = tmp_path / "scalar.yaml"
        scalar.write_text("42\n")
        with pytest.raises(ConfigError):
            load_config(scalar)
        good = tmp_path / "good.yaml"
        raw = tiny_config(tmp_path)
        good.write_text(yaml.safe_dump(raw))
        monkeypatch.setenv("DVDF_MAX_WORKERS", "many")
        with pytest.raises(ConfigError):
            load_config(good)


class TestConfigHash:
    def test_stable_and_sensitive(self, tmp_path):
        cfg = parse_config(tiny_config(tmp_path))
        assert config_hash(cfg) == config_hash(parse_config(tiny_config(tmp_path)))
        assert len(config_hash(cfg)) == 12
        other = parse_config(tiny_config(tmp_path, filter={"lambda": 0.3, "xi": 0.5}))
        assert config_hash(other) != config_hash(cfg)

    def test_ignores_output_dir_and_workers(self, tmp_path):
        a = parse_config(tiny_config(tmp_path / "a"))
        b = parse_config(tiny_config(tmp_path / "b", max_workers=4))
        assert config_hash(a) == config_hash(b)

    def test_dumped_config_reloads_to_same_hash(self, tmp_path):
        cfg = parse_config(tiny_config(tmp_path))
        path = dump_config(cfg, tmp_path / "config.yaml")
        assert config_hash(parse_config(yaml.safe_load(path.read_text()))) == config_hash(cfg)
        assert config_to_dict(cfg)["filter"]["lambda"] == 0.7


class TestPipeline:
    def test_run_writes_one_row_per_seed_and_method(self, tmp_path):
        cfg = parse_config(tiny_config(tmp_path / "out"))
        rows = run_experiment(cfg)
        assert len(rows) == 2 * 4
        assert {r.method for r in rows} == {"dvdf", "merge_all", "dynamics_only", "value_only"}
        assert not any(r.error for r in rows)

        results = tmp_path / "out" / "results.csv"
        assert results.read_text().splitlines()[0] == RESULTS_HEADER
        frame = read_results(results)
        assert list(frame.columns) == RESULT_COLUMNS
        assert (frame["config_hash"] == config_hash(cfg)).all()
        assert (tmp_path / "out" / "timings.csv").exists()
        assert (tmp_path / "out" / "config.yaml").exists()

        dvdf = frame[frame["method"] == "dvdf"]
        assert (dvdf["selected_count"] == 200).all()
        assert (dvdf["source_count"] == 400).all()
        assert all(sum(parse_composition(c).values()) == 200 for c in dvdf["composition"])
        merged = frame[frame["method"] == "merge_all"]
        assert merged["lambda"].isna().all()
        assert (merged["xi"] == 1.0).all()

    def test_rerun_is_byte_identical(self, tmp_path):
        raw = tiny_config(tmp_path / "first", seeds=[3], methods=["dvdf", "value_only"])
        run_experiment(parse_config(raw))
        raw["output_dir"] = str(tmp_path / "second")
        run_experiment(parse_config(raw))
        first = (tmp_path / "first" / "results.csv").read_bytes()
        assert first == (tmp_path / "second" / "results.csv").read_bytes()

    def test_zero_shift_dvdf_matches_merge_all(self, tmp_path):
        cfg = load_config(CONFIG_DIR / "zero_shift.yaml")
        rows = run_experiment(cfg, write=False)
        by_method = {r.method: r for r in rows}
        assert by_method["dvdf"].J_tar == pytest.approx(by_method["merge_all"].J_tar, abs=1e-9)
        assert by_method["dvdf"].selected_count == cfg.datasets.n_src

    def test_failing_seed_becomes_error_row(self, tmp_path, monkeypatch):
        real = experiment_tool.train_score_model

        def flaky(cfg, seed, d_tar, d_src):
            if seed == 1:
                raise TrainingDivergedError("loss went to infinity")
            return real(cfg, seed, d_tar, d_src)

        monkeypatch.setattr(experiment_tool, "train_score_model", flaky)
        cfg = parse_config(tiny_config(tmp_path, methods=["dvdf"]))
        rows = run_experiment(cfg)
        errors = [r for r in rows if r.method == "error"]
        assert len(errors) == 1 and errors[0].seed == 1
        assert "TrainingDivergedError" in errors[0].error
        frame = read_results(tmp_path / "results.csv")
        assert frame.loc[frame["method"] == "error", "J_tar"].isna().all()
        assert (frame.loc[frame["method"] == "dvdf", "error"] == "").all()


class TestSweep:
    def test_sweep_runs_dvdf_per_value(self, tmp_path):
        cfg = parse_config(tiny_config(tmp_path, seeds=[0]))
        rows = run_sweep(cfg, "lambda", [0.0, 0.5, 1.0])
        assert [r.method for r in rows] == ["dvdf"] * 3
        assert [r.lam for r in rows] == [0.0, 0.5, 1.0]
        assert len({r.config_hash for r in rows}) == 3
        assert (tmp_path / "sweep_lambda.csv").exists()

    def test_invalid_sweeps(self, tmp_path):
        cfg = parse_config(tiny_config(tmp_path))
        with pytest.raises(ConfigError):
            sweep_configs(cfg, "lambda", [])
        with pytest.raises(ConfigError):
            sweep_configs(cfg, "tau", [0.5])
        with pytest.raises(ConfigError):
            sweep_configs(cfg, "xi", [0.0])


class TestChecks:
    def test_motivating_checks_pass_on_the_expected_ordering(self):
        rows = synthetic_rows({"dvdf": 3.0, "value_only": 2.0, "dynamics_only": 1.0, "merge_all": 0.5})
        rows = [r if r.method != "dynamics_only" else replace(r, composition="random=10") for r in rows]
        checks = motivating_checks(rows)
        assert checks["ordering_holds"]
        assert checks["dvdf_wins_over_dynamics_only"] == 3
        assert checks["dvdf_shifted_fraction"] == pytest.approx(0.4)
        assert checks["dynamics_only_shifted_fraction"] == 0.0
        assert checks["passes"]

    def test_motivating_checks_fail_on_wrong_ordering(self):
        checks = motivating_checks(synthetic_rows({"dvdf": 1.0, "value_only": 2.0, "dynamics_only": 3.0}))
        assert not checks["ordering_holds"]
        assert not checks["passes"]

    def test_sweep_checks(self):
        rows = []
        for lam, j in [(0.0, 1.0), (0.5, 3.0), (1.0, 2.0)]:
            rows += synthetic_rows({"dvdf": j}, lam=lam)
        checks = sweep_checks(rows, "lambda")
        assert checks["best"] == 0.5 and checks["passes"]
        edge = sweep_checks(synthetic_rows({"dvdf": 1.0}, lam=1.0), "lambda")
        assert not edge["passes"]


class TestResultsFiles:
    def test_read_rejects_other_csv(self, tmp_path):
        path = tmp_path / "plain.csv"
        pd.DataFrame({"a": [1]}).to_csv(path, index=False)
        with pytest.raises(RejectedInputError):
            read_results(path)

    def test_round_trip_keeps_floats(self, tmp_path):
        rows = synthetic_rows({"dvdf": 1.0 / 3.0})
        frame = read_results(write_results(rows, tmp_path / "r.csv"))
        np.testing.assert_array_equal(frame["J_tar"].to_numpy(), [r.J_tar for r in rows])


class TestStages:
    def test_train_stage_builds_missing_upstream_files(self, tmp_path):
        cfg = parse_config(tiny_config(tmp_path))
        out = stage_train(cfg, seed=0, method="dvdf")
        folder = tmp_path / "seed_0"
        for name in ("target_mdp.txt", "source_mdp.txt", "d_tar.csv", "d_src.csv", "critic.txt",
                     "score_model.txt", "scores.csv", "dvdf.yaml"):
            assert (folder / name).exists(), name
        assert yaml.safe_load(out["path"].read_text())["method"] == "dvdf"

    def test_gen_is_deterministic(self, tmp_path):
        cfg = parse_config(tiny_config(tmp_path))
        a = stage_gen(cfg, 0, tmp_path / "a")
        b = stage_gen(cfg, 0, tmp_path / "b")
        assert a["d_src"].read_bytes() == b["d_src"].read_bytes()

    def test_baseline_stage_rejects_unknown_method(self, tmp_path):
        cfg = parse_config(tiny_config(tmp_path))
        with pytest.raises(ConfigError):
            stage_train(cfg, 0, method="oracle")


class TestExperimentTool:
    def test_stage_without_config(self):
        result = ExperimentTool().run('gen', seed=0)
        assert not result['success']
        assert result['exit_code'] == 1
        assert result['error_type'] == 'ConfigError'

    def test_load_and_gen(self, tmp_path):
        path = tmp_path / "tiny.yaml"
        path.write_text(yaml.safe_dump(tiny_config(tmp_path)))
        tool = ExperimentTool()
        loaded = tool.run('load', path=str(path))
        assert loaded['success'] and loaded['config_hash'] == config_hash(tool.config)
        gen = tool.run('gen', seed=0, out_dir=str(tmp_path / "stages"))
        assert gen['success'] and set(gen['files']) == {"target_mdp", "source_mdp", "d_tar", "d_src"}

    def test_unknown_action(self):
        assert ExperimentTool().run('deploy')['error'] == 'Unknown action: deploy'


@pytest.mark.slow
class TestDirectionalChecks:
    @pytest.fixture(scope="class")
    def motivating(self):
        return load_config(CONFIG_DIR / "motivating.yaml")

    def test_motivating_mixture(self, motivating):
        checks = motivating_checks(run_experiment(motivating, write=False))
        assert checks["n_seeds"] == 10
        assert checks["dvdf_shifted_fraction"] >= 0.2
        assert checks["dynamics_only_shifted_fraction"] < 0.05
        assert checks["passes"], checks

    def test_lambda_sweep_peaks_inside(self, motivating):
        rows = run_sweep(motivating, "lambda", [0.0, 0.3, 0.5, 0.7, 0.9, 1.0], write=False)
        checks = sweep_checks(rows, "lambda")
        assert 0.0 < checks["best"] < 1.0
        assert checks["passes"], checks

    def test_xi_sweep_prefers_filtering(self, motivating):
        rows = run_sweep(motivating, "xi", [0.25, 0.5, 0.75, 1.0], write=False)
        checks = sweep_checks(rows, "xi")
        assert checks["means"][0.5] >= checks["means"][1.0]
        assert checks["passes"], checks
