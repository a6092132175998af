"""End-to-end CLI tests at the micro profile: every subcommand runs against
real artifacts in a temp directory; assertions cover exit codes, written files,
and the resolved config embedded in each report."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from dirl.cli import main

from conftest import MICRO_OVERRIDES


def write_cfg(path: Path, extra: dict = None) -> Path:
    entries = {**MICRO_OVERRIDES, **(extra or {})}
    lines = ["# micro test profile"]
    lines += [f"{k} {v}" for k, v in entries.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One shared pipeline: collect -> train-world -> train-policy il/refine.

    Built once because each stage feeds the next; tests only read from it."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(root / "micro.cfg")
    runner = CliRunner()

    r = runner.invoke(main, ["collect", "--episodes", "2", "--obstacles", "0",
                             "--seed", "5", "--config", str(cfg),
                             "--out", str(root / "data")])
    assert r.exit_code == 0, r.output

    r = runner.invoke(main, ["train-world", "--data", str(root / "data"),
                             "--config", str(cfg), "--seed", "5"])
    assert r.exit_code == 0, r.output

    r = runner.invoke(main, ["train-policy", "--mode", "il",
                             "--data", str(root / "data"),
                             "--config", str(cfg), "--seed", "5"])
    assert r.exit_code == 0, r.output

    r = runner.invoke(main, [
        "train-policy", "--mode", "refine", "--data", str(root / "data"),
        "--world", str(root / "data" / "world-model.ckpt"),
        "--policy-in", str(root / "data" / "policy-il.ckpt"),
        "--config", str(cfg), "--seed", "5"])
    assert r.exit_code == 0, r.output
    return root


class TestCollect:
    def test_dataset_and_report(self, workspace):
        data = workspace / "data"
        assert (data / "manifest.json").exists()
        assert sorted(p.name for p in data.glob("*.ep")) == ["expert-0000.ep", "expert-0001.ep"]
        report = json.loads((data / "collect_report.json").read_text())
        assert report["episodes"] == 2
        assert report["frames"] > 0
        assert report["config"]["dirl.expert_episodes"] == 2
        assert report["config"]["master_seed"] == 5

    def test_same_seed_same_bytes(self, tmp_path):
        cfg = write_cfg(tmp_path / "m.cfg", {"dirl.max_steps": "20"})
        runner = CliRunner()
        outs = []
        for name in ("a", "b"):
            r = runner.invoke(main, ["collect", "--episodes", "1", "--obstacles", "0",
                                     "--seed", "9", "--config", str(cfg),
                                     "--out", str(tmp_path / name)])
            assert r.exit_code == 0, r.output
            outs.append((tmp_path / name / "expert-0000.ep").read_bytes())
        assert outs[0] == outs[1]

        r = runner.invoke(main, ["collect", "--episodes", "1", "--obstacles", "0",
                                 "--seed", "10", "--config", str(cfg),
                                 "--out", str(tmp_path / "c")])
        assert r.exit_code == 0, r.output
        assert (tmp_path / "c" / "expert-0000.ep").read_bytes() != outs[0]

    def test_noise_fraction_override_lands_in_config(self, tmp_path):
        cfg = write_cfg(tmp_path / "m.cfg", {"dirl.max_steps": "10"})
        runner = CliRunner()
        r = runner.invoke(main, ["collect", "--episodes", "1", "--obstacles", "0",
                                 "--noise-fraction", "0.0", "--seed", "1",
                                 "--config", str(cfg), "--out", str(tmp_path / "d")])
        assert r.exit_code == 0, r.output
        report = json.loads((tmp_path / "d" / "collect_report.json").read_text())
        assert report["config"]["expert.noise_fraction"] == 0.0


class TestTraining:
    def test_world_checkpoint_and_report(self, workspace):
        data = workspace / "data"
        assert (data / "world-model.ckpt").exists()
        report = json.loads((data / "world-model.json").read_text())
        assert report["checkpoint"] == "world-model.ckpt"
        assert len(report["history"]) >= 1
        assert set(report["history"][0]) == {"epoch", "train_loss", "holdout_loss"}
        assert report["config"]["world_model.max_epochs"] == 1

    def test_policy_checkpoints(self, workspace):
        data = workspace / "data"
        for stem in ("policy-il", "policy-refined"):
            assert (data / f"{stem}.ckpt").exists()
            report = json.loads((data / f"{stem}.json").read_text())
            assert report["checkpoint"] == f"{stem}.ckpt"
            assert "history" in report
        assert json.loads((data / "policy-il.json").read_text())["mode"] == "il"
        assert json.loads((data / "policy-refined.json").read_text())["mode"] == "refine"

    def test_refine_requires_world_and_policy(self, workspace, tmp_path):
        cfg = write_cfg(tmp_path / "m.cfg")
        runner = CliRunner()
        r = runner.invoke(main, ["train-policy", "--mode", "refine",
                                 "--data", str(workspace / "data"),
                                 "--config", str(cfg)])
        assert r.exit_code != 0
        assert "refine mode needs --world and --policy-in" in r.output


class TestEval:
    def test_eval_writes_json_and_csv(self, workspace, tmp_path):
        cfg = write_cfg(tmp_path / "m.cfg")
        runner = CliRunner()
        out = tmp_path / "score.json"
        r = runner.invoke(main, ["eval", "--policy", str(workspace / "data" / "policy-il.ckpt"),
                                 "--task", "easy", "--trials", "1", "--laps", "1",
                                 "--config", str(cfg), "--seed", "2", "--out", str(out)])
        assert r.exit_code == 0, r.output
        payload = json.loads(out.read_text())
        assert payload["task"] == "easy"
        assert set(payload["report"]) >= {"avg_speed", "top_speed", "interventions",
                                          "time_cost", "completion_ratio"}
        csv_lines = out.with_suffix(".csv").read_text().strip().splitlines()
        assert len(csv_lines) == 2
        assert csv_lines[1].split(",")[1] == "easy"
        assert "completion" in r.output

    def test_default_report_path_sits_next_to_policy(self, workspace, tmp_path):
        cfg = write_cfg(tmp_path / "m.cfg")
        runner = CliRunner()
        r = runner.invoke(main, ["eval", "--policy", str(workspace / "data" / "policy-il.ckpt"),
                                 "--trials", "1", "--laps", "1", "--config", str(cfg)])
        assert r.exit_code == 0, r.output
        assert (workspace / "data" / "policy-il.eval.json").exists()


class TestPipelines:
    def test_dirl_run(self, tmp_path):
        cfg = write_cfg(tmp_path / "m.cfg")
        runner = CliRunner()
        out = tmp_path / "run"
        r = runner.invoke(main, ["dirl", "--config", str(cfg), "--seed", "4",
                                 "--iterations", "1", "--out", str(out)])
        assert r.exit_code == 0, r.output
        assert "done:" in r.output
        payload = json.loads((out / "run_report.json").read_text())
        assert payload["config"]["master_seed"] == 4
        assert (out / "metrics.csv").exists()
        assert (out / "checkpoints" / "policy.ckpt").exists()

    def test_noisy_demo_run(self, tmp_path):
        cfg = write_cfg(tmp_path / "m.cfg")
        runner = CliRunner()
        out = tmp_path / "nd"
        r = runner.invoke(main, ["noisy-demo", "--sigmas", "0,0.3",
                                 "--config", str(cfg), "--seed", "6",
                                 "--out", str(out)])
        assert r.exit_code == 0, r.output
        report = json.loads((out / "noisy_demo_report.json").read_text())
        assert [row["sigma"] for row in report["rows"]] == [0.0, 0.3]


class TestMisc:
    def test_benchmark_runs(self):
        runner = CliRunner()
        r = runner.invoke(main, ["benchmark", "--frames", "10"])
        assert r.exit_code == 0, r.output
        assert "render" in r.output

    def test_serve_help(self):
        runner = CliRunner()
        r = runner.invoke(main, ["serve", "--help"])
        assert r.exit_code == 0
        assert "--tick-period" in r.output

    def test_unknown_config_key_fails(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("sim.warp_drive 1\n", encoding="utf-8")
        runner = CliRunner()
        r = runner.invoke(main, ["collect", "--episodes", "1", "--config", str(bad),
                                 "--out", str(tmp_path / "x")])
        assert r.exit_code != 0

    def test_missing_config_file_fails(self, tmp_path):
        runner = CliRunner()
        r = runner.invoke(main, ["collect", "--episodes", "1",
                                 "--config", str(tmp_path / "absent.cfg"),
                                 "--out", str(tmp_path / "x")])
        assert r.exit_code != 0
