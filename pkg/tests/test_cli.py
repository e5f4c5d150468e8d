"""End-to-end command tests through main(argv), plus chart rendering."""
import json
import os
import shutil
import subprocess

import numpy as np
import pytest

from hlab import charts, cli, maddpg, world


TINY = ["--episodes", "2", "--max-episode-length", "8",
        "--learning-start", "8", "--learning-frequency", "4",
        "--batch-size", "4", "--memory-size", "32", "--hidden", "8"]


def run_train(tmp_path, run_id="r1", seed="3", extra=()):
    rc = cli.main(["train", "--scenario", "a", "--seed", seed,
                   "--out", str(tmp_path), "--run-id", run_id, "--quiet",
                   *TINY, *extra])
    assert rc == cli.EXIT_OK
    return tmp_path / run_id


class TestConfigResolution:
    def _args(self, argv):
        return cli.build_parser().parse_args(argv)

    def test_defaults_when_nothing_given(self):
        cfg = cli._resolve_config(self._args(["train"]))
        assert cfg == maddpg.TrainConfig()

    def test_flag_overrides_default(self):
        cfg = cli._resolve_config(self._args(
            ["train", "--gamma", "0.5", "--batch-size", "32",
             "--hidden", "16,8", "--logit-reg", "0.002"]))
        assert cfg.gamma == 0.5
        assert cfg.batch_size == 32
        assert cfg.hidden == (16, 8)
        assert cfg.actor_logit_reg == 0.002

    def test_config_file_then_flag_precedence(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"gamma": 0.9, "tau": 0.5}))
        cfg = cli._resolve_config(self._args(
            ["train", "--config", str(path), "--gamma", "0.8"]))
        assert cfg.gamma == 0.8  # flag beats file
        assert cfg.tau == 0.5  # file beats default
        assert cfg.batch_size == 1256  # default untouched

    def test_unknown_file_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"gama": 0.9}))
        with pytest.raises(ValueError, match="unknown"):
            cli._resolve_config(self._args(["train", "--config", str(path)]))

    def test_scenario_and_seed_flags(self):
        cfg = cli._resolve_config(self._args(
            ["train", "--scenario", "c", "--seed", "99"]))
        assert cfg.scenario_id == "c" and cfg.seed == 99


class TestTrainCommand:
    def test_run_layout(self, tmp_path, capsys):
        run_dir = run_train(tmp_path, extra=["--checkpoint-every", "1"])
        for rel in ("manifest.json", "scenario.json", "rewards.csv",
                    "checkpoints/final/agent_1.json",
                    "checkpoints/ep_1/agent_1.json"):
            assert (run_dir / rel).exists(), rel
        out = capsys.readouterr().out
        assert "run dir:" in out and "episodes: 2" in out

        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["kind"] == "train"
        assert manifest["scenario_id"] == "a"
        assert manifest["config"]["batch_size"] == 4
        for rel in manifest["artifacts"]["checkpoints"]:
            assert (run_dir / rel).is_dir()

        totals, smoothed = maddpg.read_rewards_csv(run_dir / "rewards.csv")
        assert totals.shape == (2,) and smoothed.shape == (2,)

    def test_byte_identical_repeat(self, tmp_path):
        d1 = run_train(tmp_path / "x", run_id="a1")
        d2 = run_train(tmp_path / "y", run_id="a2")
        assert (d1 / "rewards.csv").read_bytes() == \
            (d2 / "rewards.csv").read_bytes()
        for k in (1, 2, 3):
            assert (d1 / f"checkpoints/final/agent_{k}.json").read_bytes() \
                == (d2 / f"checkpoints/final/agent_{k}.json").read_bytes()

    def test_divergent_seed_changes_nothing_else(self, tmp_path):
        d1 = run_train(tmp_path, run_id="s3", seed="3")
        d2 = run_train(tmp_path, run_id="s4", seed="4")
        m1 = json.loads((d1 / "manifest.json").read_text())
        m2 = json.loads((d2 / "manifest.json").read_text())
        assert m1["seed"] == 3 and m2["seed"] == 4


class TestAnalyzeCommand:
    def test_analyze_and_replay_round_trip(self, tmp_path, capsys):
        run_dir = run_train(tmp_path)
        rc = cli.main(["analyze",
                       "--checkpoint", str(run_dir / "checkpoints/final"),
                       "--scenario", "a", "--out", str(tmp_path),
                       "--run-id", "an1", "--svg", "--rollouts", "2"])
        assert rc == cli.EXIT_OK
        an = tmp_path / "an1"
        for rel in ("trajectory.csv", "trace.csv", "report.json",
                    "trajectory_2.csv", "trace_2.csv", "report_2.json",
                    "charts/dependency.svg", "charts/sensitivity.svg",
                    "manifest.json"):
            assert (an / rel).exists(), rel
        report = json.loads((an / "report.json").read_text())
        assert report["pattern"] in ("persistent_dominance",
                                     "alternating_dominance")
        assert all(s["leader"] in (1, 2, 3) for s in report["segments"])
        out = capsys.readouterr().out
        assert "pattern:" in out

        rc = cli.main(["replay", str(an / "trajectory.csv")])
        assert rc == cli.EXIT_OK

    def test_incompatible_scenario_exits_3(self, tmp_path, capsys):
        run_dir = run_train(tmp_path)
        rc = cli.main(["analyze",
                       "--checkpoint", str(run_dir / "checkpoints/final"),
                       "--scenario", "c", "--out", str(tmp_path)])
        assert rc == cli.EXIT_INCOMPATIBLE
        assert "actor expects" in capsys.readouterr().err

    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        rc = cli.main(["analyze", "--checkpoint",
                       str(tmp_path / "nope"), "--out", str(tmp_path)])
        assert rc == cli.EXIT_USAGE


class TestReplayCommand:
    def test_tampered_log_exits_5(self, tmp_path, capsys):
        run_dir = run_train(tmp_path)
        cli.main(["analyze", "--checkpoint",
                  str(run_dir / "checkpoints/final"), "--out", str(tmp_path),
                  "--run-id", "an2"])
        path = tmp_path / "an2" / "trajectory.csv"
        lines = path.read_text().splitlines()
        cells = lines[3].split(",")
        cells[1] = repr(float(cells[1]) + 0.25)
        lines[3] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        rc = cli.main(["replay", str(path)])
        assert rc == cli.EXIT_VALIDATION
        assert "replay failed" in capsys.readouterr().err

    def test_foreign_csv_exits_5(self, tmp_path, capsys):
        path = tmp_path / "junk.csv"
        path.write_text("a,b\n1,2\n")
        assert cli.main(["replay", str(path)]) == cli.EXIT_VALIDATION

    def test_missing_file_exits_2(self, tmp_path):
        assert cli.main(["replay", str(tmp_path / "none.csv")]) \
            == cli.EXIT_USAGE


class TestSweepCommand:
    def test_two_seed_sweep(self, tmp_path, capsys):
        rc = cli.main(["sweep", "--scenario", "a", "--seeds", "3,4",
                       "--out", str(tmp_path), *TINY,
                       "--checkpoint-every", "0"])
        assert rc == cli.EXIT_OK
        summary = tmp_path / "sweep-a-summary.csv"
        assert summary.exists()
        rows = summary.read_text().splitlines()
        assert rows[0] == ("seed,pattern,leader_sequence,"
                           "final_smoothed_reward,success,error")
        assert len(rows) == 3
        assert rows[1].startswith("3,") and rows[2].startswith("4,")
        for seed in (3, 4):
            d = tmp_path / f"sweep-a-seed{seed}"
            manifest = json.loads((d / "manifest.json").read_text())
            assert manifest["kind"] == "train"
            assert "reports" in manifest["artifacts"]
            assert (d / "report.json").exists()
            assert (d / "trajectory.csv").exists()

    def test_sweep_matches_train_plus_analyze(self, tmp_path):
        cli.main(["sweep", "--scenario", "a", "--seeds", "3", "--out",
                  str(tmp_path / "sw"), *TINY, "--checkpoint-every", "0"])
        run_train(tmp_path / "tr", run_id="sweep-a-seed3")
        a = (tmp_path / "sw/sweep-a-seed3/rewards.csv").read_bytes()
        b = (tmp_path / "tr/sweep-a-seed3/rewards.csv").read_bytes()
        assert a == b

    def test_process_pool_path_same_rows(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HLAB_THREADS", "2")
        rc = cli.main(["sweep", "--scenario", "a", "--seeds", "3,4",
                       "--out", str(tmp_path), *TINY,
                       "--checkpoint-every", "0"])
        assert rc == cli.EXIT_OK
        rows = (tmp_path / "sweep-a-summary.csv").read_text().splitlines()
        assert len(rows) == 3

    def test_bad_seed_list_exits_2(self, tmp_path):
        rc = cli.main(["sweep", "--seeds", "3,x", "--out", str(tmp_path)])
        assert rc == cli.EXIT_USAGE


class TestParser:
    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            cli.main([])
        assert err.value.code == 2

    def test_unknown_scenario_rejected_by_parser(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(["train", "--scenario", "z"])

    def test_installed_entry_point(self):
        exe = shutil.which("hlab")
        assert exe, "console script not installed"
        proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "train" in proc.stdout and "replay" in proc.stdout


class TestCharts:
    def test_deterministic_svg(self, rng):
        deps = rng.normal(size=(30, 3))
        a = charts.dependency_chart(deps, "a", 50)
        b = charts.dependency_chart(deps.copy(), "a", 50)
        assert a == b
        assert a.startswith("<svg") and a.rstrip().endswith("</svg>")

    def test_series_and_labels_present(self, rng):
        deps = rng.normal(size=(10, 3))
        svg = charts.dependency_chart(deps, "b", 50)
        for label in ("D_1", "D_2", "D_3"):
            assert label in svg
        sens = rng.random(size=(10, 3, 3))
        svg2 = charts.sensitivity_chart(sens, "b", 50)
        for label in ("grad_1_2", "grad_2_1", "grad_3_2"):
            assert label in svg2

    def test_values_clamped_to_fixed_range(self):
        deps = np.full((5, 3), 1e9)
        svg = charts.dependency_chart(deps, "a", 50)
        assert "1e+09" not in svg

    def test_reward_chart_renders(self):
        totals = np.linspace(-2000, 2500, 200)
        smoothed = maddpg.trailing_mean(totals, 100)
        svg = charts.reward_chart(totals, smoothed, "a")
        assert svg.count("<polyline") >= 2  # raw + smoothed
