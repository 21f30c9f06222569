"""
End-to-end tests of the command-line runner and the experiment controller
"""

import csv
import hashlib
import json

import numpy as np
import pytest

from config.app_config import AppConfig
from controllers.experiment_controller import ExperimentController
from scripts.main import EXIT_CONVERGENCE, EXIT_DOMAIN, EXIT_OK, EXIT_VALIDATION, main
from services.exceptions import ValidationError
from services.network_service import save_network


def run(tmp_path, *args):
    return main(["--quiet", "--out-dir", str(tmp_path / "runs"), *args])


def read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as file:
        return list(csv.reader(file))


def read_manifest(directory):
    return json.loads((directory / "manifest.json").read_text(encoding="utf-8"))


class TestSimulate:
    def test_trajectory_and_manifest(self, tmp_path, samples_dir, capsys):
        network = samples_dir / "two_node.json"
        code = run(tmp_path, "simulate", str(network), "--p0", "all=0,node:0=1", "--horizon", "5")
        assert code == EXIT_OK
        directory = tmp_path / "runs" / "simulate"
        rows = read_csv(directory / "trajectory.csv")
        assert rows[0] == ["step", "node", "p", "s"]
        assert len(rows) == 1 + 6 * 2
        step_one = [row for row in rows[1:] if row[0] == "1"]
        assert [float(row[2]) for row in step_one] == pytest.approx([0.5, 0.5])
        assert (directory / "trajectory.gp").is_file()
        manifest = read_manifest(directory)
        assert manifest["command"] == "simulate"
        assert manifest["inputs"][str(network)] == hashlib.sha256(network.read_bytes()).hexdigest()
        assert str(directory / "trajectory.csv") in manifest["outputs"]
        assert manifest["settings"]["spectral"]["max_iter"] == AppConfig.MAX_POWER_ITERATIONS
        assert set(manifest["settings"]) == {"spectral", "dynamics", "training"}
        assert "✅ simulate:" in capsys.readouterr().out

    def test_json_format_has_no_plot_script(self, tmp_path, samples_dir):
        out = tmp_path / "sim"
        code = run(tmp_path, "--format", "json", "simulate", str(samples_dir / "two_node.csv"),
                   "--p0", "all=0.5", "--horizon", "3", "--out", str(out))
        assert code == EXIT_OK
        assert (out / "trajectory.json").is_file()
        assert not (out / "trajectory.gp").exists()
        assert not any(path.endswith(".gp") for path in read_manifest(out)["outputs"])

    def test_streaming_for_long_horizons(self, tmp_path, samples_dir, monkeypatch):
        monkeypatch.setattr(AppConfig, "STREAMING_HORIZON_LIMIT", 2)
        out = tmp_path / "stream"
        code = run(tmp_path, "simulate", str(samples_dir / "two_node.json"), "--p0", "all=0,node:0=1",
                   "--horizon", "4", "--out", str(out))
        assert code == EXIT_OK
        assert read_manifest(out)["config"]["streaming"] is True
        assert len(read_csv(out / "trajectory.csv")) == 1 + 5 * 2

    def test_bad_initial_condition(self, tmp_path, samples_dir, capsys):
        code = run(tmp_path, "simulate", str(samples_dir / "two_node.json"), "--p0", "node:7=1", "--horizon", "2")
        assert code == EXIT_VALIDATION
        assert "node 7" in capsys.readouterr().err

    def test_invalid_network_writes_nothing(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"n": 1, "a": [[1]], "w": [[2.0]]}), encoding="utf-8")
        code = run(tmp_path, "simulate", str(path), "--p0", "all=0", "--horizon", "1")
        assert code == EXIT_VALIDATION
        assert not (tmp_path / "runs").exists()


class TestThreshold:
    def test_boundary_network(self, tmp_path, samples_dir, capsys):
        code = run(tmp_path, "threshold", str(samples_dir / "two_node.json"))
        assert code == EXIT_OK
        out = capsys.readouterr().out.strip()
        assert out.endswith("indeterminate at tolerance")
        report = json.loads((tmp_path / "runs" / "threshold" / "threshold.json").read_text(encoding="utf-8"))
        assert report["spectral_radius"] == pytest.approx(1.0)

    def test_unconverged_estimate_exits_four(self, tmp_path, rng, make_single_net, monkeypatch):
        path = tmp_path / "big.json"
        save_network(make_single_net(rng, 80, density=0.5), path)
        monkeypatch.setattr(AppConfig, "MAX_POWER_ITERATIONS", 1)
        out = tmp_path / "thr"
        code = run(tmp_path, "threshold", str(path), "--out", str(out))
        assert code == EXIT_CONVERGENCE
        assert (out / "threshold.json").is_file()


class TestContinuum:
    def test_ode_single_sample(self, tmp_path, samples_dir):
        out = tmp_path / "ode"
        code = run(tmp_path, "ode", str(samples_dir / "ring_rates.json"), "--p0", "all=0.5",
                   "--t-end", "1", "--dt", "0.1", "--out", str(out))
        assert code == EXIT_OK
        rows = read_csv(out / "timeseries.csv")
        assert rows[0] == ["t", "node", "p"]
        assert len(rows) == 1 + 11 * 4

    def test_consistency_table(self, tmp_path, samples_dir):
        out = tmp_path / "cons"
        code = run(tmp_path, "consistency", str(samples_dir / "ring_rates.json"), "--p0", "node:0=0.9",
                   "--out", str(out))
        assert code == EXIT_OK
        rows = read_csv(out / "consistency.csv")
        assert rows[0] == ["delta", "sup_error", "order_estimate"]
        assert [float(row[0]) for row in rows[1:]] == [0.1, 0.05, 0.025, 0.0125]
        assert all(0.8 <= float(row[2]) <= 1.2 for row in rows[2:])

    def test_multi_particle_epsilon_override(self, tmp_path, samples_dir):
        out = tmp_path / "multi"
        code = run(tmp_path, "consistency", str(samples_dir / "multi_rates.json"), "--p0", "all=0.3",
                   "--deltas", "0.1,0.05", "--epsilon", "0.25", "--out", str(out))
        assert code == EXIT_OK
        assert read_manifest(out)["config"]["epsilon"] == 0.25

    def test_delta_too_large_exits_three(self, tmp_path, samples_dir, capsys):
        code = run(tmp_path, "consistency", str(samples_dir / "ring_rates.json"), "--p0", "all=0.1",
                   "--deltas", "3,2.5")
        assert code == EXIT_DOMAIN
        assert "too large" in capsys.readouterr().err

    def test_unit_epsilon_exits_three(self, tmp_path, samples_dir):
        code = run(tmp_path, "consistency", str(samples_dir / "multi_rates.json"), "--p0", "all=0.1",
                   "--epsilon", "1.0")
        assert code == EXIT_DOMAIN

    def test_increasing_deltas_exit_three(self, tmp_path, samples_dir):
        code = run(tmp_path, "consistency", str(samples_dir / "ring_rates.json"), "--p0", "all=0.1",
                   "--deltas", "0.05,0.1")
        assert code == EXIT_DOMAIN


class TestTrain:
    def write_config(self, tmp_path, **fields):
        settings = {"layer_sizes": [2, 4, 2], "epochs": 2, "batch_size": 32}
        settings.update(fields)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(settings), encoding="utf-8")
        return path

    def test_checkpoints_and_log(self, tmp_path, capsys):
        config = self.write_config(tmp_path)
        out = tmp_path / "train"
        code = run(tmp_path, "--seed", "7", "train", "--config", str(config), "--out", str(out))
        assert code == EXIT_OK
        for name in ("checkpoint_initial.json", "checkpoint_final.json", "training_log.csv", "training_log.gp"):
            assert (out / name).is_file()
        assert read_manifest(out)["seed"] == 7
        assert len(read_csv(out / "training_log.csv")) == 3
        assert "accuracy" in capsys.readouterr().out

    def test_config_seed_kept_without_override(self, tmp_path):
        config = self.write_config(tmp_path, seed=11)
        out = tmp_path / "train"
        assert run(tmp_path, "train", "--config", str(config), "--out", str(out)) == EXIT_OK
        assert read_manifest(out)["seed"] == 11

    def test_zero_learning_rate_keeps_checkpoint(self, tmp_path):
        config = self.write_config(tmp_path, learning_rate=0.0)
        out = tmp_path / "train"
        assert run(tmp_path, "train", "--config", str(config), "--out", str(out)) == EXIT_OK
        initial = json.loads((out / "checkpoint_initial.json").read_text(encoding="utf-8"))
        final = json.loads((out / "checkpoint_final.json").read_text(encoding="utf-8"))
        assert initial == final

    def test_comparison_columns(self, tmp_path):
        config = self.write_config(tmp_path, epochs=1)
        out = tmp_path / "compare"
        assert run(tmp_path, "train", "--compare", "--config", str(config), "--out", str(out)) == EXIT_OK
        header = read_csv(out / "comparison.csv")[0]
        assert len(header) == 1 + 5
        assert (out / "comparison.gp").is_file()

    def test_bad_config_exits_two(self, tmp_path):
        config = self.write_config(tmp_path, epochs=0)
        assert run(tmp_path, "train", "--config", str(config)) == EXIT_VALIDATION


class TestApprox:
    def test_ladder_file(self, tmp_path):
        out = tmp_path / "approx"
        assert run(tmp_path, "approx", "sin", "--widths", "4,8", "--out", str(out)) == EXIT_OK
        rows = read_csv(out / "sin_ladder.csv")
        assert rows[0] == ["width", "sup_error", "rational_sup_error", "rounding_bound"]
        assert [row[0] for row in rows[1:]] == ["4", "8"]

    def test_zero_bias_exits_three(self, tmp_path):
        assert run(tmp_path, "approx", "sin", "--widths", "4", "--b", "0") == EXIT_DOMAIN

    def test_unknown_target_exits_two(self, tmp_path):
        assert run(tmp_path, "approx", "tanh", "--widths", "4") == EXIT_VALIDATION

    def test_bad_widths_exit_two(self, tmp_path):
        assert run(tmp_path, "approx", "sin", "--widths", "4,x") == EXIT_VALIDATION


class TestValidate:
    @pytest.mark.parametrize("name", ["two_node.json", "two_node.csv", "ring_rates.json", "multi_rates.json"])
    def test_samples_are_valid(self, tmp_path, samples_dir, name):
        assert run(tmp_path, "validate", str(samples_dir / name)) == EXIT_OK
        assert not (tmp_path / "runs").exists()

    def test_location_reported(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"n": 2, "a": [[1, 1], [1, 1]], "w": [[0.5, 0.5], [1.5, 0.5]]}),
                        encoding="utf-8")
        assert run(tmp_path, "validate", str(path)) == EXIT_VALIDATION
        assert "w[1][0]" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert run(tmp_path, "validate", str(tmp_path / "absent.json")) == EXIT_VALIDATION


class TestController:
    def test_unknown_format(self):
        with pytest.raises(ValidationError):
            ExperimentController(fmt="xml")

    def test_commands_return_final_state(self, tmp_path, samples_dir):
        controller = ExperimentController(out_dir=str(tmp_path), seed=3)
        result = controller.cmd_simulate(str(samples_dir / "two_node.json"), "all=0", 4)
        np.testing.assert_array_equal(result["final_p"], [0.0, 0.0])
        assert result["trajectory"].startswith(str(tmp_path / "simulate"))
