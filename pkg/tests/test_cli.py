import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from scenario_mpc.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from scenario_mpc.config import ConfigError, ExperimentConfig
from scenario_mpc.datasets import TrajectoryDataset
from scenario_mpc.lti import reconstruct_disturbances
from scenario_mpc.sim import closed_loop_study

FAST = ["--n-scenarios", "20", "--eval-rollouts", "20"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def bounds_table(capsys, *argv):
    assert main(["bounds", *argv]) == EXIT_OK
    return list(csv.DictReader(io.StringIO(capsys.readouterr().out)))


class TestBounds:
    def test_known_dynamics(self, capsys):
        (row,) = bounds_table(capsys, "--eps", "0.1", "--beta", "1e-5", "--d", "26")
        assert row["min_scenarios"] == "523"

    def test_sampled_dynamics(self, capsys):
        (row,) = bounds_table(capsys, "--eps1", "0.1", "--eps2", "0.3", "--beta", "1e-5", "--d", "26")
        assert (row["min_scenarios"], row["explicit_upper_bound"]) == ("1776", "2501")

    def test_degenerate_levels(self, capsys):
        (row,) = bounds_table(capsys, "--eps", "1", "--beta", "1", "--d", "1")
        assert row["min_scenarios"] == "1"

    def test_d_from_dimensions(self, capsys):
        (row,) = bounds_table(capsys, "--eps", "0.1", "--n", "2", "--m", "1", "--horizon", "5")
        assert (row["d"], row["min_scenarios"]) == ("26", "523")
        (row,) = bounds_table(capsys, "--eps", "0.1", "--no-slack")
        assert row["d"] == "25"

    def test_sweep(self, capsys, tmp_path):
        table = bounds_table(capsys, "--eps1", "0.05,0.1", "--eps2", "0.3", "--beta", "1e-5,1e-3", "--d", "5,26",
                             "--out", str(tmp_path))
        assert len(table) == 8
        assert (tmp_path / "bounds.csv").read_text().count("\n") == 9

    @pytest.mark.parametrize("argv", [
        ["--eps", "0"], ["--eps", "1.5"], ["--eps", "0.1", "--beta", "0"], ["--eps", "0.1", "--d", "0"],
        ["--eps", "0.1", "--eps1", "0.1"], ["--eps", "0.1", "--d", "3", "--n", "2"], ["--eps", "abc"],
        ["--eps", "0.1", "--structure", "dense"],
    ])
    def test_usage_errors(self, argv, capsys, tmp_path):
        assert main(["bounds", *argv, "--out", str(tmp_path / "o")]) == EXIT_USAGE
        assert not (tmp_path / "o").exists()


class TestGenData:
    def test_default_dataset(self, tmp_path, capsys):
        assert main(["gen-data", "--out", str(tmp_path), "--hist-count", "4"]) == EXIT_OK
        d_id = TrajectoryDataset.from_csv(tmp_path / "d_id.csv")
        assert len(d_id) == 1 and d_id[0].states.shape == (51, 2)
        assert (tmp_path / "d_id.csv").read_text().count("\n") == 52
        hist = TrajectoryDataset.from_csv(tmp_path / "d_hist.csv")
        assert len(hist) == 4 and hist[0].length == 5
        model = ExperimentConfig().model()
        for traj in (*d_id, *hist):
            eta = reconstruct_disturbances(model, traj).values
            assert np.max(np.abs(eta)) <= 0.02 + 1e-10  # values are written with 12 digits
            assert np.max(np.abs(traj.inputs)) <= 0.5

    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert main(["gen-data", "--out", str(tmp_path / name), "--seed", "5", "--hist-count", "3"]) == EXIT_OK
        for f in ("d_id.csv", "d_hist.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert main(["gen-data", "--out", str(tmp_path / "c"), "--seed", "6", "--hist-count", "3"]) == EXIT_OK
        assert (tmp_path / "c" / "d_id.csv").read_bytes() != (tmp_path / "a" / "d_id.csv").read_bytes()

    def test_line_endings_and_formatting(self, tmp_path):
        main(["gen-data", "--out", str(tmp_path), "--id-length", "3", "--hist-count", "1"])
        raw = (tmp_path / "d_id.csv").read_bytes()
        assert b"\r" not in raw
        digits = [len(v.lstrip("-").replace(".", "").lstrip("0")) for v in raw.decode().split("\n")[1].split(",")[2:]]
        assert max(digits) <= 12

    def test_length_flag(self, tmp_path):
        main(["gen-data", "--out", str(tmp_path), "--id-length", "7", "--hist-count", "1"])
        assert TrajectoryDataset.from_csv(tmp_path / "d_id.csv")[0].length == 7


class TestOpenLoop:
    def test_rows(self, tmp_path):
        assert main(["open-loop", "--out", str(tmp_path), "--mc-realizations", "3", *FAST]) == EXIT_OK
        table = rows(tmp_path / "open_loop.csv")
        assert list(table[0]) == ["variant", "realization", "violation_fraction"]
        assert len(table) == 9
        assert {r["variant"] for r in table} == {"ud_smpc", "ls_smpc", "gt_smpc"}

    def test_zero_realizations_write_nothing(self, tmp_path):
        out = tmp_path / "o"
        assert main(["open-loop", "--out", str(out), "--mc-realizations", "0"]) == EXIT_USAGE
        assert not out.exists()

    def test_given_identification_data(self, tmp_path):
        main(["gen-data", "--out", str(tmp_path), "--hist-count", "1"])
        argv = ["open-loop", "--mc-realizations", "2", *FAST, "--id-data", str(tmp_path / "d_id.csv")]
        assert main([*argv, "--out", str(tmp_path / "a")]) == EXIT_OK
        assert len(rows(tmp_path / "a" / "open_loop.csv")) == 6
        (tmp_path / "bad.csv").write_text("traj_id,k,x_0,u_0\n0,0,1,1\n0,1,1,\n")
        argv[-1] = str(tmp_path / "bad.csv")
        assert main([*argv, "--out", str(tmp_path / "b")]) == EXIT_USAGE
        assert not (tmp_path / "b").exists()


class TestClosedLoop:
    argv = ["--n-grid", "64,128", "--mc-realizations", "20", "--steps", "1", "--seed", "3"]

    def test_rows_and_medians(self, tmp_path):
        assert main(["closed-loop", "--out", str(tmp_path), *self.argv]) == EXIT_OK
        table = rows(tmp_path / "closed_loop.csv")
        assert list(table[0]) == ["variant", "N", "realization", "cost", "violations", "sigma_max"]
        assert len(table) == 3 * 2 * 20

        records = closed_loop_study(["ud_smpc", "ls_smpc", "gt_smpc"], [64, 128], ExperimentConfig().setup(), 20, 1, 3)
        for variant in ("ud_smpc", "ls_smpc", "gt_smpc"):
            for n in (64, 128):
                sel = [r for r in table if r["variant"] == variant and r["N"] == str(n)]
                ref = [r for r in records if r.variant == variant and r.N == n]
                assert np.median([int(r["violations"]) for r in sel]) == np.median([r.violations for r in ref])
                # costs are written with 12 significant digits
                np.testing.assert_allclose(np.median([float(r["cost"]) for r in sel]),
                                           np.median([r.cost for r in ref]), rtol=1e-11)

    def test_byte_identical_rerun(self, tmp_path):
        argv = ["--n-grid", "16", "--mc-realizations", "2", "--steps", "2"]
        for name in ("a", "b"):
            assert main(["closed-loop", "--out", str(tmp_path / name), *argv]) == EXIT_OK
        assert (tmp_path / "a" / "closed_loop.csv").read_bytes() == (tmp_path / "b" / "closed_loop.csv").read_bytes()

    def test_runtime_failure_exit_code(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        argv = ["closed-loop", "--out", str(blocker / "sub"), "--n-grid", "4", "--mc-realizations", "1", "--steps", "1"]
        assert main(argv) == EXIT_RUNTIME
        assert "failed" in capsys.readouterr().err


class TestConfig:
    def test_file_and_flag_precedence(self, tmp_path):
        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text("# desk run\nhorizon = 3\nn_grid = 8, 16\nid_length = 9\nseed = 4\n")
        out = tmp_path / "out"
        argv = ["gen-data", "--config", str(cfg_path), "--id-length", "6", "--out", str(out), "--hist-count", "2"]
        assert main(argv) == EXIT_OK
        assert TrajectoryDataset.from_csv(out / "d_id.csv")[0].length == 6
        assert TrajectoryDataset.from_csv(out / "d_hist.csv")[0].length == 3
        again = tmp_path / "again"
        main(["gen-data", "--id-length", "6", "--horizon", "3", "--seed", "4", "--out", str(again), "--hist-count", "2"])
        assert (out / "d_id.csv").read_bytes() == (again / "d_id.csv").read_bytes()

    def test_matrix_values(self):
        cfg = ExperimentConfig().with_values(ExperimentConfig.parse_text("a = 1, 0; 0, 1\nb = 0; 2\n"))
        np.testing.assert_array_equal(cfg.model().a, np.eye(2))
        np.testing.assert_array_equal(cfg.model().b, [[0.0], [2.0]])

    @pytest.mark.parametrize("text", ["horizon 3", "horizon = x", "colour = red", "a = 1, 2; 3"])
    def test_bad_config_text(self, text):
        with pytest.raises(ConfigError):
            ExperimentConfig.parse_text(text)

    def test_bad_config_file_exit_code(self, tmp_path):
        cfg_path = tmp_path / "bad.cfg"
        cfg_path.write_text("horizon = 0\n")
        assert main(["open-loop", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == EXIT_USAGE
        assert main(["open-loop", "--config", str(tmp_path / "missing.cfg")]) == EXIT_USAGE
        assert not (tmp_path / "o").exists()

    @pytest.mark.parametrize("argv", [
        ["--seed", "-1"], ["--seed", str(2**64)], ["--eps1", "0"], ["--beta", "2"], ["--x0", "1,2,3"],
        ["--variants", "ud_smpc,mpc"], ["--structure", "dense"], ["--q-stage", "1,2;3,4"], ["--workers", "0"],
    ])
    def test_validation_errors(self, argv, tmp_path):
        assert main(["closed-loop", *argv, "--out", str(tmp_path / "o")]) == EXIT_USAGE
        assert not (tmp_path / "o").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "scenario_mpc", "bounds", "--eps", "0.1", "--d", "26"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0 and ",523," in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "scenario_mpc", "frobnicate"], capture_output=True, cwd=tmp_path)
    assert proc.returncode == 2
