"""Command-line interface: subcommands, output files and exit codes."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from coagfrag import cli
from coagfrag.cli import DIAG_COLUMNS
from coagfrag.state import load_state_csv

TINY_TOML = """\
seed = 3

[kernel]
kind = "constant"
scale = 1.0

[grid]
n = 16
kind = "uniform"
lattice = true

[initial]
kind = "spikes"
spikes = [[0.0625, 1.0]]

[solver]
scheme = "euler"
t_final = 0.25
dt_max = 0.01
snapshot_stride = 10
"""

DB_SMALL_TOML = """\
seed = 0

[kernel]
kind = "constant"
scale = 1.0

[fragmentation]
kind = "detailed_balance"
profile = "exponential"
amplitude = 1.0
rate = 1.0
F0 = 0.5
gamma = 0.0

[reservoir]
profile = "exponential"
amplitude = 1.0
decay = 1.0

[grid]
n = 50
kind = "uniform"
lattice = true

[initial]
kind = "density"
profile = "uniform"
amplitude = 1.0
support = [0.0, 1.0]

[solver]
scheme = "heun"
t_final = 2.0
dt_max = 0.05
snapshot_stride = 5

[analysis]
entropy = true
dissipation = true
"""

UNBALANCED_TOML = """\
seed = 0

[kernel]
kind = "constant"
scale = 1.0

[fragmentation]
kind = "constant"
scale = 2.0

[reservoir]
profile = "exponential"
amplitude = 1.0
decay = 1.0

[grid]
n = 32
kind = "uniform"
lattice = true

[initial]
kind = "density"
profile = "uniform"
amplitude = 1.0
support = [0.0, 1.0]

[solver]
scheme = "heun"
t_final = 0.5
dt_max = 0.05
"""

ZERO_RESERVOIR_TOML = """\
seed = 0

[kernel]
kind = "constant"
scale = 1.0

[grid]
n = 16
kind = "uniform"
lattice = true

[initial]
kind = "spikes"
spikes = [[0.0625, 1.0]]

[solver]
scheme = "euler"
t_final = 0.1
dt_max = 0.01
"""

STIFF_TOML = """\
seed = 0

[kernel]
kind = "constant"
scale = 1e12

[grid]
n = 8
kind = "uniform"
lattice = true

[initial]
kind = "spikes"
spikes = [[0.125, 1.0]]

[solver]
scheme = "euler"
t_final = 1.0
dt_max = 0.5
"""

COARSE_ORACLE_TOML = """\
seed = 0

[kernel]
kind = "constant"
scale = 1.0

[grid]
n = 64
kind = "uniform"
lattice = true

[initial]
kind = "spikes"
spikes = [[0.015625, 1.0]]

[solver]
scheme = "euler"
t_final = 1.0
dt_max = 0.25
snapshot_stride = 100
"""


def write_scenario(dirpath, name, text):
    path = dirpath / f"{name}.toml"
    path.write_text(text)
    return str(path)


def read_columns(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    cols = {h: np.array([float(r[i]) for r in data]) for i, h in enumerate(header)}
    return header, cols


class TestRunCommand:
    def test_bundled_lattice_outputs(self, tmp_path, capsys):
        out = tmp_path / "res"
        assert cli.main(["run", "--scenario", "lattice_oracle", "--out", str(out)]) == 0
        assert "lattice_oracle" in capsys.readouterr().out

        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "run"
        assert manifest["seed"] == 0
        summary = manifest["summary"]
        files = sorted(out.glob("snapshot_*.csv"))
        assert summary["n_snapshots"] == len(manifest["snapshots"]) == len(files)
        assert files[0].name == "snapshot_00000.csv"
        assert manifest["snapshots"][0]["t"] == 0.0
        assert manifest["snapshots"][-1]["t"] == pytest.approx(1.0, abs=1e-12)
        assert summary["final_t"] == pytest.approx(1.0, abs=1e-12)
        assert 0.0 < summary["final_m0"] < 1.0
        assert 0.0 < summary["final_m1"] <= 0.015625 * (1.0 + 1e-12)
        assert summary["final_atom"] >= 0.0

        header, cols = read_columns(out / "diagnostics.csv")
        assert tuple(header) == DIAG_COLUMNS
        assert cols["t"][0] == 0.0
        assert cols["t"][-1] == pytest.approx(1.0, abs=1e-12)

        final = load_state_csv(files[-1])
        assert final.total == pytest.approx(summary["final_m0"], rel=1e-12)
        assert final.atom == pytest.approx(summary["final_atom"], rel=1e-12)

    def test_rerun_is_bitwise_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert cli.main(["run", "--scenario", "lattice_oracle", "--out", str(out)]) == 0
        for name in ("manifest.json", "diagnostics.csv", "snapshot_00000.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        last = sorted(out1.glob("snapshot_*.csv"))[-1].name
        assert (out1 / last).read_bytes() == (out2 / last).read_bytes()

    def test_seed_and_snapshot_overrides(self, tmp_path):
        out = tmp_path / "res"
        code = cli.main(
            ["run", "--scenario", "lattice_oracle", "--out", str(out), "--seed", "7", "--snapshots", "250"]
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 7
        n = manifest["summary"]["n_snapshots"]
        assert n == len(sorted(out.glob("snapshot_*.csv")))
        assert n < 8  # default stride of 100 keeps more than ten

    def test_snapshots_must_be_positive(self, tmp_path, capsys):
        scenario = write_scenario(tmp_path, "tiny", TINY_TOML)
        assert cli.main(["run", "--scenario", scenario, "--out", str(tmp_path / "o"), "--snapshots", "0"]) == 2
        assert "error" in capsys.readouterr().err

    def test_multiple_scenarios_default_dirs(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        s1 = write_scenario(tmp_path, "t1", TINY_TOML)
        s2 = write_scenario(tmp_path, "t2", TINY_TOML)
        assert cli.main(["run", "--scenario", s1, s2]) == 0
        assert (tmp_path / "out-t1" / "manifest.json").exists()
        assert (tmp_path / "out-t2" / "manifest.json").exists()

    def test_multiple_scenarios_with_out_requires_batch(self, tmp_path, capsys):
        s1 = write_scenario(tmp_path, "t1", TINY_TOML)
        s2 = write_scenario(tmp_path, "t2", TINY_TOML)
        assert cli.main(["run", "--scenario", s1, s2, "--out", str(tmp_path / "o")]) == 2
        assert "--batch" in capsys.readouterr().err

    def test_batch_runs_in_subfolders(self, tmp_path, monkeypatch):
        monkeypatch.setenv("COAGFRAG_WORKERS", "2")
        s1 = write_scenario(tmp_path, "t1", TINY_TOML)
        s2 = write_scenario(tmp_path, "t2", TINY_TOML)
        out = tmp_path / "batch"
        assert cli.main(["run", "--scenario", s1, s2, "--out", str(out), "--batch"]) == 0
        m1 = json.loads((out / "t1" / "manifest.json").read_text())
        m2 = json.loads((out / "t2" / "manifest.json").read_text())
        assert m1["summary"] == m2["summary"]

    def test_unknown_scenario_name(self, tmp_path, capsys):
        assert cli.main(["run", "--scenario", "no_such_thing", "--out", str(tmp_path / "o")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_invalid_scenario_leaves_no_outputs(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        bad = tmp_path / "bad.toml"
        bad.write_text(TINY_TOML + "\nunknown_section_key = 1\n")
        assert cli.main(["run", "--scenario", str(bad)]) == 2
        assert "error" in capsys.readouterr().err
        assert not (tmp_path / "out-bad").exists()

    def test_stiff_scenario_exits_3(self, tmp_path, capsys):
        scenario = write_scenario(tmp_path, "stiff", STIFF_TOML)
        assert cli.main(["run", "--scenario", scenario, "--out", str(tmp_path / "o")]) == 3
        assert "error" in capsys.readouterr().err

    def test_pure_coagulation_count_is_nonincreasing(self, tmp_path):
        scenario = write_scenario(tmp_path, "tiny", TINY_TOML)
        out = tmp_path / "res"
        assert cli.main(["run", "--scenario", scenario, "--out", str(out)]) == 0
        _, cols = read_columns(out / "diagnostics.csv")
        assert np.all(np.diff(cols["m0"]) <= 1e-12)
        assert cols["m0"][-1] < cols["m0"][0]

    def test_entropy_and_dissipation_outputs(self, tmp_path):
        scenario = write_scenario(tmp_path, "relax", DB_SMALL_TOML)
        out = tmp_path / "res"
        assert cli.main(["run", "--scenario", scenario, "--out", str(out)]) == 0

        _, diag = read_columns(out / "diagnostics.csv")
        entropy = diag["entropy"]
        assert np.all(np.isfinite(entropy))
        assert np.all(np.diff(entropy) <= 1e-10)
        assert entropy[-1] < entropy[0]

        header, diss = read_columns(out / "dissipation.csv")
        assert header == ["t", "interior", "overflow", "exchange", "total"]
        assert np.all(diss["total"] >= -1e-10)
        recombined = diss["interior"] + diss["overflow"] + diss["exchange"]
        assert np.allclose(recombined, diss["total"], rtol=1e-12, atol=1e-300)


class TestEquilibriumCommand:
    def test_balanced_scenario(self, tmp_path, capsys):
        out = tmp_path / "eq"
        assert cli.main(["equilibrium", "--scenario", "detailed_balance_relax", "--out", str(out)]) == 0
        captured = capsys.readouterr()
        assert "pair-balance" in captured.out
        assert captured.err == ""

        report = json.loads((out / "equilibrium.json").read_text())
        assert report["probe_spread"] < 1e-10
        assert report["pair_balance"]["max_residual"] < 1e-10

        _, cols = read_columns(out / "equilibrium.csv")
        assert np.allclose(cols["stationary_density"], np.exp(-cols["pivot"]), rtol=1e-8)

    def test_unbalanced_scenario_notes_and_passes(self, tmp_path, capsys):
        scenario = write_scenario(tmp_path, "mismatch", UNBALANCED_TOML)
        assert cli.main(["equilibrium", "--scenario", scenario, "--out", str(tmp_path / "eq")]) == 0
        captured = capsys.readouterr()
        assert "not in pair balance" in captured.err
        report = json.loads((tmp_path / "eq" / "equilibrium.json").read_text())
        assert report["pair_balance"]["max_residual"] > 1e-6

    def test_zero_reservoir_is_rejected(self, tmp_path, capsys):
        scenario = write_scenario(tmp_path, "dry", ZERO_RESERVOIR_TOML)
        assert cli.main(["equilibrium", "--scenario", scenario, "--out", str(tmp_path / "eq")]) == 2
        assert "error" in capsys.readouterr().err


class TestCompareOracleCommand:
    def test_lattice_scenario_passes(self, tmp_path, capsys):
        out = tmp_path / "cmp"
        assert cli.main(["compare-oracle", "--scenario", "lattice_oracle", "--out", str(out)]) == 0
        assert "PASS" in capsys.readouterr().out

        report = json.loads((out / "comparison.json").read_text())
        assert report["passed"] is True
        assert report["tolerance"] == 1e-3
        rows = report["checkpoints"]
        assert [r["t"] for r in rows] == [0.0, 0.25, 0.5, 1.0]
        assert rows[0]["m0_rel_error"] == 0.0 and rows[0]["m1_rel_error"] == 0.0
        for row in rows:
            assert row["m0_rel_error"] < 1e-3
            assert row["m1_rel_error"] < 1e-3
        assert report["sup_rel_error"] < 1e-3

        header, cols = read_columns(out / "comparison.csv")
        assert header == ["species", "size", "reference", "solver", "abs_error"]
        assert len(cols["species"]) == report["n_species"] == 64

    def test_coarse_steps_fail(self, tmp_path, capsys):
        scenario = write_scenario(tmp_path, "coarse", COARSE_ORACLE_TOML)
        out = tmp_path / "cmp"
        assert cli.main(["compare-oracle", "--scenario", scenario, "--out", str(out)]) == 2
        captured = capsys.readouterr()
        assert "FAIL" in captured.out
        assert "disagrees" in captured.err

        report = json.loads((out / "comparison.json").read_text())
        assert report["passed"] is False
        assert max(r["m0_rel_error"] for r in report["checkpoints"]) > 1e-3

    def test_non_lattice_scenario_is_rejected(self, tmp_path, capsys):
        assert cli.main(["compare-oracle", "--scenario", "pure_coag_decay", "--out", str(tmp_path / "o")]) == 2
        assert "lattice" in capsys.readouterr().err


class TestValidateKernelCommand:
    def test_bundled_bounds_hold(self, tmp_path, capsys):
        assert cli.main(["validate-kernel", "--scenario", "growth_envelope"]) == 0
        assert "max violation" in capsys.readouterr().out
        assert not list(tmp_path.glob("**/validate_kernel.json"))

        out = tmp_path / "val"
        assert cli.main(["validate-kernel", "--scenario", "growth_envelope", "--out", str(out)]) == 0
        report = json.loads((out / "validate_kernel.json").read_text())
        assert report["coagulation"]["max_violation"] <= 1e-9
        assert report["fragmentation"]["max_violation"] <= 1e-9
        assert report["coagulation"]["n_samples"] > 0


class TestDecayFitCommand:
    def test_bundled_decay_rate(self, tmp_path, capsys):
        out = tmp_path / "fit"
        assert cli.main(["decay-fit", "--scenario", "pure_coag_decay", "--out", str(out)]) == 0
        assert "rate=" in capsys.readouterr().out

        report = json.loads((out / "decay_fit.json").read_text())
        assert report["mode"] == "exponential"
        assert report["rate"] == pytest.approx(0.8020024186490822, rel=1e-9)
        assert report["r_squared"] > 0.999
        assert (out / "diagnostics.csv").exists()

    def test_requires_decay_fit_analysis(self, tmp_path, capsys):
        scenario = write_scenario(tmp_path, "tiny", TINY_TOML)
        assert cli.main(["decay-fit", "--scenario", scenario]) == 2
        assert "decay_fit" in capsys.readouterr().err


class TestEntryPoints:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["--version"])
        assert excinfo.value.code == 0
        assert "coagfrag" in capsys.readouterr().out

    def test_subcommand_required(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            cli.main([])
        assert excinfo.value.code == 2

    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "coagfrag", "--version"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert proc.stdout.startswith("coagfrag ")
