"""End-to-end command-line behaviour on a small synthetic container."""

import os
import subprocess
import sys

import numpy as np
import pytest

from mibench import builder, dataio, evaluation
from mibench.cli import main
from conftest import small_net_spec

GOLDEN = os.path.join(os.path.dirname(__file__), os.pardir, "specs",
                      "eegnet.spec")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = dataio.SynthConfig(class_bands=[(9, 11), (29, 31)], n_channels=4,
                             fs=128.0, n_samples=256, trials_per_class=24,
                             n_subjects=2, snr=1.5, seed=42)
    dataio.write_container(dataio.synth_mi(cfg), base / "synth.eegt")
    builder.save_spec(small_net_spec(), base / "small.spec")
    return base


class TestValidate:
    def test_reference_spec_ok(self, capsys):
        assert main(["validate", "--spec", GOLDEN]) == 0
        out = capsys.readouterr().out
        assert "ok, flatten=240, params=1972" in out

    def test_invalid_spec_exits_2(self, tmp_path, capsys):
        bad = builder.eegnet_spec()
        bad.groups_list = [1, 3, 16, 1]
        text = builder.canonical_spec_text(bad)
        path = tmp_path / "bad.spec"
        path.write_text(text)
        assert main(["validate", "--spec", str(path)]) == 2
        assert "violation" in capsys.readouterr().out

    def test_missing_spec_exits_2(self):
        assert main(["validate", "--spec", "/nonexistent.spec"]) == 2


class TestBuild:
    def test_prints_shapes_and_saves(self, tmp_path, capsys):
        out = tmp_path / "init.eegm"
        assert main(["build", "--spec", GOLDEN, "--seed", "4",
                     "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "flatten dimension: 240" in printed
        assert "trainable parameters: 1972" in printed
        model, spec = builder.load_model(out)
        assert spec == builder.eegnet_spec()
        assert model.param_count() == 1972


class TestRun:
    def test_missing_data_is_config_error_without_outputs(self, workdir):
        out = workdir / "never"
        code = main(["run", "--data", str(workdir / "missing.eegt"),
                     "--method", "fbcsp", "--scheme", "single",
                     "--out", str(out)])
        assert code == 2
        assert not out.exists()

    def test_fbcsp_run_artifacts(self, workdir):
        out = workdir / "run_fbcsp"
        code = main(["run", "--data", str(workdir / "synth.eegt"),
                     "--method", "fbcsp", "--scheme", "single",
                     "--reps", "2", "--seed", "7", "--out", str(out)])
        assert code == 0
        for name in ("results.csv", "results.md", "results.bin",
                     "manifest.cfg"):
            assert (out / name).exists()
        assert (out / "figures" / "accuracy.png").exists()
        logs = list((out / "folds").glob("*.log"))
        assert len(logs) == 4  # 2 subjects x 2 reps
        models = list((out / "models").glob("*.fbcm"))
        assert len(models) == 4
        table = evaluation.load_results(out / "results.bin")
        assert table.columns[0].acc.shape == (2, 2)

    def test_eegnet_run_and_loss_figure(self, workdir):
        out = workdir / "run_net"
        code = main(["run", "--data", str(workdir / "synth.eegt"),
                     "--method", "eegnet", "--spec",
                     str(workdir / "small.spec"), "--scheme", "single",
                     "--epochs", "3", "--reps", "1", "--seed", "7",
                     "--out", str(out)])
        assert code == 0
        assert (out / "figures" / "loss_curves.png").exists()
        assert len(list((out / "models").glob("*.eegm"))) == 2

    def test_manifest_reproduces_results_bitwise(self, workdir):
        first = workdir / "repro_a"
        code = main(["run", "--data", str(workdir / "synth.eegt"),
                     "--method", "fbcsp", "--scheme", "single",
                     "--reps", "1", "--seed", "11", "--out", str(first)])
        assert code == 0
        second = workdir / "repro_b"
        code = main(["run", "--config", str(first / "manifest.cfg"),
                     "--out", str(second)])
        assert code == 0
        assert (first / "results.bin").read_bytes() == \
            (second / "results.bin").read_bytes()
        assert (first / "results.csv").read_bytes() == \
            (second / "results.csv").read_bytes()

    def test_eegnet_without_spec_is_config_error(self, workdir):
        assert main(["run", "--data", str(workdir / "synth.eegt"),
                     "--method", "eegnet", "--scheme", "single"]) == 2

    def test_data_dir_env_fallback(self, workdir, monkeypatch):
        monkeypatch.setenv("MIBENCH_DATA_DIR", str(workdir))
        out = workdir / "run_env"
        code = main(["run", "--data", "synth.eegt", "--method", "fbcsp",
                     "--scheme", "single", "--reps", "1", "--out", str(out)])
        assert code == 0

    def test_corrupt_container_is_data_error(self, workdir):
        bad = workdir / "bad.eegt"
        bad.write_bytes(b"EEGT" + b"\x01\x00\x00\x00" + b"\xff" * 4)
        assert main(["run", "--data", str(bad), "--method", "fbcsp",
                     "--scheme", "single", "--out",
                     str(workdir / "never2")]) == 3


class TestConvert:
    def test_round_trip(self, tmp_path):
        r = np.random.default_rng(0)
        rows = ["file,label,subject,session"]
        for i in range(4):
            np.savetxt(tmp_path / f"t{i}.csv", r.standard_normal((3, 16)),
                       delimiter=",")
            rows.append(f"t{i}.csv,{i % 2},1,{'train' if i % 2 else 'test'}")
        (tmp_path / "manifest.csv").write_text("\n".join(rows) + "\n")
        out = tmp_path / "conv.eegt"
        code = main(["convert", "--manifest", str(tmp_path / "manifest.csv"),
                     "--fs", "250", "--out", str(out)])
        assert code == 0
        assert dataio.read_container(out).n_trials == 4

    def test_missing_manifest_exits_2(self, tmp_path):
        assert main(["convert", "--manifest", str(tmp_path / "no.csv"),
                     "--fs", "250", "--out", str(tmp_path / "o.eegt")]) == 2


class TestReport:
    def test_merge_two_results_with_ttest(self, workdir, capsys):
        run1 = workdir / "run_fbcsp"
        if not (run1 / "results.bin").exists():
            main(["run", "--data", str(workdir / "synth.eegt"),
                  "--method", "fbcsp", "--scheme", "single", "--reps", "2",
                  "--seed", "7", "--out", str(run1)])
        out = workdir / "report"
        code = main(["report", "--results", str(run1 / "results.bin"),
                     str(run1 / "results.bin"), "--out", str(out)])
        assert code == 0
        printed = capsys.readouterr().out
        assert "paired t-test" in printed
        assert (out / "results.csv").exists()
        assert (out / "results.md").exists()
        assert (out / "accuracy.png").exists()

    def test_missing_results_exits_2(self, tmp_path):
        assert main(["report", "--results", str(tmp_path / "no.bin")]) == 2


def test_console_script_is_installed():
    proc = subprocess.run([sys.executable, "-m", "mibench.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "mibench" in proc.stdout
