"""CLI subcommands, exit codes, artifact determinism."""

import numpy as np
import pytest

from msvseg.cli import main
from msvseg.serial import load_checkpoint


def run(args):
    return main(args)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("data")
    assert run(["gen-data", "--out-dir", str(path), "--n", "3", "--classes", "4",
                "--size", "64", "--seed", "5"]) == 0
    return path


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, dataset_dir):
    out = tmp_path_factory.mktemp("run")
    code = run(["train", "--data", str(dataset_dir), "--out-dir", str(out), "--quiet",
                "--set", "train.max_steps=2", "--set", "train.eval_every=1",
                "--set", "train.batch_size=2", "--seed", "3"])
    assert code == 0
    return out


class TestExitCodes:
    def test_unknown_subcommand_is_invalid_args(self):
        assert run(["frobnicate"]) == 1

    def test_missing_required_arg(self):
        assert run(["train"]) == 1

    def test_unknown_config_key_rejected(self, dataset_dir, tmp_path):
        assert run(["train", "--data", str(dataset_dir), "--out-dir", str(tmp_path),
                    "--set", "train.warp_speed=9"]) == 1

    def test_bad_override_format(self, dataset_dir, tmp_path):
        assert run(["train", "--data", str(dataset_dir), "--out-dir", str(tmp_path),
                    "--set", "no_equals_sign"]) == 1

    def test_missing_dataset_dir(self, tmp_path):
        assert run(["train", "--data", str(tmp_path / "missing"),
                    "--out-dir", str(tmp_path)]) == 1

    def test_gradcheck_fast_passes(self):
        assert run(["gradcheck", "--fast", "--skip-model", "--seed", "7"]) == 0

    def test_gradcheck_failure_exits_three(self, monkeypatch):
        from msvseg import cli as cli_mod
        from msvseg.gradcheck import CheckResult

        def fake_suite(**kwargs):
            return [CheckResult("op.broken", 1.0, 1e-4, 1)]

        monkeypatch.setattr(cli_mod, "run_gradient_suite", fake_suite)
        assert run(["gradcheck", "--fast"]) == 3

    def test_divergence_exits_two(self, dataset_dir, tmp_path):
        with np.errstate(over="ignore", invalid="ignore"):
            code = run(["train", "--data", str(dataset_dir), "--out-dir", str(tmp_path),
                        "--quiet", "--set", "train.lr=1e18", "--set", "train.max_steps=8",
                        "--set", "train.eval_every=8"])
        assert code == 2


class TestConfigFile:
    def test_shipped_overfit_config_parses(self, dataset_dir, tmp_path):
        from pathlib import Path
        shipped = Path(__file__).resolve().parent.parent / "configs" / "toy_overfit.cfg"
        code = run(["train", "--data", str(dataset_dir), "--out-dir", str(tmp_path),
                    "--quiet", "--config", str(shipped),
                    "--set", "train.max_steps=2", "--set", "train.eval_every=2"])
        assert code == 0
        assert (tmp_path / "checkpoint.msvc").exists()

    def test_cli_override_beats_file(self, dataset_dir, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("train.max_steps=50\ntrain.eval_every=1\n")
        code = run(["train", "--data", str(dataset_dir), "--out-dir", str(tmp_path),
                    "--quiet", "--config", str(cfg), "--set", "train.max_steps=1"])
        assert code == 0
        log = (tmp_path / "train_log.csv").read_text().splitlines()
        assert len(log) == 2  # header + single step


class TestArtifacts:
    def test_train_writes_checkpoint_and_log(self, trained_dir):
        assert (trained_dir / "checkpoint.msvc").exists()
        log = (trained_dir / "train_log.csv").read_text().splitlines()
        assert log[0] == "epoch,step,lr,loss,dice_loss,ce_loss,mean_dsc,mean_hd95"
        assert len(log) == 3  # eval every step, 2 steps

    def test_eval_writes_metrics(self, trained_dir, dataset_dir, tmp_path, capsys):
        assert run(["eval", "--checkpoint", str(trained_dir / "checkpoint.msvc"),
                    "--data", str(dataset_dir), "--out-dir", str(tmp_path)]) == 0
        text = (tmp_path / "metrics.txt").read_text()
        assert text.startswith("mean_dsc=")
        out = capsys.readouterr().out
        assert "mean_dsc=" in out

    def test_eval_byte_stable(self, trained_dir, dataset_dir, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        for d in (a_dir, b_dir):
            assert run(["eval", "--checkpoint", str(trained_dir / "checkpoint.msvc"),
                        "--data", str(dataset_dir), "--out-dir", str(d)]) == 0
        assert (a_dir / "metrics.txt").read_bytes() == (b_dir / "metrics.txt").read_bytes()

    def test_export_features(self, trained_dir, dataset_dir, tmp_path):
        out = tmp_path / "feat"
        assert run(["export-features", "--checkpoint", str(trained_dir / "checkpoint.msvc"),
                    "--data", str(dataset_dir), "--out-dir", str(out)]) == 0
        files = sorted(p.name for p in out.iterdir())
        assert files == ["decoder_layer_1.pgm", "decoder_layer_2.pgm", "decoder_layer_3.pgm"]

    def test_export_bad_index(self, trained_dir, dataset_dir, tmp_path):
        assert run(["export-features", "--checkpoint", str(trained_dir / "checkpoint.msvc"),
                    "--data", str(dataset_dir), "--out-dir", str(tmp_path),
                    "--index", "99"]) == 1

    def test_bench_scan_csv(self, tmp_path):
        assert run(["bench-scan", "--out-dir", str(tmp_path), "--lengths", "64,128",
                    "--state-size", "4", "--channels", "2", "--chunk", "16"]) == 0
        lines = (tmp_path / "bench_scan.csv").read_text().splitlines()
        assert lines[0] == "path_count,L,N,C,variant,wall_ns,checksum"
        assert len(lines) == 5

    def test_count_prints_reference_for_tiny224(self, capsys):
        assert run(["count", "--preset", "tiny224"]) == 0
        out = capsys.readouterr().out
        assert "35.93" in out and "15.53" in out
        assert "not a pass/fail gate" in out

    def test_count_toy_has_no_reference(self, capsys):
        assert run(["count", "--preset", "toy"]) == 0
        out = capsys.readouterr().out
        assert "35.93" not in out


class TestDeterminism:
    def test_two_trains_byte_identical(self, dataset_dir, tmp_path):
        dirs = [tmp_path / "r1", tmp_path / "r2"]
        for d in dirs:
            code = run(["train", "--data", str(dataset_dir), "--out-dir", str(d), "--quiet",
                        "--set", "train.max_steps=2", "--set", "train.eval_every=1",
                        "--set", "train.batch_size=2", "--seed", "9", "--threads", "1"])
            assert code == 0
        c1 = (dirs[0] / "checkpoint.msvc").read_bytes()
        c2 = (dirs[1] / "checkpoint.msvc").read_bytes()
        assert c1 == c2
        assert (dirs[0] / "train_log.csv").read_bytes() == (dirs[1] / "train_log.csv").read_bytes()

    def test_checkpoint_config_blob_rebuilds_model(self, trained_dir):
        text, tensors = load_checkpoint(trained_dir / "checkpoint.msvc")
        assert "model.base_channels=16" in text
        assert all(arr.dtype == np.float32 for arr in tensors.values())
