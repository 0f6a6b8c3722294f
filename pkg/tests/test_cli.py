"""End-to-end command-line behavior, run in-process via cli.main."""

import json
import shutil

import pytest

from burstnet import cli
from burstnet.model import load_checkpoint
from burstnet.training import TrainingCurve


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny dataset and a short finished training run, shared read-only."""
    ws = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--kind", "adsb", "--classes", 3,
               "--per-class", 12, 12, "--test-per-class", 4,
               "--sample-len", 256, "--seed", 7, "--out", ws / "data") == 0
    assert run("train", "--data", ws / "data", "--network", "small",
               "--out", ws / "run", "--max-iters", 20, "--validate-every", 5,
               "--batch-size", 8, "--checkpoint-every", 10) == 0
    return ws


def test_gen_data_manifest_and_refusal(workspace, capsys):
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert manifest["num_classes"] == 3
    assert manifest["burst_kind"] == "adsb"
    assert run("gen-data", "--kind", "adsb", "--classes", 3,
               "--per-class", 12, 12, "--test-per-class", 4,
               "--sample-len", 256, "--seed", 7, "--out", workspace / "data") == 1
    assert "already exists" in capsys.readouterr().err


def test_gen_data_force_regenerates(workspace, tmp_path):
    dst = tmp_path / "data"
    shutil.copytree(workspace / "data", dst)
    assert run("gen-data", "--kind", "adsb", "--classes", 3,
               "--per-class", 12, 12, "--test-per-class", 4,
               "--sample-len", 256, "--seed", 7, "--out", dst, "--force") == 0


def test_gen_data_reproducible_from_snapshot(workspace, tmp_path):
    assert run("gen-data", "--config", workspace / "data" / "config.json",
               "--out", tmp_path / "replay") == 0
    for shard in sorted((workspace / "data").glob("*.bin")):
        assert (tmp_path / "replay" / shard.name).read_bytes() == shard.read_bytes()
    # snapshot of the replay matches the original byte for byte
    assert ((tmp_path / "replay" / "config.json").read_bytes()
            == (workspace / "data" / "config.json").read_bytes())


def test_acars_text_len_rejected(tmp_path, capsys):
    assert run("gen-data", "--kind", "acars", "--text-len", 221,
               "--out", tmp_path / "d") == 1
    assert "221" in capsys.readouterr().err


def test_missing_out_without_env(monkeypatch, capsys):
    monkeypatch.delenv(cli.RUN_ROOT_ENV, raising=False)
    assert run("gen-data", "--kind", "adsb") == 1
    assert cli.RUN_ROOT_ENV in capsys.readouterr().err


def test_run_root_env_supplies_out(monkeypatch, tmp_path):
    monkeypatch.setenv(cli.RUN_ROOT_ENV, str(tmp_path))
    assert run("gen-data", "--kind", "adsb", "--classes", 2,
               "--per-class", 6, 6, "--test-per-class", 2,
               "--sample-len", 128, "--seed", 1) == 0
    assert (tmp_path / "gen-data" / "manifest.json").exists()


def test_unknown_snapshot_keys_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"bogus_key": 1}')
    assert run("gen-data", "--config", bad, "--out", tmp_path / "d") == 1
    assert "bogus_key" in capsys.readouterr().err


def test_train_snapshot_fully_resolved(workspace):
    cfg = json.loads((workspace / "run" / "config.json").read_text())
    # regime defaults expanded, nothing left implicit
    assert cfg["batch_size"] == 8 and cfg["max_iters"] == 20
    assert cfg["learning_rate"] == 0.03 and cfg["momentum"] == 0.9
    assert cfg["full_scale"] is False


def test_full_scale_defaults_resolve_exact_values():
    cfg = dict(cli.TRAIN_DEFAULTS, full_scale=True)
    tc = cli._resolve_train_config(cfg)
    assert (tc.batch_size, tc.max_iterations, tc.validate_every) == (190, 101_250, 1_350)
    assert tc.momentum == 0.9 and tc.learning_rate == 0.01


def test_train_max_iters_zero_writes_initial_checkpoint(workspace, tmp_path):
    out = tmp_path / "r0"
    assert run("train", "--data", workspace / "data", "--network", "small",
               "--out", out, "--max-iters", 0) == 0
    ckpt = load_checkpoint(out / "checkpoints" / "final.ckpt")
    assert ckpt.iteration == 0


def test_train_class_count_mismatch(workspace, tmp_path, capsys):
    assert run("gen-data", "--kind", "adsb", "--classes", 2,
               "--per-class", 6, 6, "--test-per-class", 2,
               "--sample-len", 256, "--seed", 2, "--out", tmp_path / "d2") == 0
    assert run("eval", "--checkpoint", workspace / "run" / "checkpoints" / "final.ckpt",
               "--data", tmp_path / "d2", "--out", tmp_path / "e") == 1
    assert "classes" in capsys.readouterr().err


def test_eval_summary_and_report(workspace, tmp_path, capsys):
    assert run("eval", "--checkpoint", workspace / "run" / "checkpoints" / "final.ckpt",
               "--data", workspace / "data", "--out", tmp_path / "e") == 0
    out = capsys.readouterr().out
    assert "overall accuracy" in out and "classes above 90%" in out
    lines = (tmp_path / "e" / "reports" / "per_class_accuracy.csv").read_text().splitlines()
    assert lines[0] == "class_id,n_test,accuracy"
    assert len(lines) == 1 + 3


def test_snr_sweep_default_grid_seven_rows(workspace, tmp_path):
    assert run("snr-sweep", "--checkpoint",
               workspace / "run" / "checkpoints" / "final.ckpt",
               "--data", workspace / "data", "--out", tmp_path / "s") == 0
    lines = (tmp_path / "s" / "reports" / "snr_sweep.csv").read_text().splitlines()
    assert lines[0] == "snr_db,accuracy,mean_confidence,n"
    assert len(lines) == 1 + 7


def test_snr_sweep_reproducible_from_snapshot(workspace, tmp_path):
    args = ("--checkpoint", workspace / "run" / "checkpoints" / "final.ckpt",
            "--data", workspace / "data", "--snrs", "inf,6", "--noise-seed", 5)
    assert run("snr-sweep", *args, "--out", tmp_path / "a") == 0
    assert run("snr-sweep", "--config", tmp_path / "a" / "config.json",
               "--out", tmp_path / "b") == 0
    assert ((tmp_path / "a" / "reports" / "snr_sweep.csv").read_bytes()
            == (tmp_path / "b" / "reports" / "snr_sweep.csv").read_bytes())


def test_resume_matches_uninterrupted_run(workspace, tmp_path):
    """Kill-at-iteration-10 simulation: keep the periodic checkpoint and the
    curve prefix, resume, and demand a bit-identical finish."""
    full = workspace / "run"
    resumed = tmp_path / "resumed"
    (resumed / "checkpoints").mkdir(parents=True)
    shutil.copy(full / "config.json", resumed / "config.json")
    shutil.copy(full / "checkpoints" / "iter_00000010.ckpt",
                resumed / "checkpoints" / "iter_00000010.ckpt")
    curve = TrainingCurve.read_csv(full / "metrics.csv")
    curve.points = [p for p in curve.points if p.iteration <= 10]
    curve.write_csv(resumed / "metrics.csv")

    assert run("train", "--out", resumed, "--resume") == 0

    def rows(path):
        c = TrainingCurve.read_csv(path)
        return [(p.iteration, p.train_loss, p.val_accuracy, p.val_loss) for p in c.points]

    assert rows(resumed / "metrics.csv") == rows(full / "metrics.csv")
    assert ((resumed / "checkpoints" / "final.ckpt").read_bytes()
            == (full / "checkpoints" / "final.ckpt").read_bytes())


def test_resume_without_checkpoint_fails(workspace, tmp_path, capsys):
    out = tmp_path / "empty"
    out.mkdir()
    shutil.copy(workspace / "run" / "config.json", out / "config.json")
    assert run("train", "--out", out, "--resume") == 1
    assert "no checkpoint" in capsys.readouterr().err


def test_missing_checkpoint_nonzero_exit(workspace, tmp_path, capsys):
    assert run("eval", "--checkpoint", tmp_path / "nope.ckpt",
               "--data", workspace / "data", "--out", tmp_path / "e") == 1
    assert capsys.readouterr().err.startswith("error:")
