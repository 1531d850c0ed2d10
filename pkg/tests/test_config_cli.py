import csv
import subprocess
import sys

import pytest

from unipool.cli import main, split_overrides
from unipool.config import ConfigError, RunConfig, keys, read_config_file
from unipool.train import read_metrics_csv

# a small synthetic problem so CLI runs take seconds
SMALL = ["--data.image_size", "16", "--data.samples_per_class", "4", "--data.test_per_class", "2",
         "--batch-size", "8"]


def write_config(path, text):
    path.write_text(text)
    return path


# ----------------------------------------------------------------- configuration

def test_defaults_follow_tiny_preset():
    cfg = RunConfig.resolve()
    assert cfg.model.arch == "tiny-resnet"
    assert cfg.train.epochs == 30 and cfg.train.lr_decay_interval == 10
    assert cfg.data.source == "synthetic"


def test_paper_preset():
    cfg = RunConfig.resolve(overrides=[("run.scale", "paper")])
    assert (cfg.model.arch, cfg.train.epochs, cfg.train.lr_decay_interval) == ("resnet", 450, 150)
    assert cfg.data.source == "cifar10" and cfg.data.num_classes == 10


def test_precedence_file_then_overrides(tmp_path):
    f = write_config(tmp_path / "c.txt", "train.epochs = 12  # comment\nmodel.arch = tiny-vgg\n\n")
    cfg = RunConfig.resolve(f, [("train.epochs", "7")])
    assert cfg.model.arch == "tiny-vgg"
    assert cfg.train.epochs == 7
    assert cfg.train.lr_decay_interval == 7  # preset interval clamped to the shorter run


def test_explicit_interval_longer_than_run_is_an_error():
    with pytest.raises(ConfigError, match="exceeds"):
        RunConfig.resolve(overrides=[("train.epochs", "5"), ("train.lr_decay_interval", "9")])


def test_pool_shorthand_and_nested_keys():
    cfg = RunConfig.resolve(overrides=[("pool.local", "universal:fc2"), ("pool.global.variant", "universal"),
                                       ("pool.global.b1", "conv"), ("pool.offset", "1,0")])
    assert cfg.pool.local.name == "universal:fc2"
    assert cfg.pool.global_.name == "universal:conv"
    assert cfg.pool.offset == (1, 0)
    cfg = RunConfig.resolve(overrides=[("pool.global", "universal:fc1"), ("pool.global", "max")])
    assert cfg.pool.global_.b1 is None


@pytest.mark.parametrize("key,value,match", [
    ("train.nope", "1", "unknown config key"),
    ("model", "x", "section"),
    ("train.epochs", "ten", "cannot parse"),
    ("pool.local", "universal:conv", "global-pooling"),
    ("pool.global", "median", "variant"),
    ("model.arch", "alexnet", "model.arch"),
    ("data.source", "imagenet", "data.source"),
    ("run.scale", "huge", "run.scale"),
    ("train.precision", "16", "precision"),
])
def test_invalid_settings(key, value, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.resolve(overrides=[(key, value)])


def test_resolved_text_round_trips(tmp_path):
    cfg = RunConfig.resolve(overrides=[("pool.local", "universal:fc1"), ("train.lr0", "0.05"),
                                       ("data.dir", "/tmp/x"), ("pool.shared_b1", "true")])
    path = cfg.write_resolved(tmp_path)
    again = RunConfig.resolve(path)
    assert again == cfg
    listed = [k for k, _ in read_config_file(path)]
    assert listed == keys()


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        read_config_file(tmp_path / "missing.txt")
    with pytest.raises(ConfigError, match="key = value"):
        read_config_file(write_config(tmp_path / "bad.txt", "just words\n"))


def test_split_overrides():
    assert split_overrides(["--epochs", "3", "--pool.local=max"]) == [("train.epochs", "3"), ("pool.local", "max")]


# ----------------------------------------------------------------- commands

def test_train_writes_one_metrics_row_per_epoch(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["train", "--epochs", "30", "--out", str(out), "--quiet"] + SMALL)
    assert rc == 0
    rows = read_metrics_csv(out / "metrics.csv")
    assert len(rows) == 30
    assert (out / "config.resolved").is_file() and (out / "ckpt_30.upl").is_file()
    assert "train.epochs = 30" in (out / "config.resolved").read_text()


def test_train_eval_analyze_pipeline(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["train", "--epochs", "2", "--out", str(out), "--pool.local", "universal:fc1",
               "--pool.global", "universal:fc2", "--run.checkpoint_every", "1"] + SMALL)
    assert rc == 0
    assert (out / "ckpt_1.upl").is_file()
    capsys.readouterr()

    assert main(["eval", "--ckpt", str(out / "ckpt_2.upl")]) == 0
    assert "split=test n=8" in capsys.readouterr().out

    assert main(["analyze", "--ckpt", str(out / "ckpt_2.upl"), "--inputs", "8", "--pgm-inputs", "1"]) == 0
    text = capsys.readouterr().out
    assert "Average" in text and "all" in text
    analysis = out / "analysis"
    assert (analysis / "summary.csv").is_file() and (analysis / "weights.csv").is_file()
    assert any((analysis / "pgm").glob("*_pi.pgm"))


def test_resume_continues_to_the_requested_epoch(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--epochs", "3", "--out", str(out), "--quiet", "--run.checkpoint_every", "1"]
                + SMALL) == 0
    reference = [r["train_loss"] for r in read_metrics_csv(out / "metrics.csv")]
    out2 = tmp_path / "resumed"
    assert main(["train", "--epochs", "3", "--out", str(out2), "--quiet", "--resume", str(out / "ckpt_1.upl")]
                + SMALL) == 0
    resumed = [r["train_loss"] for r in read_metrics_csv(out2 / "metrics.csv")]
    assert resumed == reference[1:]


def test_gradcheck_command_passes(capsys):
    assert main(["gradcheck", "--arch", "tiny-vgg", "--pool.global", "universal:fc2", "--samples", "200"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_gradcheck_console_script_exit_code():
    proc = subprocess.run([sys.executable, "-m", "unipool", "gradcheck", "--arch", "tiny-vgg", "--pool.global",
                           "universal:fc2", "--samples", "50"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip().endswith("PASS")


def test_synth_then_train_from_directory(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--data.image_size", "16", "--data.samples_per_class", "4",
                 "--data.test_per_class", "2", "--train-files", "2"]) == 0
    assert (data / "data_batch_2.bin").is_file()
    out = tmp_path / "run"
    assert main(["train", "--data", "dir", "--data-dir", str(data), "--epochs", "1", "--out", str(out),
                 "--data.image_size", "16", "--batch-size", "8", "--data.train_per_class", "3"]) == 0


def test_sweep_table3_rows(tmp_path, capsys):
    out = tmp_path / "sweep"
    rc = main(["sweep", "--grid", "table3", "--scale", "tiny", "--repeat", "3", "--epochs", "1",
               "--out", str(out), "--data.image_size", "16", "--data.samples_per_class", "2",
               "--data.test_per_class", "1", "--batch-size", "8"])
    assert rc == 0
    with (out / "table3.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 33
    methods = sorted({r["method"] for r in rows})
    assert methods == sorted(["V1", "V2", "V3", "V4", "V5", "V6", "P1", "P2", "P3", "P4", "P5"])
    for m in methods:
        assert sorted(int(r["seed"]) for r in rows if r["method"] == m) == [0, 1, 2]
    with (out / "table3_summary.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 11


# ----------------------------------------------------------------- exit codes

def _err(capsys):
    return capsys.readouterr().err.strip()


def test_usage_errors_exit_1(capsys):
    assert main(["train", "--bogus.key", "1"]) == 1
    assert _err(capsys).startswith("ERROR:1:config:")
    assert main(["train", "--nonsense"]) == 1
    assert _err(capsys).startswith("ERROR:1:usage:")
    assert main([]) == 1
    assert main(["sweep", "--grid", "table9"]) == 1
    assert "table9" in _err(capsys)


def test_data_errors_exit_2(tmp_path, capsys):
    assert main(["train", "--data", "dir", "--data-dir", str(tmp_path / "none"), "--out",
                 str(tmp_path / "r")]) == 2
    assert _err(capsys).startswith("ERROR:2:data:")
    assert main(["eval", "--ckpt", str(tmp_path / "missing.upl")]) == 2


def test_missing_cifar_directory_exit_2(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("UNIPOOL_DATA_DIR", raising=False)
    assert main(["train", "--data", "cifar10", "--out", str(tmp_path / "r")]) == 2
    assert "UNIPOOL_DATA_DIR" in _err(capsys)


def test_numerical_failure_exit_3(tmp_path, capsys):
    rc = main(["train", "--arch", "tiny-vgg", "--pool.local", "max", "--pool.global", "max", "--lr", "1e6",
               "--epochs", "8", "--out", str(tmp_path / "r"), "--quiet", "--precision", "64"] + SMALL)
    assert rc == 3
    assert _err(capsys).startswith("ERROR:3:numerical:")


def test_gradcheck_failure_exit_3(capsys):
    rc = main(["gradcheck", "--arch", "tiny-vgg", "--samples", "20", "--tolerance", "1e-30"])
    assert rc == 3
    assert "FAIL" in capsys.readouterr().out


def test_paper_scale_warns(tmp_path, capsys):
    rc = main(["gradcheck", "--scale", "paper", "--arch", "tiny-vgg", "--samples", "5", "--data.num_classes", "4"])
    assert rc == 0
    assert "not desk-feasible" in capsys.readouterr().err
