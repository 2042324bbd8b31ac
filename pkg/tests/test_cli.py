import json
import os
import subprocess
import sys

import numpy as np
import pytest

from aib.checkpoint import load_arrays

BASE_CFG = """\
dataset=mnist
classes=0,1
per_class_train=20
per_class_test=6
augment=false
latent_dim=8
num_anchors=5
n_att_samples=2
n_z_samples=2
backbone_widths=8,16
encoder_widths=
epochs=1
batch_size=16
base_lr=0.03
seed=0
"""


def run_cli(*args, env_extra=None):
    env = dict(os.environ)
    env.pop("AIB_DATA_DIR", None)
    if env_extra:
        env.update(env_extra)
    proc = subprocess.run(
        [sys.executable, "-m", "aib", *args],
        capture_output=True,
        text=True,
        env=env,
        timeout=300,
    )
    return proc


def last_json(stdout: str) -> dict:
    return json.loads(stdout.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """One synth + train pipeline shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    out_dir = root / "run"
    synth = run_cli("synth", "--out", str(data_dir), "--n-train", "40",
                    "--n-test", "12", "--seed", "7")
    assert synth.returncode == 0, synth.stderr
    cfg_path = root / "run.cfg"
    cfg_path.write_text(BASE_CFG + f"data_dir={data_dir}\nout_dir={out_dir}\n")
    trained = run_cli("train", "--config", str(cfg_path))
    assert trained.returncode == 0, trained.stderr
    return {
        "root": root,
        "data_dir": data_dir,
        "out_dir": out_dir,
        "cfg": cfg_path,
        "train_stdout": trained.stdout,
    }


def test_synth_writes_idx_files(cli_run):
    names = sorted(os.listdir(cli_run["data_dir"]))
    assert len(names) == 4
    info = last_json(cli_run["train_stdout"])
    assert set(info) >= {"best_acc", "final_acc", "steps", "checkpoint"}


def test_train_outputs(cli_run):
    out = cli_run["out_dir"]
    for name in ("config.cfg", "metrics.jsonl", "checkpoint.bin",
                 "checkpoint_best.bin"):
        assert (out / name).exists(), name
    info = last_json(cli_run["train_stdout"])
    assert info["steps"] == 3  # 40 samples, batch 16, 1 epoch
    assert 0.0 <= info["final_acc"] <= 1.0
    # the resolved config names every key, sorted
    lines = (out / "config.cfg").read_text().splitlines()
    assert lines == sorted(lines)
    assert "base_lr=0.03" in lines
    # checkpoint parses back
    arrays = load_arrays(str(out / "checkpoint.bin"))
    assert "anchors" in arrays


def test_train_rerun_is_byte_identical(cli_run, tmp_path):
    out2 = tmp_path / "run2"
    rerun = run_cli("train", "--config", str(cli_run["cfg"]),
                    "--set", f"out_dir={out2}")
    assert rerun.returncode == 0, rerun.stderr
    first = cli_run["out_dir"]
    assert (out2 / "metrics.jsonl").read_bytes() == (first / "metrics.jsonl").read_bytes()
    assert (out2 / "checkpoint.bin").read_bytes() == (first / "checkpoint.bin").read_bytes()


def test_eval_modes(cli_run):
    ckpt = str(cli_run["out_dir"] / "checkpoint.bin")
    mean = run_cli("eval", "--config", str(cli_run["cfg"]), "--checkpoint", ckpt)
    assert mean.returncode == 0, mean.stderr
    out = last_json(mean.stdout)
    assert out["mode"] == "mean"
    assert out["n"] == 12
    assert 0.0 <= out["accuracy"] <= 1.0
    stoch = run_cli("eval", "--config", str(cli_run["cfg"]), "--checkpoint", ckpt,
                    "--mode", "stochastic", "--seed", "3")
    assert stoch.returncode == 0, stoch.stderr
    assert last_json(stoch.stdout)["mode"] == "stochastic"
    # per-term breakdown rides along
    assert "nll" in out and "kl" in out


def test_interp_command(cli_run, tmp_path):
    ckpt = str(cli_run["out_dir"] / "checkpoint.bin")
    out = tmp_path / "interp"
    proc = run_cli("interp", "--config", str(cli_run["cfg"]), "--checkpoint", ckpt,
                   "--kind", "none", "--tau", "0.9", "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    rep = last_json(proc.stdout)
    assert rep["score"] == 1.0
    assert rep["modification"]["kind"] == "none"
    for name in ("report.json", "cosines.csv", "config.cfg"):
        assert (out / name).exists(), name
    with open(out / "report.json") as fh:
        assert json.load(fh) == rep


def test_interp_patch_kind(cli_run, tmp_path):
    ckpt = str(cli_run["out_dir"] / "checkpoint.bin")
    out = tmp_path / "interp_patch"
    proc = run_cli("interp", "--config", str(cli_run["cfg"]), "--checkpoint", ckpt,
                   "--kind", "occlude-patch", "--p", "6", "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    rep = last_json(proc.stdout)
    assert rep["n_total"] == 12


def test_export_command(cli_run, tmp_path):
    ckpt = str(cli_run["out_dir"] / "checkpoint.bin")
    out = tmp_path / "maps"
    proc = run_cli("export", "--config", str(cli_run["cfg"]), "--checkpoint", ckpt,
                   "--out", str(out), "--limit", "2")
    assert proc.returncode == 0, proc.stderr
    assert last_json(proc.stdout)["files"] == 5
    assert (out / "index.tsv").exists()
    assert (out / "att_00000.pgm").exists()
    assert (out / "input_00001.pgm").exists()


def test_gradcheck_command():
    proc = run_cli("gradcheck", "--scale", "tiny")
    assert proc.returncode == 0, proc.stderr
    assert "conv2d" in proc.stdout
    assert "fail" not in proc.stdout


def test_env_data_dir(cli_run):
    ckpt = str(cli_run["out_dir"] / "checkpoint.bin")
    cfg_text = BASE_CFG  # no data_dir line
    cfg = cli_run["root"] / "nodatadir.cfg"
    cfg.write_text(cfg_text)
    proc = run_cli("eval", "--config", str(cfg), "--checkpoint", ckpt,
                   env_extra={"AIB_DATA_DIR": str(cli_run["data_dir"])})
    assert proc.returncode == 0, proc.stderr


# exit codes

def test_exit_1_on_validation_errors(cli_run, tmp_path):
    # argparse usage problems count as validation failures
    assert run_cli("no-such-command").returncode == 1
    assert run_cli("eval").returncode == 1  # missing --checkpoint
    bad_key = run_cli("train", "--config", str(cli_run["cfg"]),
                      "--set", "learning_rate=1")
    assert bad_key.returncode == 1
    assert "learning_rate" in bad_key.stderr
    missing = run_cli("train", "--set", f"data_dir={cli_run['data_dir']}")
    assert missing.returncode == 1  # out_dir never provided
    assert "out_dir" in missing.stderr


def test_exit_2_on_io_and_format_errors(cli_run, tmp_path):
    ckpt = str(cli_run["out_dir"] / "checkpoint.bin")
    gone = run_cli("eval", "--config", str(cli_run["cfg"]),
                   "--checkpoint", str(tmp_path / "missing.bin"))
    assert gone.returncode == 2
    corrupt = tmp_path / "corrupt.bin"
    corrupt.write_bytes(b"NOPE" + b"\x00" * 64)
    bad = run_cli("eval", "--config", str(cli_run["cfg"]), "--checkpoint",
                  str(corrupt))
    assert bad.returncode == 2
    assert "magic" in bad.stderr
    empty_data = run_cli("train", "--config", str(cli_run["cfg"]),
                         "--set", f"data_dir={tmp_path}",
                         "--set", f"out_dir={tmp_path / 'r'}")
    assert empty_data.returncode == 2


def test_exit_3_on_divergence(cli_run, tmp_path):
    proc = run_cli("train", "--config", str(cli_run["cfg"]),
                   "--set", f"out_dir={tmp_path / 'div'}",
                   "--set", "beta=1e308")
    assert proc.returncode == 3
    assert "error" in proc.stderr
