import subprocess
import sys

import pytest

from hybridflow import net
from hybridflow.harness import cli
from hybridflow.harness.config import default_config


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = default_config(task="cond_gmm2d", train_steps=30, batch_size=32, eval_every=10, val_size=100)
    cfg = cfg.evolve(arch=net.NetworkArch(2, 4, (16, 16)), out_dir=str(d / "run"))
    cfg.save(d / "config.json")
    assert cli.main(["train", "--config", str(d / "config.json")]) == 0
    return d


def test_train_writes_outputs(run_dir):
    assert (run_dir / "run" / "checkpoint.json").exists()
    assert (run_dir / "run" / "train_log.csv").read_text().startswith("# config_hash=")


def test_evaluate_writes_csv(run_dir, capsys):
    out = run_dir / "metrics.csv"
    code = cli.main(["evaluate", "--ckpt", str(run_dir / "run" / "checkpoint.json"), "--task", "cond_gmm2d",
                     "--samplers", "meanflow_1step,hybridflow:0.2", "--n", "200", "--out", str(out)])
    assert code == 0
    text = out.read_text()
    assert text.startswith("# schema=hybridflow.metrics/1 config_hash=")
    assert "hybridflow[a=0.2]" in text and capsys.readouterr().out == text


def test_sweeps(run_dir):
    ck = str(run_dir / "run" / "checkpoint.json")
    assert cli.main(["sweep-alpha", "--ckpt", ck, "--grid", "0.1,0.2,0.3", "--n", "200", "--out", str(run_dir)]) == 0
    assert (run_dir / "sweep_alpha.svg").exists()
    assert cli.main(["sweep-nfe", "--ckpt", ck, "--n", "200", "--out", str(run_dir), "--literal-eq12"]) == 0
    lines = (run_dir / "sweep_nfe.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=") and len(lines) == 2 + 11


def test_validation_errors_exit_one(run_dir, capsys):
    ck = str(run_dir / "run" / "checkpoint.json")
    assert cli.main(["evaluate", "--ckpt", ck, "--task", "cond_gauss", "--n", "20"]) == 1
    assert cli.main(["evaluate", "--ckpt", ck, "--samplers", "warp:3", "--n", "20"]) == 1
    assert cli.main(["sweep-alpha", "--ckpt", ck, "--grid", "0.5,1.5"]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["nonsense"])
    assert exc.value.code == 1
    bad = run_dir / "bad.json"
    bad.write_text("{")
    assert cli.main(["train", "--config", str(bad)]) == 1


def test_missing_files_exit_three(tmp_path):
    assert cli.main(["evaluate", "--ckpt", str(tmp_path / "none.json")]) == 3
    assert cli.main(["train", "--config", str(tmp_path / "none.json")]) == 3


def test_oracle_check_exit_code():
    assert cli.main(["oracle-check", "--fast"]) == 0


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hybridflow", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "oracle-check" in res.stdout


def test_demo_is_byte_reproducible(tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert cli.main(["demo", "--seed", "0", "--train-steps", "20", "--out", str(d)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"metrics.csv", "sweep_nfe.csv", "sweep_alpha.csv", "shift_audit.csv",
                            "error_accumulation.csv", "summary.csv"}
    for blob in outs[0].values():
        assert blob.startswith(b"# ") and b"seed=0" in blob.splitlines()[0]
