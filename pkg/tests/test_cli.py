import numpy as np
import pytest

from snsc.checkpoint import Checkpoint
from snsc.cli import main
from snsc.datasets import load_dataset


@pytest.fixture(scope="module")
def run(tmp_path_factory, sources):
    """degrade -> train -> eval on a tiny noise dataset."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["degrade", "--task", "noise", "--src", str(sources), "--out", str(d / "data"),
                 "--count", "6", "--size", "24x24", "--seed", "1"]) == 0
    (d / "run.cfg").write_text(
        f"task=blurnoise\ntrain_data={d / 'data'}\nval_data={d / 'data'}\nout_dir={d / 'run'}\n"
        "kind=plain\nbase_channels=4\nlayers=5\nside_chain=true\nS=2\n"
        "patch_size=16\nbatch_size=2\nsteps=2\n")
    assert main(["train", "--config", str(d / "run.cfg"), "--strict-deterministic"]) == 0
    return d


def test_degrade_writes_dataset(run):
    assert len(load_dataset(run / "data")) == 6


def test_eval_csv_reproduces_input_psnr(run, capsys):
    assert main(["eval", "--ckpt", str(run / "run" / "checkpoint.snsc"), "--data", str(run / "data"),
                 "--out", str(run / "e.csv")]) == 0
    assert "PSNR" in capsys.readouterr().out
    rows = (run / "e.csv").read_text().splitlines()
    assert rows[0] == "id,psnr,ssim,l1" and len(rows) == 7


def test_analyze_and_maps(run, tmp_path):
    ck = str(run / "run" / "checkpoint.snsc")
    assert main(["analyze", "--ckpt", ck, "--data", str(run / "data"), "--out", str(tmp_path / "a"),
                 "--bins", "4x8"]) == 0
    assert (tmp_path / "a" / "states.csv").exists()
    assert main(["maps", "--ckpt", ck, "--image", str(run / "data" / "clean" / "00000.png"),
                 "--out", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "validity_1.png").exists()


def test_train_is_reproducible_from_cli(run, tmp_path):
    assert main(["train", "--config", str(run / "run.cfg"), "--strict-deterministic",
                 "--out", str(tmp_path)]) == 0
    a = Checkpoint.load(tmp_path / "checkpoint.snsc")
    b = Checkpoint.load(run / "run" / "checkpoint.snsc")
    # the stored config differs only in out_dir
    assert a.config_text != b.config_text and a.step == b.step
    for k in b.tensors:
        np.testing.assert_array_equal(a.tensors[k], b.tensors[k])
    for k in b.optimizer:
        np.testing.assert_array_equal(a.optimizer[k], b.optimizer[k])


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--op", "relu", "--points", "2"]) == 0
    assert "relu" in capsys.readouterr().out
    assert main(["gradcheck", "--op", "fuse", "--points", "1", "--tol", "0"]) == 1


def test_sources_split(tmp_path):
    assert main(["sources", "--out", str(tmp_path), "--split", "heldout"]) == 0
    assert sorted(p.stem for p in tmp_path.iterdir()) == ["camera", "chelsea", "coins", "gravel"]


def test_errors_exit_2(tmp_path, capsys):
    assert main(["gradcheck", "--op", "softmax"]) == 2
    assert main(["eval", "--ckpt", str(tmp_path / "none"), "--data", str(tmp_path), "--out", "x"]) == 2
    (tmp_path / "bad.cfg").write_text("colour=red\n")
    assert main(["train", "--config", str(tmp_path / "bad.cfg")]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["degrade", "--task", "noise", "--src", "a", "--out", "b", "--count", "1", "--size", "8"])
