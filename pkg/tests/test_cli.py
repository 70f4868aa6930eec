import json
from pathlib import Path

import pytest

from fusenet import cli
from fusenet.checkpoint import load_checkpoint
from conftest import write_pamap2_tree, write_ucl_tree


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("ucl")
    write_ucl_tree(root)
    out = root / "prepared"
    assert cli.main(["prepare", "--dataset", "ucl", "--root", str(root), "--out", str(out)]) == 0
    return out


def run_dirs(base: Path, pattern="*"):
    return sorted(p for p in base.glob(pattern) if p.is_dir())


def train_args(data, out, *extra):
    return ["train", "--data", str(data), "--out", str(out), "--epochs", "2", "--patience", "2",
            *extra]


def test_prepare_ucl_summary(prepared):
    summary = (prepared / "summary.txt").read_text().splitlines()
    assert "channels 6" in summary and "classes 6" in summary
    assert "split train 18" in summary
    assert "split validation 11" in summary
    assert "split test 11" in summary
    assert "subjects.validation 27,29,30" in summary
    assert any(line.startswith("stats.total_acc_x mean=") for line in summary)
    for split in ("train", "validation", "test"):
        assert (prepared / f"{split}.fnkd").is_file()
    manifest = json.loads((prepared / "manifest.json").read_text())
    assert manifest["command"] == "prepare" and manifest["finished"]
    assert set(Path(p).name for p in manifest["outputs"]) >= {"train.fnkd", "summary.txt"}


def test_prepare_refuses_to_overwrite(prepared, capsys):
    root = prepared.parent
    argv = ["prepare", "--dataset", "ucl", "--root", str(root), "--out", str(prepared)]
    assert cli.main(argv) == 2
    assert "--force" in capsys.readouterr().err
    assert cli.main(argv + ["--force"]) == 0


def test_prepare_pamap2(tmp_path):
    write_pamap2_tree(tmp_path / "raw", subjects=(1, 2, 5))
    out = tmp_path / "prepared"
    assert cli.main(["prepare", "--dataset", "pamap2", "--root", str(tmp_path / "raw"),
                     "--out", str(out)]) == 0
    summary = (out / "summary.txt").read_text().splitlines()
    assert "channels 18" in summary and "classes 12" in summary
    assert "subjects.test 1" in summary and "subjects.validation 5" in summary
    assert "subjects.train 2" in summary


def test_prepare_missing_root(tmp_path, capsys):
    missing = tmp_path / "nope"
    code = cli.main(["prepare", "--dataset", "ucl", "--root", str(missing),
                     "--out", str(tmp_path / "o")])
    assert code == 2
    assert f"dataset root not found: {missing}" in capsys.readouterr().err


def test_prepare_malformed_file_exit_2(tmp_path, capsys):
    base = write_ucl_tree(tmp_path)
    f = base / "train" / "Inertial Signals" / "body_gyro_y_train.txt"
    lines = f.read_text().splitlines()
    lines[3] = lines[3].rsplit(" ", 1)[0]
    f.write_text("\n".join(lines) + "\n")
    code = cli.main(["prepare", "--dataset", "ucl", "--root", str(tmp_path),
                     "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "body_gyro_y_train.txt" in err and "line 4" in err


def test_train_writes_run(prepared, tmp_path, capsys):
    assert cli.main(train_args(prepared, tmp_path, "--seed", "3")) == 0
    (run,) = run_dirs(tmp_path)
    assert run.name.endswith("-seed3")
    assert {p.name for p in run.iterdir()} == {"manifest.json", "checkpoint.fnkc", "train_log.csv"}
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["config"]["num_parameters"] == 485382
    assert manifest["seed"] == 3 and manifest["status"] == "ok"
    assert len((run / "train_log.csv").read_text().splitlines()) == 3
    out = capsys.readouterr().out
    assert "parameters 485382" in out and "validation accuracy" in out
    ckpt = load_checkpoint(run / "checkpoint.fnkc")
    assert ckpt.seed == 3 and ckpt.config.fusion_layer == 3


@pytest.mark.parametrize("extra, key, value", [
    (["--fusion-layer", "1"], "fusion_layer", 1),
    (["--fusion-layer", "2"], "fusion_layer", 2),
    (["--head", "dense:1000"], "head", "dense:1000"),
])
def test_train_variants(prepared, tmp_path, extra, key, value):
    assert cli.main(train_args(prepared, tmp_path, *extra)) == 0
    (run,) = run_dirs(tmp_path)
    assert load_checkpoint(run / "checkpoint.fnkc").config.to_dict()[key] == value


def test_train_bad_head_is_usage_error(prepared, tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(train_args(prepared, tmp_path, "--head", "mlp"))
    assert exc.value.code == 2


def test_train_reads_data_from_environment(prepared, tmp_path, monkeypatch):
    monkeypatch.setenv("FUSENET_DATA", str(prepared))
    assert cli.main(["train", "--out", str(tmp_path), "--epochs", "1", "--patience", "1"]) == 0
    monkeypatch.delenv("FUSENET_DATA")
    assert cli.main(["train", "--out", str(tmp_path), "--epochs", "1"]) == 2


@pytest.fixture(scope="module")
def checkpoints(prepared, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    paths = []
    for seed in (0, 1):
        assert cli.main(train_args(prepared, out, "--seed", str(seed))) == 0
    for run in run_dirs(out):
        paths.append(run / "checkpoint.fnkc")
    return paths


def test_eval_single_and_ensemble(prepared, checkpoints, tmp_path, capsys):
    assert cli.main(["eval", "--ckpt", str(checkpoints[0]), "--data", str(prepared),
                     "--out", str(tmp_path / "a")]) == 0
    assert "single model on test (11 samples)" in capsys.readouterr().out
    (run,) = run_dirs(tmp_path / "a")
    names = {p.name for p in run.iterdir()}
    assert names == {"manifest.json", "metrics.txt", "report.txt", "confusion.txt", "subjects.txt"}
    metrics = dict(line.split(" ", 1) for line in (run / "metrics.txt").read_text().splitlines())
    assert {"accuracy", "f1_weighted", "precision_macro", "recall_weighted"} <= set(metrics)
    subjects = (run / "subjects.txt").read_text().splitlines()
    assert [s.split()[0] for s in subjects] == ["2", "4"]

    argv = ["eval", "--ckpt", *map(str, checkpoints), "--data", str(prepared),
            "--split", "validation", "--out", str(tmp_path / "b"), "--jobs", "2"]
    assert cli.main(argv) == 0
    assert "ensemble of 2 on validation" in capsys.readouterr().out


def test_eval_is_deterministic(prepared, checkpoints, tmp_path):
    for _ in range(2):
        assert cli.main(["eval", "--ckpt", *map(str, checkpoints), "--data", str(prepared),
                         "--out", str(tmp_path)]) == 0
    a, b = run_dirs(tmp_path)
    for name in ("metrics.txt", "report.txt", "confusion.txt", "subjects.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_eval_config_mismatch(prepared, checkpoints, tmp_path, capsys):
    assert cli.main(train_args(prepared, tmp_path / "r", "--fusion-layer", "1")) == 0
    (other,) = run_dirs(tmp_path / "r")
    code = cli.main(["eval", "--ckpt", str(checkpoints[0]), str(other / "checkpoint.fnkc"),
                     "--data", str(prepared), "--out", str(tmp_path / "e")])
    assert code == 2
    assert "config" in capsys.readouterr().err


def test_eval_min_accuracy(prepared, checkpoints, tmp_path):
    base = ["eval", "--ckpt", str(checkpoints[0]), "--data", str(prepared), "--out", str(tmp_path)]
    assert cli.main(base + ["--min-accuracy", "0"]) == 0
    assert cli.main(base + ["--min-accuracy", "1.01"]) == 1


def test_eval_corrupt_checkpoint(prepared, tmp_path, capsys):
    bad = tmp_path / "bad.fnkc"
    bad.write_bytes(b"not a checkpoint")
    assert cli.main(["eval", "--ckpt", str(bad), "--data", str(prepared),
                     "--out", str(tmp_path)]) == 2
    assert "magic" in capsys.readouterr().err


def test_gradcheck_exit_codes(capsys):
    assert cli.main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "8/8 blocks passed" in out
    assert cli.main(["gradcheck", "--tolerance", "1e-12"]) == 1
    assert "failing blocks:" in capsys.readouterr().out


def test_replay_reproduces_training(prepared, tmp_path):
    argv = train_args(prepared, tmp_path / "a", "--precision", "64", "--limit", "12")
    assert cli.main(argv) == 0
    (first,) = run_dirs(tmp_path / "a")
    assert cli.main(["replay", str(first / "manifest.json")]) == 0
    first_b, second = run_dirs(tmp_path / "a")
    assert first_b == first
    assert (first / "checkpoint.fnkc").read_bytes() == (second / "checkpoint.fnkc").read_bytes()
