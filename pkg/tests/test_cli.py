import json

import numpy as np
import pytest

from deepcluster.cli import TRAIN_FLAGS, run_cli
from deepcluster.dataio import write_assignments, write_csv_matrix, write_idx_images, write_idx_labels
from deepcluster.synthetic import make_blob_images

TRAIN_ARGS = ["--epochs", "2", "--k", "4", "--batch-size", "16", "--pca-dim", "4", "--crop", "10,10"]


@pytest.fixture(scope="module")
def blob_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("blobs")
    ds = make_blob_images(40, seed=2, size=12)
    write_idx_images(d / "images.idx", ds.images)
    write_idx_labels(d / "labels.idx", ds.labels)
    return d


@pytest.fixture(scope="module")
def trained(blob_files, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "run"
    code = run_cli(["train", "--data", str(blob_files / "images.idx"), "--labels",
                    str(blob_files / "labels.idx"), "--out", str(out), *TRAIN_ARGS])
    assert code == 0
    return out


def test_help_lists_defaults_and_tags(capsys):
    assert run_cli(["train", "--help"]) == 0
    text = capsys.readouterr().out
    for name, *_ in TRAIN_FLAGS:
        assert "--" + name.replace("_", "-") in text
    assert "[PAPER] (default: 0.9)" in text
    assert "[PAPER] (default: 256)" in text
    assert run_cli(["--help"]) == 0


def test_usage_errors_exit_2(capsys):
    assert run_cli([]) == 2
    assert run_cli(["bogus"]) == 2
    assert run_cli(["nmi", "--a", "x.csv"]) == 2
    assert run_cli(["--threads", "0", "export-metrics", "--run", "."]) == 2


def test_nmi_identical_files(tmp_path, capsys):
    write_assignments(tmp_path / "a.csv", [0, 0, 1, 2])
    assert run_cli(["nmi", "--a", str(tmp_path / "a.csv"), "--b", str(tmp_path / "a.csv")]) == 0
    assert capsys.readouterr().out == "1.000000\n"


def test_nmi_missing_file_exit_3(tmp_path, capsys):
    assert run_cli(["nmi", "--a", str(tmp_path / "no.csv"), "--b", str(tmp_path / "no.csv")]) == 3
    assert "error" in capsys.readouterr().err


def test_cluster_k_exceeds_n(tmp_path, capsys):
    write_csv_matrix(tmp_path / "f.csv", np.eye(5))
    code = run_cli(["cluster", "--features", str(tmp_path / "f.csv"), "--algo", "kmeans", "--k", "6",
                    "--out", str(tmp_path / "a.csv")])
    assert code == 3
    assert "k exceeds n" in capsys.readouterr().err


def test_cluster_is_deterministic(tmp_path, rng):
    write_csv_matrix(tmp_path / "f.csv", rng.standard_normal((30, 4)))
    for algo in ("kmeans", "pic"):
        outs = []
        for name in ("a.csv", "b.csv"):
            args = ["cluster", "--features", str(tmp_path / "f.csv"), "--algo", algo, "--k", "3",
                    "--out", str(tmp_path / name)]
            assert run_cli(args) == 0
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]


def test_bad_csv_exit_3(tmp_path):
    (tmp_path / "f.csv").write_text("1,2\n3\n")
    assert run_cli(["cluster", "--features", str(tmp_path / "f.csv"), "--algo", "pic",
                    "--out", str(tmp_path / "a.csv")]) == 3


def test_train_smoke_writes_one_row_per_epoch(trained):
    lines = (trained / "metrics.csv").read_text().splitlines()
    assert len(lines) == 1 + 2
    assert json.loads((trained / "config.json").read_text())["k"] == 4


def test_config_file_with_flag_override(blob_files, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 5, "k": 3, "batch_size": 16, "crop": [10, 10], "pca_dim": 4}))
    out = tmp_path / "run"
    assert run_cli(["train", "--config", str(cfg), "--data", str(blob_files / "images.idx"), "--out",
                    str(out), "--epochs", "1", "--seed", "4"]) == 0
    resolved = json.loads((out / "config.json").read_text())
    assert (resolved["epochs"], resolved["k"], resolved["seed"]) == (1, 3, 4)


def test_bad_config_exit_3(blob_files, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert run_cli(["train", "--config", str(cfg), "--data", str(blob_files / "images.idx"),
                    "--out", str(tmp_path / "r")]) == 3
    cfg.write_text(json.dumps({"unknown_key": 1}))
    assert run_cli(["train", "--config", str(cfg), "--data", str(blob_files / "images.idx"),
                    "--out", str(tmp_path / "r")]) == 3


def test_export_metrics(trained, capsys):
    assert run_cli(["export-metrics", "--run", str(trained)]) == 0
    assert capsys.readouterr().out == (trained / "metrics.csv").read_text()
    assert run_cli(["export-metrics", "--run", str(trained), "--format", "json"]) == 0
    assert [r["epoch"] for r in json.loads(capsys.readouterr().out)] == [1, 2]


def test_probe_retrieve_visualize(trained, blob_files, tmp_path, capsys):
    ck = str(trained / "checkpoints" / "epoch_0002")
    data = str(blob_files / "images.idx")
    assert run_cli(["probe", "--checkpoint", ck, "--data", data, "--labels", str(blob_files / "labels.idx"),
                    "--out", str(tmp_path / "p.csv"), "--epochs", "3", "--seeds", "2"]) == 0
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "layer,seed,accuracy" and len(rows) == 3
    capsys.readouterr()
    assert run_cli(["retrieve", "--checkpoint", ck, "--data", data, "--query-id", "0", "--topk", "4"]) == 0
    ids = capsys.readouterr().out.split()
    assert len(ids) == 4 and "0" not in ids
    assert run_cli(["visualize", "--checkpoint", ck, "--layer", "0", "--filter", "1", "--steps", "5",
                    "--out", str(tmp_path / "f.pgm")]) == 0
    assert (tmp_path / "f.pgm").read_bytes().startswith(b"P5")
    assert run_cli(["visualize", "--checkpoint", ck, "--layer", "0", "--filter", "999",
                    "--out", str(tmp_path / "g.pgm")]) == 3


def test_missing_checkpoint_exit_3(tmp_path, blob_files):
    assert run_cli(["retrieve", "--checkpoint", str(tmp_path), "--data", str(blob_files / "images.idx"),
                    "--query-id", "0"]) == 3


def test_synth_writes_idx(tmp_path):
    assert run_cli(["synth", "--kind", "blobs", "--n", "10", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "images.idx").stat().st_size == 16 + 10 * 16 * 16


def test_threads_flag(trained, capsys):
    assert run_cli(["--threads", "1", "export-metrics", "--run", str(trained)]) == 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_4(blob_files, tmp_path, capsys):
    code = run_cli(["train", "--data", str(blob_files / "images.idx"), "--out", str(tmp_path / "r"),
                    *TRAIN_ARGS, "--lr", "1e30"])
    assert code == 4
    assert "numeric failure" in capsys.readouterr().err
