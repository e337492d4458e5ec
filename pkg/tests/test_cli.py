import csv
import json

import numpy as np
import pytest

from brm_embed.cli import main
from brm_embed.config import build_config, parse_config_text
from brm_embed.data import FeatureDataset, gen_synthetic, save_dataset
from brm_embed.errors import InvalidConfig
from brm_embed.numeric import make_rng

FAST = ["--max-epochs", "4", "--patience", "50"]


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "d.csv"
    assert main(["gen-data", "--classes", "10", "--per-class", "100", "--dim", "16",
                 "--sigma", "0.05", "--seed", "7", "--out", str(path)]) == 0
    return path


def test_gen_data(dataset, tmp_path):
    lines = dataset.read_text().splitlines()
    assert len(lines) == 1001 and lines[0].startswith("label,f0,")
    again = tmp_path / "again.csv"
    main(["gen-data", "--classes", "10", "--per-class", "100", "--dim", "16",
          "--sigma", "0.05", "--seed", "7", "--out", str(again)])
    assert again.read_bytes() == dataset.read_bytes()


def test_gen_data_validation_and_io(tmp_path):
    assert main(["gen-data", "--classes", "1", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["gen-data", "--out", str(tmp_path / "missing" / "x.csv")]) == 3
    with pytest.raises(SystemExit) as info:
        main(["gen-data", "--classes", "ten", "--out", "x.csv"])
    assert info.value.code == 2


def test_gen_data_raster(tmp_path):
    path = tmp_path / "r.skb"
    assert main(["gen-data", "--classes", "4", "--per-class", "10", "--side", "12",
                 "--out", str(path)]) == 0
    assert path.read_bytes()[:4] == b"SKB1"


def test_train_writes_artifacts_and_learns(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--seed", "7", "--loss", "brm", "--bins", "75", "--max-epochs", "30",
                 "--out", str(out)]) == 0
    rows = read_jsonl(out / "metrics.jsonl")
    assert "config" in rows[0] and rows[0]["config"]["bins"] == 75
    epochs = rows[1:]
    assert set(epochs[0]) == {"epoch", "loss", "lr", "val_recall_at_1", "val_knn_top1"}
    assert epochs[-1]["loss"] < epochs[0]["loss"]
    assert (out / "final.ckpt").exists() and (out / "best.ckpt").exists()


def test_train_triplet_on_singletons_is_degenerate(tmp_path):
    path = tmp_path / "single.csv"
    save_dataset(path, FeatureDataset(make_rng(0).standard_normal((12, 4)), np.arange(12)))
    code = main(["train", "--data", str(path), "--layers", "4,8,4", "--loss", "triplet",
                 "--out", str(tmp_path / "r")])
    assert code == 4


def test_train_bad_config(tmp_path):
    assert main(["train", "--bins", "1", "--out", str(tmp_path)]) == 2
    assert main(["train", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2
    assert main(["train", "--layers", "8,4", "--max-epochs", "1", "--out", str(tmp_path)]) == 5
    with pytest.raises(SystemExit):
        main(["train", "--loss", "hinge"])


def test_train_malformed_data(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("label,f0\n0,zzz\n")
    assert main(["train", "--data", str(bad), "--layers", "1,2", "--out", str(tmp_path)]) == 3


def test_resume_continues_exactly(tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    base = ["train", "--seed", "3", "--patience", "100"]
    main(base + ["--max-epochs", "5", "--out", str(full)])
    main(base + ["--max-epochs", "3", "--out", str(part)])
    main(base + ["--max-epochs", "5", "--out", str(part), "--resume", str(part / "final.ckpt")])
    rows = read_jsonl(part / "metrics.jsonl")
    headers = [r for r in rows if "config" in r]
    assert len(headers) == 2 and headers[1]["resume_from_epoch"] == 3
    epochs = [r for r in rows if "epoch" in r]
    assert [r["epoch"] for r in epochs] == [1, 2, 3, 4, 5]
    assert epochs == [r for r in read_jsonl(full / "metrics.jsonl") if "epoch" in r]
    assert (part / "final.ckpt").read_bytes() == (full / "final.ckpt").read_bytes()


def test_eval_reports(tmp_path, dataset):
    run = tmp_path / "run"
    main(["train", "--data", str(dataset), "--max-epochs", "40", "--out", str(run)])
    assert main(["eval", "--checkpoint", str(run / "final.ckpt"), "--data", str(dataset),
                 "--split", "train", "--out", str(run)]) == 0
    report = json.loads((run / "eval.json").read_text())
    assert report["top1"] >= report["recall_at"]["1"] - 0.05
    assert report["num_classes"] == 10 and len(report["confusion"]) == 10


def test_eval_random_encoder_on_structureless_data_is_chance(tmp_path):
    # pure noise: no encoder can beat chance on held-out samples
    data = tmp_path / "noise.csv"
    main(["gen-data", "--classes", "10", "--per-class", "100", "--dim", "16",
          "--sigma", "10", "--seed", "7", "--out", str(data)])
    run = tmp_path / "init"
    main(["train", "--data", str(data), "--max-epochs", "0", "--out", str(run)])
    main(["eval", "--checkpoint", str(run / "final.ckpt"), "--data", str(data), "--out", str(run)])
    top1 = json.loads((run / "eval.json").read_text())["top1"]
    assert abs(top1 - 0.1) <= 0.1


def test_eval_dimension_mismatch(tmp_path, dataset):
    run = tmp_path / "run"
    main(["train", "--data", str(dataset), "--max-epochs", "1", "--out", str(run)])
    other = tmp_path / "other.csv"
    save_dataset(other, gen_synthetic(make_rng(0), 3, 5, 6, 0.1))
    assert main(["eval", "--checkpoint", str(run / "final.ckpt"), "--data", str(other)]) == 5


def test_gradcheck_cli(capsys):
    assert main(["gradcheck", "--seeds", "10"]) == 0
    out = capsys.readouterr().out
    assert "PASS 10/10" in out and "max_rel_err" in out
    assert main(["gradcheck", "--seeds", "3", "--inject-fault", "neg-hist-sign"]) == 1
    assert "failing seeds" in capsys.readouterr().out
    assert main(["gradcheck", "--seeds", "3", "--tolerance", "1e-12"]) == 1


def test_sweep_bins(tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep-bins", "--bins", "25,75,150", *FAST, "--out", str(out)]) == 0
    rows = list(csv.reader((out / "sweep_bins.csv").open()))
    assert rows[0] == ["R", "val_recall_at_1", "final_loss"]
    assert [r[0] for r in rows[1:]] == ["25", "75", "150"]
    assert main(["sweep-bins", "--bins", "1"]) == 2
    assert main(["sweep-bins", "--bins", "a,b"]) == 2


def test_compare_losses_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["compare-losses", "--max-epochs", "3"]
    assert main(args + ["--out", str(a)]) == 0
    main(args + ["--out", str(b)])
    text = (a / "compare_losses.csv").read_text()
    assert text == (b / "compare_losses.csv").read_text()
    rows = list(csv.reader(text.splitlines()))
    assert rows[0] == ["loss", "val_recall_at_1", "epochs_to_converge"]
    assert [r[0] for r in rows[1:]] == ["brm", "brm+ce", "contrastive", "triplet", "lifted"]
    assert main(["compare-losses", "--losses", "brm,hinge"]) == 2


def test_raster_training(tmp_path):
    data = tmp_path / "r.skb"
    main(["gen-data", "--classes", "4", "--per-class", "20", "--side", "16", "--out", str(data)])
    run = tmp_path / "run"
    assert main(["train", "--data", str(data), "--layers", "196,32,16",
                 "--classes-per-batch", "4", "--samples-per-class", "4",
                 "--max-epochs", "3", "--out", str(run)]) == 0
    assert len(read_jsonl(run / "metrics.jsonl")) == 4


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# experiment\nbins = 30\nlr = 0.01\nlayers = 16, 8, 4\n")
    cfg = build_config({"bins": "40"}, cfg_file)
    assert cfg.bins == 40 and cfg.lr == 0.01 and cfg.layers == (16, 8, 4)
    assert build_config({}).bins == 75 and build_config({}).max_epochs == 300
    with pytest.raises(InvalidConfig):
        parse_config_text("bogus = 1\n")
    with pytest.raises(InvalidConfig):
        parse_config_text("no equals sign\n")
    with pytest.raises(InvalidConfig):
        build_config({"bins": "many"})


def test_config_echoed_in_metrics(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("bins = 30\nmax_epochs = 1\n")
    out = tmp_path / "run"
    main(["train", "--config", str(cfg_file), "--bins", "33", "--out", str(out)])
    header = read_jsonl(out / "metrics.jsonl")[0]["config"]
    assert header["bins"] == 33 and header["max_epochs"] == 1
