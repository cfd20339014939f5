import csv
import json
from pathlib import Path

import numpy as np
import pytest

from magnn.cli import UsageError, main, read_config_file

FAST = ["--window", "16", "--scales", "2", "--channels", "3", "--epochs", "2", "--patience", "2"]


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--vars", "3", "--rows", "200", "--periods", "8,24", "--out", str(d)]) == 0
    return d / "synth.csv"


@pytest.fixture(scope="module")
def trained(tmp_path_factory, synth_csv):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(synth_csv), "--horizon", "3", "--seed", "7", "--out", str(out), *FAST]) == 0
    return out


def test_synth_writes_manifest(synth_csv):
    m = json.loads((synth_csv.parent / "manifest.json").read_text())
    assert m["command"] == "synth" and m["dataset"]["rows"] == 200
    assert np.loadtxt(synth_csv, delimiter=",").shape == (200, 3)


def test_train_outputs(trained, capsys):
    for name in ("checkpoint.npz", "metrics.json", "manifest.json"):
        assert (trained / name).exists()
    m = json.loads((trained / "manifest.json").read_text())
    assert m["model_config"]["seed"] == 7 and m["model_config"]["tau"] == 3
    assert len(m["param_sha256"]) == 64
    assert m["artifacts"] and all(Path(p).exists() for p in m["artifacts"].values())
    metrics = json.loads((trained / "metrics.json").read_text())
    assert metrics["schema"] == "magnn-metrics/1"


def test_train_prints_metric_line(synth_csv, tmp_path, capsys):
    assert main(["train", "--data", str(synth_csv), "--out", str(tmp_path), *FAST]) == 0
    assert capsys.readouterr().out.strip().startswith("RSE=")


def test_train_is_repeatable(synth_csv, tmp_path):
    docs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert main(["train", "--data", str(synth_csv), "--seed", "3", "--out", str(out), *FAST]) == 0
        doc = json.loads((out / "metrics.json").read_text())
        doc["report"].pop("wall_time")
        docs.append(doc)
    assert docs[0] == docs[1]


def test_horizon_zero_is_usage_error(synth_csv, capsys):
    assert main(["train", "--data", str(synth_csv), "--horizon", "0"]) == 2
    assert "--horizon" in capsys.readouterr().err


def test_bad_number_is_usage_error(synth_csv, capsys):
    assert main(["train", "--data", str(synth_csv), "--lr", "fast"]) == 2
    assert "--lr" in capsys.readouterr().err


def test_missing_data_file_is_runtime_error(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 1
    assert "load" in capsys.readouterr().err


def test_evaluate_reproduces_train_metrics(trained, synth_csv, tmp_path):
    graphs, alpha, preds = tmp_path / "g", tmp_path / "alpha.csv", tmp_path / "pred.csv"
    assert main(["evaluate", "--data", str(synth_csv), "--checkpoint", str(trained / "checkpoint.npz"),
                 "--out", str(tmp_path), "--export-graph", str(graphs), "--dump-alpha", str(alpha),
                 "--predictions", str(preds)]) == 0
    train_test = json.loads((trained / "metrics.json").read_text())["test"]
    eval_test = json.loads((tmp_path / "eval_metrics.json").read_text())["test"]
    assert abs(train_test["rse"] - eval_test["rse"]) < 1e-10
    assert abs(train_test["corr"] - eval_test["corr"]) < 1e-10
    files = sorted(graphs.glob("*.csv"))
    assert len(files) == 2
    for f in files:
        assert np.loadtxt(f, delimiter=",", comments="#").shape == (3, 3)
    with alpha.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and all(0 < float(r["weight"]) < 1 for r in rows)
    with preds.open() as fh:
        header = next(csv.reader(fh))
    assert header == ["timestep", "variable", "truth", "prediction"]
    assert (tmp_path / "manifest.json").exists()


def test_evaluate_config_mismatch_exits_1(trained, synth_csv, tmp_path):
    assert main(["evaluate", "--data", str(synth_csv), "--checkpoint", str(trained / "checkpoint.npz"),
                 "--channels", "5", "--out", str(tmp_path)]) == 1


def test_export_graph_command(trained, tmp_path):
    assert main(["export-graph", "--checkpoint", str(trained / "checkpoint.npz"), "--out", str(tmp_path)]) == 0
    first = (tmp_path / "graph_scale1.csv").read_text().splitlines()[0]
    assert first.startswith("# scale=1 tau=")


def test_config_file_precedence(synth_csv, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nchannels = 2\nseed=5\nwindow=16\nscales=2\nepochs=1\n")
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--data", str(synth_csv), "--seed", "9", "--out", str(out)]) == 0
    m = json.loads((out / "manifest.json").read_text())["model_config"]
    assert m["channels"] == 2 and m["seed"] == 9


def test_config_file_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour=blue\n")
    with pytest.raises(UsageError, match="colour"):
        read_config_file(cfg)


def test_ablate_table(synth_csv, tmp_path, capsys):
    assert main(["ablate", "--variants", "standard,shared_one", "--data", str(synth_csv), "--out", str(tmp_path),
                 *FAST]) == 0
    with (tmp_path / "ablation.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["variant"] for r in rows] == ["shared_one", "standard"]
    assert "val_rse" in capsys.readouterr().out


def test_ablate_parallel_matches_sequential(synth_csv, tmp_path):
    outs = []
    for flag, sub in (([], "seq"), (["--parallel"], "par")):
        out = tmp_path / sub
        assert main(["ablate", "--variants", "standard,one_gnn", "--seeds", "1,2", "--data", str(synth_csv),
                     "--out", str(out), *FAST, *flag]) == 0
        outs.append((out / "ablation.csv").read_text())
    assert outs[0] == outs[1]


def test_ablate_usage_errors(synth_csv, capsys):
    assert main(["ablate", "--variants", "", "--data", str(synth_csv)]) == 2
    assert main(["ablate", "--variants", "standard,bogus", "--data", str(synth_csv)]) == 2
    assert "valid:" in capsys.readouterr().err


@pytest.mark.parametrize("command", ["train", "evaluate", "ablate", "synth", "export-graph"])
def test_help_lists_flags_with_defaults(command, capsys):
    with pytest.raises(SystemExit) as e:
        main([command, "--help"])
    assert e.value.code == 0
    text = capsys.readouterr().out
    assert "--out" in text and "default" in text
    if command in ("train", "ablate"):
        for flag in ("--data", "--horizon", "--window", "--scales", "--channels", "--embed-dim", "--tau",
                     "--gnn-depth", "--ds", "--d1", "--dropout", "--lr", "--batch", "--epochs", "--patience",
                     "--seed", "--delimiter", "--header"):
            assert flag in text, flag
