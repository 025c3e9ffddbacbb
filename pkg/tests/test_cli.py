import json

import pytest

from labgraph.cli import main
from labgraph.pipeline import Trainer
from labgraph.tensor import NumericError

SMALL = ["--n-train", "40", "--n-dev", "10", "--n-test", "5"]


@pytest.fixture
def data_dir(tmp_path):
    assert main(["synth-data", "--seed", "7", "--out", str(tmp_path / "d"), *SMALL]) == 0
    return tmp_path / "d"


def data_args(d):
    return ["--corpus", str(d / "corpus.jsonl"), "--graph", str(d / "graph.tsv")]


def test_synth_data_twice_gives_identical_files(tmp_path, data_dir):
    assert main(["synth-data", "--seed", "7", "--out", str(tmp_path / "e"), *SMALL]) == 0
    for f in ("corpus.jsonl", "graph.tsv", "keywords.tsv"):
        assert (data_dir / f).read_bytes() == (tmp_path / "e" / f).read_bytes()


def test_train_zero_rounds_then_eval_and_predict(tmp_path, data_dir, capsys):
    run = str(tmp_path / "run")
    assert main(["train", *data_args(data_dir), "--rounds", "0", "--out", run]) == 0
    assert main(["eval", "--out", run]) == 0
    table = capsys.readouterr().out
    assert "P@5" in table and "P@8" in table and "micro_f1" in table
    first = (tmp_path / "run" / "report.dev.tsv").read_bytes()
    assert main(["eval", "--out", run]) == 0
    assert (tmp_path / "run" / "report.dev.tsv").read_bytes() == first
    doc = tmp_path / "doc.txt"
    doc.write_text("w0001 w0002 w0003\n")
    capsys.readouterr()
    assert main(["predict", "--out", run, "--input", str(doc), "--top-k", "3"]) == 0
    row = json.loads(capsys.readouterr().out)
    assert set(row) == {"id", "paths", "codes", "top"} and len(row["top"]) == 3
    assert all(p[0] == "ROOT" for p in row["paths"])


def test_train_is_byte_identical_across_runs(tmp_path, data_dir):
    for name in ("a", "b"):
        assert main(["train", *data_args(data_dir), "--rounds", "1", "--seed", "3", "--no-aat",
                     "--out", str(tmp_path / name)]) == 0
    for f in ("model.lgck", "history.tsv", "config.ini"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_missing_files_exit_with_data_error(tmp_path, capsys):
    assert main(["train", "--corpus", str(tmp_path / "nope.jsonl"), "--graph", str(tmp_path / "g.tsv"),
                 "--out", str(tmp_path / "run")]) == 3
    assert main(["eval", "--out", str(tmp_path / "nothing")]) == 3
    assert main(["predict", "--out", str(tmp_path / "nothing"), "--input", str(tmp_path / "missing")]) == 3
    assert "data error" in capsys.readouterr().err


def test_malformed_config_reports_line_number(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[train]\nrounds = 3\nseed = lots\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "run.ini:3" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "absent.ini")]) == 2


def test_divergence_exit_code(tmp_path, data_dir, monkeypatch):
    def boom(self, idx, batch):
        raise NumericError("non-finite generator gradient")

    monkeypatch.setattr(Trainer, "generator_step", boom)
    run = tmp_path / "run"
    assert main(["train", *data_args(data_dir), "--rounds", "2", "--out", str(run)]) == 4
    assert (run / "model.lgck").exists()


def test_sweep_empty_values_and_thread_variable(tmp_path, monkeypatch, capsys):
    assert main(["sweep", "--param", "epsilon", "--values", "", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip().split("\n") == ["value\tbest_dev_micro_f1\tfinal_dev_micro_f1\t"
                                                            "final_dev_macro_f1"]
    assert main(["sweep", "--param", "epsilon", "--values", "x"]) == 2
    monkeypatch.setenv("LABGRAPH_THREADS", "-1")
    assert main(["sweep", "--param", "epsilon", "--values", ""]) == 2


def test_build_graph(tmp_path, capsys):
    (tmp_path / "codes.txt").write_text("410\n428\n783.1\n783.2\n")
    (tmp_path / "ranges.txt").write_text("390-459 410-414 420-429\n")
    (tmp_path / "ex.txt").write_text("783.1 783.2\n")
    out = tmp_path / "g.tsv"
    assert main(["build-graph", "--codes", str(tmp_path / "codes.txt"), "--ranges", str(tmp_path / "ranges.txt"),
                 "--exclusions", str(tmp_path / "ex.txt"), "--out", str(out)]) == 0
    text = out.read_text()
    assert "pc\t410-414\t410" in text and "pc\t390-459\t410-414" in text
    assert "ex\t783.1\t783.2" in text
    (tmp_path / "dup.txt").write_text("410 410\n")
    assert main(["build-graph", "--codes", str(tmp_path / "dup.txt"), "--out", str(out)]) == 3
    (tmp_path / "odd.txt").write_text("783.1\n")
    assert main(["build-graph", "--codes", str(tmp_path / "codes.txt"), "--exclusions", str(tmp_path / "odd.txt"),
                 "--out", str(out)]) == 3


def test_bench_small_graph(capsys):
    assert main(["bench", "--branching", "3,3", "--docs", "5"]) == 0
    out = dict(line.split("\t") for line in capsys.readouterr().out.strip().split("\n"))
    assert out["flat_evaluations"] == "9"
    assert out["children.within_L_k_bound"] == "1"
