import json

import pytest

from actionqa import bench
from actionqa.cli import main

TINY_BENCH = {"seed": 0, "n_entities": 80, "questions_per_category": {c: 15 for c in bench.CATEGORIES}}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "bench.json").write_text(json.dumps(TINY_BENCH))
    assert main(["gen", "--seed", "5", "--bench-config", str(d / "bench.json"), "--out", str(d / "data")]) == 0
    assert main(["bfs", "--kg", str(d / "data/kg.jsonl"), "--dataset", str(d / "data/dataset.jsonl"), "--out", str(d / "pairs.jsonl")]) == 0
    cfg = {
        "kg": str(d / "data/kg.jsonl"),
        "dataset": str(d / "data/dataset.jsonl"),
        "pairs": str(d / "pairs.jsonl"),
        "model": {"d_e": 16, "d_h": 16, "d_s": 16, "d_type": 8},
        "pretrain_epochs": 2,
        "pretrain_lr": 0.01,
        "rl_epochs": 1,
        "beam": 3,
        "n_candidates": 3,
    }
    (d / "cfg.json").write_text(json.dumps(cfg))
    return d


def test_gen_outputs(workdir):
    d = workdir / "data"
    saved = json.loads((d / "bench_config.json").read_text())
    assert saved["seed"] == 5 and saved["n_entities"] == 80
    recs = bench.load_dataset(d / "dataset.jsonl")
    assert len(recs) == 15 * len(bench.CATEGORIES)


def test_gen_is_reproducible(workdir, tmp_path):
    assert main(["gen", "--seed", "5", "--bench-config", str(workdir / "bench.json"), "--out", str(tmp_path)]) == 0
    for name in ("kg.jsonl", "dataset.jsonl"):
        assert (tmp_path / name).read_bytes() == (workdir / "data" / name).read_bytes()


def test_bfs_output(workdir, capsys):
    lines = (workdir / "pairs.jsonl").read_text().splitlines()
    assert lines and all({"question_id", "sequence", "reward"} <= set(json.loads(l)) for l in lines)


def test_rewrite_corpus(workdir, capsys):
    out = workdir / "corpus.jsonl"
    assert main(["rewrite-corpus", "--pairs", str(workdir / "pairs.jsonl"), "--dataset", str(workdir / "data/dataset.jsonl"), "--out", str(out)]) == 0
    assert "rewrite entries" in capsys.readouterr().out
    assert out.read_text().strip()


def test_train_evaluate_sweep(workdir, capsys, tmp_path):
    cfg = str(workdir / "cfg.json")
    ck = str(tmp_path / "m.pt")
    assert main(["pretrain", "--config", cfg, "--out", ck]) == 0
    assert main(["train-rl", "--config", cfg, "--checkpoint", ck, "--out", ck]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--config", cfg, "--checkpoint", ck, "--out", str(tmp_path / "rep")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert 0.0 <= rep["macro_f1"] <= 1.0
    assert (tmp_path / "rep.csv").exists()
    assert main(["sweep", "--config", cfg, "--checkpoint", ck, "--k", "0,3", "--n", "1,3"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "k,n_candidates,macro_f1,micro_f1" and len(rows) == 5
    assert main(["infer", "--config", cfg, "--checkpoint", ck, "--out", str(tmp_path / "pred.jsonl")]) == 0
    preds = [json.loads(l) for l in (tmp_path / "pred.jsonl").read_text().splitlines()]
    assert preds and all("answer" in p and "f1" in p for p in preds)
    assert main(["ablate", "--config", cfg, "--checkpoint", ck]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "setting,macro_f1,micro_f1"


def test_evaluate_oracle(workdir, capsys):
    assert main(["evaluate", "--config", str(workdir / "cfg.json"), "--oracle"]) == 0
    assert json.loads(capsys.readouterr().out)["macro_f1"] == 1.0


def test_missing_checkpoint(workdir):
    with pytest.raises(SystemExit):
        main(["evaluate", "--config", str(workdir / "cfg.json")])


def test_grad_check(capsys):
    assert main(["grad-check", "--n-params", "50"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_invariant_violation_exit_code(capsys):
    assert main(["grad-check", "--n-params", "20", "--tol", "0"]) == 2
    assert "invariant violated" in capsys.readouterr().err
