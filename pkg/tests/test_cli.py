import hashlib
import json

import numpy as np
import pytest

from nnkood.cli import main
from nnkood.data import load_embeddings, load_labels


def _digest(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


@pytest.fixture
def bench_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--seed", "0", "--n-train", "500", "--n-test-id", "300",
                 "--n-test-ood", "300", "--logits", "--out", str(out)]) == 0
    return out


def test_synth_files_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["synth", "--id-clusters", "3", "--ood-clusters", "1", "--per-cluster", "100",
            "--dim", "8", "--seed", "7", "--out"]
    assert main(args + [str(a)]) == 0
    assert main(args + [str(b)]) == 0
    assert sorted(p.name for p in a.iterdir()) == [
        "manifest.json", "test.npy", "test_is_ood.csv", "train.npy", "train_labels.csv"]
    assert _digest(a) == _digest(b)
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["shapes"]["train"] == [300, 8]
    assert load_labels(a / "test_is_ood.csv").sum() == 100


def test_usage_errors_exit_2(capsys):
    assert main(["synth"]) == 2
    assert main(["fit", "--method", "nope", "--out", "x"]) == 2
    assert main([]) == 2


def test_pipeline(tmp_path, bench_dir, capsys):
    model, scores, report = tmp_path / "m.bin", tmp_path / "s.csv", tmp_path / "r.json"
    assert main(["fit", "--method", "nnk", "--train", str(bench_dir / "train.npy"),
                 "--m-init", "16", "--k", "5", "--out", str(model)]) == 0
    assert main(["score", "--model", str(model), "--queries", str(bench_dir / "test.npy"),
                 "--out", str(scores)]) == 0
    dec = tmp_path / "d.csv"
    assert main(["eval", "--scores", str(scores), "--is-ood", str(bench_dir / "test_is_ood.csv"),
                 "--out", str(report), "--decisions", str(dec)]) == 0
    r = json.loads(report.read_text())
    assert r["auroc"] >= 0.99 and r["n_id"] == 300 and r["n_ood"] == 300
    d = load_labels(dec)
    flags = load_labels(bench_dir / "test_is_ood.csv").astype(bool)
    assert (d[~flags] == 0).sum() >= 285


def test_eval_flipped_flags(tmp_path, bench_dir):
    rng = np.random.default_rng(0)
    s = tmp_path / "s.csv"
    np.savetxt(s, rng.standard_normal(600))
    flags = load_labels(bench_dir / "test_is_ood.csv")
    flipped = tmp_path / "f.csv"
    np.savetxt(flipped, 1 - flags, fmt="%d")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["eval", "--scores", str(s), "--is-ood", str(bench_dir / "test_is_ood.csv"), "--out", str(a)]) == 0
    assert main(["eval", "--scores", str(s), "--is-ood", str(flipped), "--out", str(b)]) == 0
    ra, rb = json.loads(a.read_text()), json.loads(b.read_text())
    assert rb["auroc"] == pytest.approx(1 - ra["auroc"], abs=1e-12)


def test_config_errors_exit_3(tmp_path, bench_dir):
    out = str(tmp_path / "m.bin")
    assert main(["fit", "--method", "c_nnk", "--train", str(bench_dir / "train.npy"), "--out", out]) == 3
    assert main(["fit", "--method", "nnk", "--train", str(bench_dir / "train.npy"), "--k", "0", "--out", out]) == 3
    assert main(["sweep", "--train", str(bench_dir / "train.npy"), "--test", str(bench_dir / "test.npy"),
                 "--is-ood", str(bench_dir / "test_is_ood.csv"), "--m-init-grid"]) == 3
    assert main(["bench", "--methods", "nnk", "--train", str(bench_dir / "train.npy"),
                 "--test", str(bench_dir / "test.npy"), "--is-ood", str(bench_dir / "test_is_ood.csv")]) == 3


def test_data_errors_exit_4(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert main(["fit", "--method", "knn", "--train", str(bad), "--out", str(tmp_path / "m")]) == 4
    assert main(["score", "--model", str(bad), "--queries", str(bad), "--out", str(tmp_path / "s")]) == 4


def test_config_file_precedence(tmp_path, bench_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"m_init": 7, "k": 3, "epochs": 2}))
    m1, m2 = tmp_path / "a.bin", tmp_path / "b.bin"
    train = str(bench_dir / "train.npy")
    assert main(["--config", str(cfg), "fit", "--method", "nnk", "--train", train, "--out", str(m1)]) == 0
    assert main(["--config", str(cfg), "fit", "--method", "nnk", "--train", train, "--m-init", "9",
                 "--out", str(m2)]) == 0
    from nnkood.modelio import load_model
    a, b = load_model(m1), load_model(m2)
    assert a.payload["atoms"].shape[0] == 7 and int(a.payload["k_sparsity"][0]) == 3
    assert b.payload["atoms"].shape[0] == 9
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(["--config", str(broken), "fit", "--method", "nnk", "--train", train, "--out", str(m1)]) == 3


def test_sweep_grid(tmp_path, bench_dir, capsys):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--train", str(bench_dir / "train.npy"), "--test", str(bench_dir / "test.npy"),
                 "--is-ood", str(bench_dir / "test_is_ood.csv"), "--m-init-grid", "16", "32",
                 "--lambdas", "0.01", "0.05", "--epochs", "3", "--final-plain-epochs", "1",
                 "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "m_init,lambda,val_auroc,final_m,best"
    rows = [l.split(",") for l in lines[1:]]
    assert len(rows) == 4
    assert sum(int(r[-1]) for r in rows) == 1


def test_bench(tmp_path, bench_dir):
    out = tmp_path / "bench"
    assert main(["bench", "--methods", "nnk", "knn", "msp", "--train", str(bench_dir / "train.npy"),
                 "--labels", str(bench_dir / "train_labels.csv"),
                 "--train-logits", str(bench_dir / "train_logits.npy"),
                 "--test", str(bench_dir / "test.npy"), "--test-logits", str(bench_dir / "test_logits.npy"),
                 "--is-ood", str(bench_dir / "test_is_ood.csv"), "--m-init", "16", "--epochs", "3",
                 "--repeats", "3", "--seeds", "0", "1", "--out-dir", str(out)]) == 0
    lines = (out / "bench.csv").read_text().strip().splitlines()
    assert len(lines) == 4
    agg = json.loads((out / "nnk_aggregate.json").read_text())
    assert agg["n_seeds"] == 2 and len(agg["per_seed"]) == 2
    assert all(r["inference_seconds"] > 0 for r in agg["per_seed"])
    assert (out / "knn_seed1.json").exists()


def test_config_schema_names_real_options():
    import argparse
    from pathlib import Path
    from nnkood.cli import build_parser

    schema = json.loads((Path(__file__).parents[1] / "docs" / "config.schema.json").read_text())
    sub = next(a for a in build_parser()._actions if isinstance(a, argparse._SubParsersAction))
    dests = {a.dest for p in sub.choices.values() for a in p._actions}
    for key in schema["properties"]:
        assert ("lam" if key == "lambda" else key) in dests, key
