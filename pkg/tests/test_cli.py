import csv
import hashlib
import json

import numpy as np
import pytest

from evidentia.cli import HISTORY_COLUMNS, main
from evidentia.trust.report import OOD_COLUMNS, REPORT_FILES

SMALL = {"spec": {"n_train": 80, "n_val": 40, "n_test": 60}, "train": {"epochs": 2}}


def digest(root):
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "small.json"
    config.write_text(json.dumps(SMALL))
    assert main(["gen", "--config", str(config), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(config), "--data", str(root / "data"), "--out", str(root / "train")]) == 0
    assert main(["report", "--config", str(config), "--data", str(root / "data"), "--ckpt", str(root / "train"),
                 "--bootstrap", "100", "--out", str(root / "report")]) == 0
    return root, config


def test_gen_is_deterministic(run, tmp_path):
    root, config = run
    assert main(["gen", "--config", str(config), "--out", str(tmp_path / "again")]) == 0
    assert digest(tmp_path / "again") == digest(root / "data")


def test_gen_records_flip_rate(tmp_path):
    assert main(["gen", "--flip", "0.2", "--seed", "3", "--out", str(tmp_path / "d")]) == 0
    meta = json.loads((tmp_path / "d" / "train" / "meta.json").read_text())
    assert meta["spec"]["p_flip"] == 0.2 and meta["seed"] == 3


def test_missing_out_is_a_usage_error(capsys):
    assert main(["gen"]) == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "--out" in err


def test_nonempty_out_needs_force(tmp_path):
    (tmp_path / "keep.txt").write_text("x")
    assert main(["gen", "--config", "/nonexistent.json", "--out", str(tmp_path)]) == 2
    args = ["gen", "--flip", "0.1", "--out", str(tmp_path)]
    config = tmp_path.parent / "small_gen.json"
    config.write_text(json.dumps({"spec": SMALL["spec"]}))
    assert main(args + ["--config", str(config)]) == 2
    assert main(args + ["--config", str(config), "--force"]) == 0


def test_bad_config_is_rejected(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"optimizer": {}}))
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text(json.dumps({"spec": {"n_trian": 5}}))
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text(json.dumps({"spec": {"p_flip": 0.7}}))
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5, "spec": {**SMALL["spec"], "p_flip": 0.3}}))
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    meta = json.loads((tmp_path / "a" / "val" / "meta.json").read_text())
    assert (meta["seed"], meta["spec"]["p_flip"]) == (5, 0.3)
    assert main(["gen", "--config", str(cfg), "--seed", "9", "--flip", "0", "--out", str(tmp_path / "b")]) == 0
    meta = json.loads((tmp_path / "b" / "val" / "meta.json").read_text())
    assert (meta["seed"], meta["spec"]["p_flip"]) == (9, 0.0)


def test_train_outputs_and_determinism(run, tmp_path):
    root, config = run
    history = rows(root / "train" / "history.csv")
    assert list(history[0]) == list(HISTORY_COLUMNS) and len(history) == 2
    assert main(["train", "--config", str(config), "--data", str(root / "data"), "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "history.csv").read_bytes() == (root / "train" / "history.csv").read_bytes()
    assert (tmp_path / "t" / "checkpoint.bin").read_bytes() == (root / "train" / "checkpoint.bin").read_bytes()


def test_lambda_kl_zero_gives_zero_regularizer(run, tmp_path):
    root, config = run
    assert main(["train", "--config", str(config), "--data", str(root / "data"), "--lambda-kl", "0",
                 "--epochs", "1", "--out", str(tmp_path / "t")]) == 0
    history = rows(tmp_path / "t" / "history.csv")
    assert all(float(r["kl"]) == 0.0 for r in history)


def test_report_bundle(run):
    root, _ = run
    out = root / "report"
    for name in REPORT_FILES + ("records.csv", "attention.csv", "report.json"):
        assert (out / name).is_file(), name
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["n"] == 60 and metrics["bootstrap"]["n_boot"] == 100
    ood = rows(out / "ood.csv")
    assert list(ood[0]) == list(OOD_COLUMNS)
    assert ood[0]["kind"] == "identity" and len(ood) == 10
    attention = rows(out / "attention.csv")
    assert len(attention) == 120
    grid = np.array([[float(v) for k, v in r.items() if k.startswith("a")] for r in attention])
    np.testing.assert_allclose(grid.sum(axis=1), 1.0, atol=1e-6)


def test_report_is_byte_identical_and_bootstrap_only_moves_bands(run, tmp_path):
    root, config = run
    base = ["report", "--config", str(config), "--data", str(root / "data"), "--ckpt", str(root / "train")]
    assert main(base + ["--bootstrap", "100", "--out", str(tmp_path / "a")]) == 0
    assert digest(tmp_path / "a") == digest(root / "report")
    assert main(base + ["--bootstrap", "150", "--out", str(tmp_path / "b")]) == 0
    a, b = rows(tmp_path / "a" / "roc.csv"), rows(tmp_path / "b" / "roc.csv")
    assert [r["tpr"] for r in a] == [r["tpr"] for r in b]
    assert [r["tpr_lower"] for r in a] != [r["tpr_lower"] for r in b]
    ma = json.loads((tmp_path / "a" / "metrics.json").read_text())
    mb = json.loads((tmp_path / "b" / "metrics.json").read_text())
    assert ma["auroc"] == mb["auroc"] and ma["qwk"] == mb["qwk"]


def test_report_from_records(run, tmp_path):
    root, _ = run
    assert main(["report", "--records", str(root / "report" / "records.csv"), "--bootstrap", "100",
                 "--out", str(tmp_path / "r")]) == 0
    ours = json.loads((tmp_path / "r" / "metrics.json").read_text())
    ref = json.loads((root / "report" / "metrics.json").read_text())
    assert ours["accuracy"] == ref["accuracy"] and ours["ece"] == ref["ece"]
    assert len(rows(tmp_path / "r" / "ood.csv")) == 0


def test_missing_checkpoint_exits_4(run, tmp_path):
    root, _ = run
    assert main(["report", "--data", str(root / "data"), "--ckpt", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "o")]) == 4
    assert main(["ood", "--data", str(root / "data"), "--ckpt", str(tmp_path / "nope.bin"),
                 "--out", str(tmp_path / "o")]) == 4
    assert main(["report", "--records", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o")]) == 4


def test_ood_command(run, tmp_path, capsys):
    root, _ = run
    assert main(["ood", "--data", str(root / "data"), "--ckpt", str(root / "train"), "--out", str(tmp_path / "o")]) == 0
    table = rows(tmp_path / "o" / "ood.csv")
    assert len(table) == 10
    identity = table[0]
    assert identity["kind"] == "identity" and identity["mean_epistemic"] == identity["clean_mean_epistemic"]
    assert (tmp_path / "o" / "ood.csv").read_bytes() == (root / "report" / "ood.csv").read_bytes()
    assert "noise trend" in capsys.readouterr().out


def test_sweeps(run, tmp_path):
    root, config = run
    assert main(["sweep", "lambda-kl", "--config", str(config), "--data", str(root / "data"), "--epochs", "1",
                 "--out", str(tmp_path / "lam")]) == 0
    table = rows(tmp_path / "lam" / "sweep.csv")
    assert [float(r["lambda_kl"]) for r in table] == [0.0, 0.01, 0.1]
    assert main(["sweep", "referral-grid", "--data", str(root / "data"), "--ckpt", str(root / "train"),
                 "--out", str(tmp_path / "ref")]) == 0
    table = rows(tmp_path / "ref" / "sweep.csv")
    assert float(table[0]["referral_rate"]) == 0.0 and float(table[-1]["referral_rate"]) == 1.0
    assert float(table[-1]["cost_per_patient"]) == 10.0
