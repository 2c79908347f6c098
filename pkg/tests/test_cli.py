import csv
import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from entclass import cli, dataset, models, traineval
from entclass.dataset import Dataset


def run(*argv):
    return cli.main([str(a) for a in argv])


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("gen", "--qubits", 3, "--samples", 600, "--seed", 7, "--out", d / "d.entd") == 0
    assert run("gen", "--qubits", 3, "--samples", 1200, "--seed", 8, "--out", d / "t.entd") == 0
    return d


def test_gen_balanced_and_manifest(files):
    ds = dataset.read(files / "d.entd")
    assert len(ds) == 600 and ds.M == 216
    assert ds.class_counts().tolist() == [100] * 6
    man = json.load(open(files / "d.entd.manifest.json"))
    assert man["command"] == "gen" and man["seeds"] == {"root_seed": 7}
    assert man["config"]["n_qubits"] == 3 and "tool_version" in man
    assert man["started"] and man["finished"]


def test_gen_is_reproducible(tmp_path, files):
    run("gen", "--qubits", 3, "--samples", 600, "--seed", 7, "--out", tmp_path / "again.entd")
    assert sha(tmp_path / "again.entd") == sha(files / "d.entd")


def test_gen_workers_do_not_change_bytes(tmp_path):
    for w in (1, 3):
        run("gen", "--qubits", 4, "--samples", 50, "--seed", 1, "--workers", w,
            "--out", tmp_path / f"w{w}.entd")
    assert sha(tmp_path / "w1.entd") == sha(tmp_path / "w3.entd")


def test_gen_from_manifest_argv(tmp_path, files):
    man = json.load(open(files / "d.entd.manifest.json"))
    argv = list(man["argv"])
    argv[argv.index("--out") + 1] = str(tmp_path / "replay.entd")
    assert cli.main(argv) == 0
    assert sha(tmp_path / "replay.entd") == sha(files / "d.entd")


@pytest.mark.parametrize("argv", [
    ["gen", "--qubits", "5", "--samples", "10", "--out", "x.entd"],
    ["gen", "--qubits", "3", "--samples", "2", "--out", "x.entd"],
    ["gen", "--qubits", "3", "--samples", "12", "--epsilon", "1.5", "--out", "x.entd"],
    ["gen", "--qubits", "3", "--samples", "12", "--scheme", "MUB", "--out", "x.entd"],
    ["gen", "--qubits", "3", "--roster", "GHZ,W", "--qubits", "4", "--samples", "12", "--out", "x.entd"],
    ["bogus"],
    ["train", "--data"],
])
def test_usage_errors(tmp_path, argv):
    os.chdir(tmp_path)
    assert cli.main(argv) == cli.EXIT_USAGE
    assert not (tmp_path / "x.entd").exists()


def test_gen_custom_roster_and_csv(tmp_path):
    assert run("gen", "--qubits", 3, "--roster", "GHZ,W", "--samples", 10, "--shots", 50,
               "--out", tmp_path / "r.entd", "--csv", tmp_path / "r.csv") == 0
    ds = dataset.read(tmp_path / "r.entd")
    assert ds.metadata["roster"] == ["GHZ", "W"] and ds.metadata["shots"] == 50
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert len(rows) == 11 and rows[0][-1] == "label"


def test_unknown_family_is_schema_error(tmp_path):
    assert run("gen", "--qubits", 3, "--roster", "GHZ,NOPE", "--samples", 10,
               "--out", tmp_path / "r.entd") == cli.EXIT_SCHEMA


def test_train_zero_epochs_is_initialization(tmp_path, files):
    out = tmp_path / "m.entp"
    assert run("train", "--data", files / "d.entd", "--test-data", files / "t.entd",
               "--epochs", 0, "--out", out, "--metrics-out", tmp_path / "m.json") == 0
    fresh = models.build(models.ModelConfig.for_qubits("ARCHI2", 3))
    assert open(out, "rb").read() == models.checkpoint_bytes(fresh)
    acc = json.load(open(tmp_path / "m.json"))["metrics"]["accuracy"]
    assert acc == traineval.evaluate(fresh, dataset.read(files / "t.entd")).accuracy


def test_train_outputs(tmp_path, files):
    out = tmp_path / "m.entp"
    assert run("train", "--data", files / "d.entd", "--test-data", files / "t.entd",
               "--epochs", 3, "--arch", "archi1", "--out", out, "--metrics-out", tmp_path / "m.json",
               "--confusion-out", tmp_path / "cm.csv", "--loss-out", tmp_path / "loss.csv") == 0
    m = json.load(open(tmp_path / "m.json"))
    assert m["model_config"]["architecture"] == "ARCHI1"
    assert m["train_config"]["epochs"] == 3 and len(m["metrics"]["f1"]) == 6
    assert m["seeds"]["data"] == 7
    assert len(m["timing"]["epoch_seconds"]) == 3
    assert len(list(csv.reader(open(tmp_path / "loss.csv")))) == 4
    cm = list(csv.reader(open(tmp_path / "cm.csv")))
    assert sum(int(v) for r in cm[1:] for v in r[1:]) == 1200
    assert (tmp_path / "m.entp.manifest.json").exists()
    assert run("eval", "--checkpoint", out, "--data", files / "t.entd",
               "--metrics-out", tmp_path / "e.json") == 0
    e = json.load(open(tmp_path / "e.json"))
    assert e["metrics"] == m["metrics"]


def test_metrics_json_deterministic(tmp_path, files):
    blobs = []
    for i in range(2):
        run("train", "--data", files / "d.entd", "--epochs", 2, "--out", tmp_path / f"{i}.entp",
            "--metrics-out", tmp_path / f"{i}.json")
        d = json.load(open(tmp_path / f"{i}.json"))
        d.pop("timing")
        blobs.append(json.dumps(d, sort_keys=True))
    assert blobs[0] == blobs[1]
    assert sha(tmp_path / "0.entp") == sha(tmp_path / "1.entp")


def test_flags_override_config_file(tmp_path, files):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"lstm_hidden": 8}, "train": {"epochs": 5, "batch_size": 16}}))
    run("train", "--data", files / "d.entd", "--config", cfg, "--epochs", 1,
        "--out", tmp_path / "m.entp", "--metrics-out", tmp_path / "m.json")
    m = json.load(open(tmp_path / "m.json"))
    assert m["model_config"]["lstm_hidden"] == 8
    assert m["train_config"]["epochs"] == 1 and m["train_config"]["batch_size"] == 16


def test_schema_errors(tmp_path, files):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"M": 100}}))
    assert run("train", "--data", files / "d.entd", "--config", cfg,
               "--out", tmp_path / "m.entp") == cli.EXIT_SCHEMA
    run("gen", "--qubits", 4, "--samples", 20, "--out", tmp_path / "q4.entd")
    assert run("train", "--data", files / "d.entd", "--test-data", tmp_path / "q4.entd",
               "--out", tmp_path / "m.entp") == cli.EXIT_SCHEMA
    run("train", "--data", files / "d.entd", "--epochs", 0, "--out", tmp_path / "m3.entp")
    assert run("eval", "--checkpoint", tmp_path / "m3.entp",
               "--data", tmp_path / "q4.entd") == cli.EXIT_SCHEMA
    cfg.write_text(json.dumps({"optimizer": {}}))
    assert run("train", "--data", files / "d.entd", "--config", cfg,
               "--out", tmp_path / "m.entp") == cli.EXIT_SCHEMA


def test_io_errors(tmp_path, files):
    assert run("inspect", tmp_path / "missing.entd") == cli.EXIT_IO
    buf = bytearray(open(files / "d.entd", "rb").read())
    buf[200] ^= 0x01
    (tmp_path / "bad.entd").write_bytes(bytes(buf))
    assert run("inspect", tmp_path / "bad.entd") == cli.EXIT_IO
    assert run("train", "--data", tmp_path / "bad.entd", "--out", tmp_path / "m.entp") == cli.EXIT_IO


def test_numeric_error(tmp_path, files):
    assert run("train", "--data", files / "d.entd", "--epochs", 3, "--lr", 1e6, "--arch", "MLP",
               "--out", tmp_path / "m.entp") == cli.EXIT_NUMERIC


def test_inputs_not_mutated(tmp_path, files):
    before = sha(files / "d.entd")
    run("train", "--data", files / "d.entd", "--epochs", 1, "--out", tmp_path / "m.entp")
    run("inspect", files / "d.entd")
    assert sha(files / "d.entd") == before


def test_sweep_row_count(tmp_path, files):
    out = tmp_path / "s.csv"
    assert run("sweep", "--data", files / "t.entd", "--test-data", files / "d.entd",
               "--sizes", "100,1000", "--arch", "archi1,archi2", "--repeats", 3, "--epochs", 1,
               "--out", out) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 12
    header = open(out).readline().strip().split(",")
    assert header[:len(traineval.SWEEP_COLUMNS)] == traineval.SWEEP_COLUMNS
    assert header[len(traineval.SWEEP_COLUMNS):] == [f"f1_{c}" for c in range(6)]
    summary = json.load(open(str(out) + ".summary.json"))
    assert summary["rows"] == 12 and len(summary["summary"]) == 4
    assert run("sweep", "--data", files / "d.entd", "--test-data", files / "t.entd",
               "--sizes", "100,5000", "--epochs", 1, "--out", out) == cli.EXIT_USAGE


def test_sweep_archi2_beats_archi1_at_100(tmp_path, files):
    out = tmp_path / "s.csv"
    assert run("sweep", "--data", files / "d.entd", "--test-data", files / "t.entd",
               "--sizes", 100, "--arch", "archi1,archi2", "--repeats", 3, "--out", out) == 0
    s = {r["arch"]: r["accuracy_mean"]
         for r in json.load(open(str(out) + ".summary.json"))["summary"]}
    print("sweep means at 100 samples:", s)
    assert s["ARCHI2"] >= s["ARCHI1"]


def test_noise_sweep(tmp_path):
    out = tmp_path / "n.csv"
    assert run("noise-sweep", "--qubits", 3, "--epsilons", "0,0.1", "--shots", "exact,100",
               "--sizes", 30, "--arch", "mlp", "--epochs", 2, "--n-test", 60, "--out", out) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 4
    assert {(r["noise_epsilon"], r["noise_shots"]) for r in rows} == {
        ("0.0", "-1"), ("0.0", "100"), ("0.1", "-1"), ("0.1", "100")}
    man = json.load(open(str(out) + ".manifest.json"))
    assert man["config"]["noisy_train"] and man["seeds"]["test"] == 2


def test_gradcheck_passes(tmp_path):
    assert run("gradcheck", "--json-out", tmp_path / "g.json") == 0
    rep = json.load(open(tmp_path / "g.json"))
    assert rep["passed"] and len(rep["results"]) == 7
    assert all(r["cases"] == 20 for r in rep["results"])


def test_gradcheck_detects_injected_fault(capsys):
    assert run("gradcheck", "--seeds", 1, "--inject-fault") == cli.EXIT_NUMERIC
    assert "FAIL broken_dense" in capsys.readouterr().out


def test_inspect_histogram_and_json(files, capsys):
    assert run("inspect", files / "d.entd") == 0
    text = capsys.readouterr().out
    assert "GHZ" in text and "100" in text and "WARNING" not in text
    assert run("inspect", files / "d.entd", "--json") == 0
    info = json.loads(capsys.readouterr().out)
    assert info["class_histogram"] == [100] * 6 and info["warnings"] == []
    assert json.loads(json.dumps(info)) == info


def test_inspect_warns_on_out_of_range(tmp_path, files, capsys):
    ds = dataset.read(files / "d.entd")
    feats = ds.features.copy()
    feats[3, 10] = 1.5
    dataset.write(Dataset(feats, ds.labels, ds.metadata), tmp_path / "odd.entd")
    assert run("inspect", tmp_path / "odd.entd") == 0
    out = capsys.readouterr().out
    assert "WARNING: 1 feature value(s) outside [0, 1]" in out


def test_inspect_checkpoint(tmp_path, files, capsys):
    run("train", "--data", files / "d.entd", "--epochs", 0, "--arch", "cnn", "--out", tmp_path / "m.entp")
    capsys.readouterr()
    assert run("inspect", tmp_path / "m.entp", "--json") == 0
    info = json.loads(capsys.readouterr().out)
    assert info["kind"] == "checkpoint" and info["config"]["architecture"] == "CNN"


def test_float64_env(tmp_path, files):
    env = dict(os.environ, ENTCLASS_FLOAT64="1")
    r = subprocess.run([sys.executable, "-m", "entclass.cli", "train", "--data", str(files / "d.entd"),
                        "--epochs", "0", "--arch", "mlp", "--out", str(tmp_path / "m.entp")],
                       env=env, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    m = models.load_checkpoint(tmp_path / "m.entp")
    man = json.load(open(tmp_path / "m.entp.manifest.json"))
    assert man["numeric_mode"] == "float64"
    assert m.config.M == 216


def test_console_script_version():
    r = subprocess.run([sys.executable, "-m", "entclass.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "0.1.0"
