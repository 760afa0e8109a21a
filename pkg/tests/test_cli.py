import csv
import json
import subprocess
import sys

import pytest

from dpgcn.cli import ExperimentSpec, main

FAST = ["--epochs", "30", "--hidden", "6", "--heads", "2", "--k", "4"]


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def files(tmp_path):
    # a small labeled edge list in the public airline file format
    e, l = tmp_path / "toy.edgelist", tmp_path / "labels-toy.txt"
    edges = [(i, j) for i in range(12) for j in range(i + 1, 12) if (i * 7 + j * 3) % 5 == 0]
    e.write_text("".join(f"{u + 100} {v + 100}\n" for u, v in edges))
    l.write_text("node label\n" + "".join(f"{i + 100} {i % 3}\n" for i in range(12)))
    return e, l


def test_train_then_eval_and_embed(tmp_path, files):
    e, l = files
    out = tmp_path / "run"
    assert main(["train", "--dataset", f"{e},{l}", "--out-dir", str(out), *FAST]) == 0
    for name in ("checkpoint.npz", "history.csv", "spec.json", "history.png"):
        assert (out / name).exists()
    assert main(["eval", "--checkpoint", str(out / "checkpoint.npz")]) == 0
    rep = json.loads((out / "eval.json").read_text())
    assert 0.0 <= rep["accuracy"] <= 1.0
    assert rep["spec_sha256"] == json.loads((out / "spec.json").read_text())["spec_sha256"]
    assert main(["embed", "--checkpoint", str(out / "checkpoint.npz")]) == 0
    rows = _rows(out / "embeddings.csv")
    assert rows[0][:2] == ["node_id", "dim_0"] and len(rows) == 13
    assert rows[1][0] == "100"


def test_rerun_history_byte_identical(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--dataset", "planted-roles", "--seed", "3", "--out-dir", str(out),
                     "--no-figures", *FAST]) == 0
        runs.append((out / "history.csv").read_bytes())
    assert runs[0] == runs[1]


def test_config_file_reproduces_run(tmp_path):
    out = tmp_path / "a"
    assert main(["train", "--dataset", "two-cliques", "--out-dir", str(out), "--no-figures", *FAST]) == 0
    cfg = tmp_path / "spec.json"
    cfg.write_text(json.dumps(json.loads((out / "spec.json").read_text())["spec"]))
    out2 = tmp_path / "b"
    assert main(["train", "--config", str(cfg), "--out-dir", str(out2), "--no-figures"]) == 0
    assert (out / "history.csv").read_bytes() == (out2 / "history.csv").read_bytes()


def test_spec_roundtrip_and_checksum():
    s = ExperimentSpec.from_dict({"dataset": "two-cliques", "seed": 4})
    assert s.roles.seed == s.train.seed == 4
    again = ExperimentSpec.from_dict(s.to_dict())
    assert again.checksum() == s.checksum()
    again.out_dir = "elsewhere"
    assert again.checksum() == s.checksum()


def test_eval_dimension_mismatch(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--dataset", "two-cliques", "--out-dir", str(out), "--no-figures", *FAST]) == 0
    rc = main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--dataset", "karate"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "dimension-check" in err and "10 nodes" in err and "34" in err


def test_roles_tsv(tmp_path):
    out = tmp_path / "r"
    assert main(["roles", "--dataset", "mirrored-karate", "--k", "10", "--features-csv",
                 "--out-dir", str(out)]) == 0
    lines = (out / "roles.tsv").read_text().splitlines()
    assert len(lines) == 68
    role = dict(line.split("\t") for line in lines)
    assert all(role[str(i)] == role[str(i + 34)] for i in range(34))
    assert len(_rows(out / "features.csv")) == 69


def test_ingest(tmp_path, files, capsys):
    e, l = files
    assert main(["ingest", str(e), str(l), "--name", "brazil", "--out-dir", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "brazil.manifest.json").read_text())
    assert man["stats"]["nodes"] == 12
    assert "expected 131" in capsys.readouterr().err


def test_ingest_bad_file(tmp_path):
    bad = tmp_path / "bad.edgelist"
    bad.write_text("0 1\nx\n")
    assert main(["ingest", str(bad), "--out-dir", str(tmp_path)]) == 2


def test_mirror_karate_outputs(tmp_path):
    assert main(["mirror-karate", "--seeds", "3", "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "mirror_embeddings.csv")
    assert len(rows) == 69 and len(rows[0]) == 3 + 10
    assert len({r[2] for r in rows[1:]}) <= 10
    summary = json.loads((tmp_path / "mirror_summary.json").read_text())["variants"]
    assert summary["no_c"]["max_pair_distance"] == 0.0
    pairs = _rows(tmp_path / "mirror_pairs.csv")
    assert len(pairs) == 1 + 3 * 34
    assert (tmp_path / "mirror_karate.png").stat().st_size > 0


def test_ablate_rows(tmp_path):
    out = tmp_path / "ab"
    assert main(["ablate", "--dataset", "two-cliques", "--seeds", "2", "--out-dir", str(out),
                 "--epochs", "20", "--hidden", "4", "--heads", "2", "--k", "4"]) == 0
    rows = _rows(out / "ablation.csv")[1:]
    for seed in ("0", "1"):
        assert len([r for r in rows if r[0] == seed]) == 6
    assert len([r for r in rows if r[0] == "mean"]) == 6
    assert (out / "ablation.png").exists()


def test_unknown_dataset(tmp_path):
    assert main(["train", "--dataset", "nope", "--out-dir", str(tmp_path)]) in (1, 2)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "dpgcn", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "0.1.0" in r.stdout
