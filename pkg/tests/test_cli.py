import hashlib
import json
import re
import subprocess
import sys
from pathlib import Path

import pytest

from hiqc.cli import main

from ._toys import wos_text

FAST = ["--set", "epochs=3", "--set", "learning_rate=0.01", "--set", "d_q=16", "--set", "buckets=1024",
        "--set", "d_h=8", "--set", "d_g=8", "--set", "max_rounds=2", "--set", "budget_per_round=0.2",
        "--set", "unlabeled_mode=file", "--set", "index_kind=levenshtein"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("syn")
    assert main(["gen-synthetic", "--out", str(out), "--seed", "3", "--parents", "2", "--children-per-parent", "2",
                 "--queries-per-child", "20", "--imbalance", "0.6"]) == 0
    return out


def _data(corpus):
    return ["--taxonomy", str(corpus / "taxonomy.txt"), "--queries", str(corpus / "queries.tsv"),
            "--truth", str(corpus / "queries.truth.tsv")]


def _digest(d: Path) -> dict[str, str]:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def test_gen_synthetic_outputs(corpus):
    assert {p.name for p in corpus.iterdir()} == {"taxonomy.txt", "queries.tsv", "queries.truth.tsv", "manifest.json"}
    m = json.loads((corpus / "manifest.json").read_text())
    assert m["command"] == "gen-synthetic" and m["generator"]["seed"] == 3
    assert set(m["files"]) == {"taxonomy.txt", "queries.tsv", "queries.truth.tsv"}


def test_validate_clean(corpus, tmp_path, capsys):
    assert main(["validate", "--taxonomy", str(corpus / "taxonomy.txt"), "--queries", str(corpus / "queries.tsv")]) == 0
    wos = tmp_path / "wos.txt"
    wos.write_text(wos_text())
    assert main(["validate", "--taxonomy", str(wos)]) == 0
    assert "parents=7\tchildren=134" in capsys.readouterr().out


def test_validate_reports_rows(tmp_path, capsys):
    tax = tmp_path / "t.txt"
    tax.write_text("kitchen\n  kitchen-knives\n")
    q = tmp_path / "q.tsv"
    q.write_text("q1\tknife set\tkitchen-knives\nq2\tnife\t\nq3\tgun\tweapons-x\nq4\ttoo\tmany\tcols\n")
    assert main(["validate", "--taxonomy", str(tax), "--queries", str(q)]) == 2
    err = capsys.readouterr().err
    assert "row 3: UnknownLabel" in err and "row 4: MalformedRow" in err
    assert "line 3" not in err


def test_validate_empty_taxonomy(tmp_path, capsys):
    tax = tmp_path / "t.txt"
    tax.write_text("# nothing here\n")
    assert main(["validate", "--taxonomy", str(tax)]) == 2
    assert "EmptyTaxonomy" in capsys.readouterr().err


def test_train_eval_predict(corpus, tmp_path, capsys):
    out = tmp_path / "tr"
    assert main(["train", *_data(corpus), "--out", str(out), "--seed", "1", *FAST]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"checkpoint.npz", "train_report.json", "eval.json", "eval_per_class.tsv", "config.txt",
            "training_curve.png", "manifest.json"} <= names
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["epochs"] == 3 and manifest["config"]["seed"] == 1
    assert set(manifest["files"]) == names - {"manifest.json"}

    ev = tmp_path / "ev"
    assert main(["eval", *_data(corpus), "--checkpoint", str(out / "checkpoint.npz"), "--out", str(ev),
                 "--seed", "1", *FAST]) == 0
    assert json.loads((ev / "eval.json").read_text()) == json.loads((out / "eval.json").read_text())

    one = tmp_path / "one.tsv"
    one.write_text((corpus / "queries.tsv").read_text().splitlines()[0] + "\n")
    capsys.readouterr()
    assert main(["predict", "--taxonomy", str(corpus / "taxonomy.txt"), "--queries", str(one),
                 "--checkpoint", str(out / "checkpoint.npz")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1
    qid, child, parent, prob = lines[0].split("\t")
    assert qid == one.read_text().split("\t")[0]
    assert re.fullmatch(r"\d\.\d{6}", prob) and 0 <= float(prob) <= 1
    tax = (corpus / "taxonomy.txt").read_text()
    assert f"  {child}\n" in tax and f"{parent}\n" in tax


@pytest.mark.parametrize("command", ["train", "selftrain"])
def test_reruns_are_byte_identical(corpus, tmp_path, command):
    before = _digest(corpus)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main([command, *_data(corpus), "--out", str(out), "--seed", "2", *FAST]) == 0
    assert _digest(a) == _digest(b)
    # rerunning into the same directory overwrites with the same bytes
    assert main([command, *_data(corpus), "--out", str(a), "--seed", "2", *FAST]) == 0
    assert _digest(a) == _digest(b)
    assert _digest(corpus) == before


def test_selftrain_outputs(corpus, tmp_path):
    out = tmp_path / "st"
    assert main(["selftrain", *_data(corpus), "--out", str(out), *FAST, "--no-plots"]) == 0
    rounds = [json.loads(x) for x in (out / "rounds.jsonl").read_text().splitlines()]
    assert rounds[0]["round"] == 0 and len(rounds) >= 2
    ledger = (out / "samples.tsv").read_text().splitlines()
    assert len(ledger) == sum(len(r["sampled"]) for r in rounds)
    assert not (out / "rounds.png").exists()


def test_sweep_command(corpus, tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", *_data(corpus), "--out", str(out), *FAST, "--set", "epochs=1", "--set", "max_rounds=1"]) == 0
    table = (out / "sweep.tsv").read_text().splitlines()
    assert len(table) == 19
    assert [ln.split("\t")[0] for ln in table[1:]] == ["w_intra"] * 6 + ["w_contrastive"] * 6 + ["w_child"] * 6
    assert capsys.readouterr().out.splitlines() == table


def test_config_file_and_errors(corpus, tmp_path, capsys):
    cfg = tmp_path / "run.txt"
    cfg.write_text("epochs = 2\nd_q = 16\nbuckets = 1024\nd_h = 8\nd_g = 8\n")
    out = tmp_path / "c"
    assert main(["train", *_data(corpus), "--config", str(cfg), "--out", str(out), "--no-plots"]) == 0
    assert "epochs = 2" in (out / "config.txt").read_text()
    assert main(["train", *_data(corpus), "--out", str(out), "--set", "epochz=2"]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["train", "--taxonomy", str(tmp_path / "missing.txt"), "--queries", str(corpus / "queries.tsv"),
                 "--out", str(out)]) == 2
    assert main(["train", *_data(corpus)]) == 2  # no --out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hiqc", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("hiqc ")
