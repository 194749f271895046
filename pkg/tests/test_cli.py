import csv
import io
import json
import os

import pytest

from qstrom.chain import encode_log_line, read_log
from qstrom.cli import main
from qstrom.crypto.vectors import generate_vectors

DEMO = {"seed": 5, "households": 6, "slots": 2, "start_slot": 50, "variant": "BOTH", "ring_size": 6}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "demo.json"
    config.write_text(json.dumps(DEMO))
    out = root / "out"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    return out


def test_run_writes_report(run_dir):
    for rel in ("clearing.csv", "privacy.csv", "summary.json", "truth.json", "config.json",
                "transcripts/chain_a.jsonl", "transcripts/chain_b.jsonl", "transcripts/chain_baseline.jsonl",
                "transcripts/bft.jsonl", "transcripts/reports.jsonl", "transcripts/genesis_a.json"):
        assert (run_dir / rel).exists(), rel


def test_attack_reproduces_privacy_csv(run_dir, capsys):
    assert main(["attack", "--transcript", str(run_dir), "--truth", str(run_dir / "truth.json")]) == 0
    out = capsys.readouterr().out
    assert out == (run_dir / "privacy.csv").read_text()
    rows = list(csv.DictReader(io.StringIO(out)))
    assert {r["variant"] for r in rows} == {"A", "B", "TRANSPARENT_BASELINE"}
    assert next(r for r in rows if r["variant"] == "TRANSPARENT_BASELINE")["accuracy"] == "1.000000"


def test_verify_clean_logs(run_dir, capsys):
    for variant in ("a", "baseline", "b"):
        assert main(["verify", "--run", str(run_dir), "--variant", variant]) == 0
    assert "ok:" in capsys.readouterr().out


def _tamper(run_dir, tmp_path, index, edit):
    entries = read_log(run_dir / "transcripts/chain_a.jsonl")
    edit(entries[index])
    path = tmp_path / "chain.jsonl"
    path.write_text("".join(encode_log_line(e) for e in entries))
    return path, entries


def test_verify_names_first_tampered_tx(run_dir, tmp_path, capsys):
    def bump(e):
        e["tx"]["payload"]["amount"] += 1

    idx = 7  # the second deposit mint (six registrations precede the first)
    path, entries = _tamper(run_dir, tmp_path, idx, bump)
    assert entries[idx]["tx"]["method"] == "mint"
    code = main(["verify", "--log", str(path), "--genesis", str(run_dir / "transcripts/genesis_a.json")])
    err = capsys.readouterr().err
    assert code == 1 and f"entry {idx} " in err and "BadSignature" in err


def test_verify_detects_checkpoint_mismatch(run_dir, tmp_path, capsys):
    entries = read_log(run_dir / "transcripts/chain_a.jsonl")
    idx = next(i for i, e in enumerate(entries) if e["checkpoint"])

    def flip(e):
        e["checkpoint"] = "0" * 64

    path, _ = _tamper(run_dir, tmp_path, idx, flip)
    assert main(["verify", "--log", str(path), "--genesis", str(run_dir / "transcripts/genesis_a.json")]) == 1
    assert f"entry {idx} " in capsys.readouterr().err


def test_verify_rejects_corrupt_framing(run_dir, tmp_path):
    text = (run_dir / "transcripts/chain_a.jsonl").read_text().splitlines(keepends=True)
    path = tmp_path / "cut.jsonl"
    path.write_text("".join(text[:3]) + text[3][:40] + "\n")
    assert main(["verify", "--log", str(path), "--genesis", str(run_dir / "transcripts/genesis_a.json")]) == 2


def test_verify_expected_hash(run_dir, capsys):
    summary = json.loads((run_dir / "summary.json").read_text())
    want = summary["variants"]["A"]["state_hash"]
    assert main(["verify", "--run", str(run_dir), "--state-hash", want]) == 0
    assert main(["verify", "--run", str(run_dir), "--state-hash", "ab" * 32]) == 1


def test_bad_config_exits_nonzero(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"seed": 1, "unknown_knob": 2}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text("{not json")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2


def test_attack_with_wrong_truth_fails(run_dir, tmp_path):
    truth = json.loads((run_dir / "truth.json").read_text())
    truth["A"].popitem()
    path = tmp_path / "truth.json"
    path.write_text(json.dumps(truth))
    assert main(["attack", "--transcript", str(run_dir), "--truth", str(path)]) == 2


def test_multi_run_batch(tmp_path):
    cfg = tmp_path / "multi.json"
    cfg.write_text(json.dumps(dict(DEMO, variant="A", runs=2, slots=1)))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "9"]) == 0
    assert sorted(os.listdir(tmp_path / "o")) == ["privacy.csv", "run-00009", "run-00010"]
    rows = list(csv.DictReader(open(tmp_path / "o" / "privacy.csv")))
    assert [r["seed"] for r in rows] == ["9", "9", "10", "10"]


def test_vectors_match_generator(tmp_path, capsys):
    assert main(["vectors"]) == 0
    assert json.loads(capsys.readouterr().out) == json.loads(json.dumps(generate_vectors("demo")))
    out = tmp_path / "v.json"
    assert main(["vectors", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["dkg"]["n"] == 4
