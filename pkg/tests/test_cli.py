import json

import pytest

from magicforge.cli import main
from magicforge.records import Manifest, Vocabulary

VOCAB = ("cat", "dog", "bus", "kite", "teapot", "lamp")


@pytest.fixture
def ws(tmp_path, monkeypatch):
    monkeypatch.delenv("MAGICFORGE_CONFIG", raising=False)
    Vocabulary(VOCAB).save(tmp_path / "vocab.json")
    return tmp_path


def synth(ws, *extra):
    return main(["synth", "--vocab", str(ws / "vocab.json"), "--out", str(ws / "d"), "--count", "6",
                 "--width", "24", "--height", "24", "--jobs", "2", "--log-level", "warning", *extra])


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["bogus"]) == 2
    assert main(["eval", "--manifest", "x"]) == 2  # needs --pred or --model


def test_help_lists_subcommands(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for cmd in ("synth", "label", "validate", "train", "eval", "gradcheck", "ablate"):
        assert cmd in out


def test_synth_then_validate(ws, capsys):
    assert synth(ws) == 0
    report = json.loads((ws / "d" / "run-report.json").read_text())
    assert report["accepted"] == 6
    assert report["config"]["backend"]["width"] == 24  # effective config echoed
    assert main(["validate", "--manifest", str(ws / "d" / "manifest.jsonl")]) == 0


def test_validate_flags_broken_manifest(ws, capsys):
    synth(ws)
    path = ws / "d" / "manifest.jsonl"
    doc = json.loads(path.read_text().splitlines()[0])
    doc["masks"][0]["runs"].append(5)
    path.write_text(json.dumps(doc) + "\n")
    assert main(["validate", "--manifest", str(path)]) == 1
    assert "run sum" in capsys.readouterr().out


def test_missing_input_is_data_error(ws, capsys):
    assert main(["validate", "--manifest", str(ws / "nope.jsonl"), "--vocab", str(ws / "vocab.json")]) == 1


def test_config_precedence(ws, monkeypatch):
    cfg = ws / "cfg.json"
    cfg.write_text(json.dumps({"pipeline": {"samples_target": 4, "seed": 5}, "backend": {"width": 20, "height": 20}}))
    out = ws / "a"
    assert main(["synth", "--vocab", str(ws / "vocab.json"), "--out", str(out), "--config", str(cfg),
                 "--count", "3", "--log-level", "warning"]) == 0
    echo = json.loads((out / "run-report.json").read_text())["config"]
    assert echo["pipeline"]["samples_target"] == 3 and echo["pipeline"]["seed"] == 5
    assert len(Manifest.read(out / "manifest.jsonl").records) == 3

    monkeypatch.setenv("MAGICFORGE_CONFIG", str(cfg))
    assert main(["synth", "--vocab", str(ws / "vocab.json"), "--out", str(ws / "b"), "--log-level", "warning"]) == 0
    assert len(Manifest.read(ws / "b" / "manifest.jsonl").records) == 4


def test_config_errors(ws, capsys):
    bad = ws / "bad.json"
    bad.write_text("{not json")
    assert synth(ws, "--config", str(bad)) == 2
    bad.write_text(json.dumps({"pipeline": {"detection_gate_threshold": 1.5}}))
    assert synth(ws, "--config", str(bad)) == 2
    bad.write_text(json.dumps({"unknown_section": {}}))
    assert synth(ws, "--config", str(bad)) == 2
    assert synth(ws, "--config", str(ws / "missing.json")) == 2


def test_train_eval_roundtrip(ws, capsys):
    synth(ws)
    manifest = str(ws / "d" / "manifest.jsonl")
    assert main(["train", "--manifest", manifest, "--out", str(ws / "model.json"), "--steps", "5",
                 "--lr", "0.03", "--dim", "8", "--m", "full", "--log-level", "warning"]) == 0
    ck = json.loads((ws / "model.json").read_text())
    assert ck["config"]["steps"] == 5 and ck["app_config"]["train"]["m_subset"] == "full"
    assert main(["eval", "--manifest", manifest, "--model", str(ws / "model.json"), "--out",
                 str(ws / "r.json"), "--bg-threshold", "0.5"]) == 0
    rep = json.loads((ws / "r.json").read_text())
    assert 0 <= rep["mean"] <= 1 and rep["config"]["eval"]["bg_threshold"] == 0.5


def test_label_then_eval_pred(ws, capsys):
    synth(ws)
    manifest = Manifest.read(ws / "d" / "manifest.jsonl")
    items = ws / "d" / "items.jsonl"
    items.write_text("".join(json.dumps({"id": r.id, "image": r.image_ref,
                                         "categories": [VOCAB[c] for c in r.categories]}) + "\n"
                             for r in manifest.records))
    assert main(["label", "--vocab", str(ws / "vocab.json"), "--input", str(items),
                 "--out", str(ws / "labels.jsonl")]) == 0
    for mode in ("miou", "pmiou"):
        assert main(["eval", "--manifest", str(ws / "d" / "manifest.jsonl"), "--pred", str(ws / "labels.jsonl"),
                     "--mode", mode, "--points", "32", "--out", str(ws / f"{mode}.json")]) == 0
        assert json.loads((ws / f"{mode}.json").read_text())["mean"] == 1.0


def test_label_unknown_category(ws, capsys):
    synth(ws)
    items = ws / "items.jsonl"
    items.write_text(json.dumps({"image": "d/images/000000.png", "categories": ["zebra"]}) + "\n")
    assert main(["label", "--vocab", str(ws / "vocab.json"), "--input", str(items),
                 "--out", str(ws / "l.jsonl")]) == 1


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seeds", "2"]) == 0
    out = capsys.readouterr().out
    for name in ("focal", "dice", "cos", "end_to_end"):
        assert name in out


def test_ablate_command(ws, capsys):
    cfg = ws / "cfg.json"
    cfg.write_text(json.dumps({"train": {"steps": 3, "dim": 4}}))
    assert main(["ablate", "--sweep", "m=1,full", "--seeds", "0", "--train-count", "4", "--test-count", "2",
                 "--size", "16", "--config", str(cfg), "--out", str(ws / "ab.json"), "--log-level", "warning"]) == 0
    table = json.loads((ws / "ab.json").read_text())
    assert set(table["results"]) == {"1", "full"}
    assert table["config"]["desk_train"]["steps"] == 3 and table["config"]["desk_train"]["lr"] == 0.03
    assert main(["ablate", "--sweep", "lr=1", "--out", str(ws / "x.json")]) == 2
