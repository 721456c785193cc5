import json

import numpy as np
import pytest

from magicforge.records import ClassMask, Manifest, SampleRecord, Vocabulary, validate_manifest, validate_sample

VOCAB = Vocabulary(("cat", "dog", "bus"))


def make_record(**overrides):
    grid = np.zeros((32, 32), dtype=np.uint8)
    grid[4:10, 5:12] = 1
    base = dict(
        id="000001",
        text="A small cat sleeps on a sofa.",
        counterfactual_text="A small nothing sleeps on a sofa.",
        categories=(0,),
        image_ref="images/000001.png",
        counterfactual_image_ref="images/000001_co.png",
        masks=(ClassMask.from_grid(0, grid),),
        seed=42,
        provenance={"text": "mock"},
    )
    base.update(overrides)
    return SampleRecord(**base)


def test_vocabulary_ids_and_uniqueness():
    assert VOCAB.N == 3 and VOCAB.id_of("Dog") == 1
    with pytest.raises(ValueError):
        Vocabulary(("Traffic Light", "traffic  light"))
    with pytest.raises(ValueError):
        Vocabulary(())


def test_vocabulary_file_roundtrip(tmp_path):
    VOCAB.save(tmp_path / "vocabulary.json")
    doc = json.loads((tmp_path / "vocabulary.json").read_text())
    assert doc == {"format_version": 1, "names": ["cat", "dog", "bus"]}
    assert Vocabulary.load(tmp_path / "vocabulary.json") == VOCAB


def test_well_formed_record_is_valid():
    assert validate_sample(make_record(), VOCAB, image_size_hint=(32, 32)) == []


def test_three_categories_rejected():
    rec = make_record(categories=(0, 1, 2),
                      text="cat dog bus", counterfactual_text="nothing nothing nothing")
    problems = validate_sample(rec, VOCAB)
    assert any(p.startswith("category count out of range") for p in problems)


def test_mask_dimension_violation():
    rec = make_record(masks=(ClassMask.from_grid(0, np.ones((64, 64), dtype=np.uint8)),))
    problems = validate_sample(rec, VOCAB, image_size_hint=(32, 32))
    assert any("dimension" in p for p in problems)


def test_other_violations_reported():
    rec = make_record(counterfactual_text="A small cat sleeps on a sofa.",
                      masks=(ClassMask(1, 32, 32, (1000,)),))
    problems = validate_sample(rec, VOCAB)
    assert any("counterfactual_text" in p for p in problems)
    assert any("do not match categories" in p for p in problems)
    assert any("run sum" in p for p in problems)
    rec2 = make_record(text="A dog", counterfactual_text="A nothing")
    assert any("absent from text" in p for p in validate_sample(rec2, VOCAB))


def test_validate_never_mutates():
    rec = make_record()
    before = rec.to_dict()
    validate_sample(rec, VOCAB, image_size_hint=(16, 16))
    assert rec.to_dict() == before


def test_record_field_names_exact():
    assert list(make_record().to_dict()) == [
        "id", "text", "counterfactual_text", "categories", "image_ref", "counterfactual_image_ref",
        "masks", "seed", "provenance"]
    assert list(make_record().masks[0].to_dict()) == ["category_id", "width", "height", "runs"]


def test_manifest_byte_stable(tmp_path):
    records = [make_record(id=f"{i:06d}", seed=i) for i in range(5)]
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    Manifest(records).write(a)
    Manifest.read(a).write(b)
    assert a.read_bytes() == b.read_bytes()
    assert Manifest.read(b).records == records


def test_manifest_duplicate_ids():
    m = Manifest([make_record(), make_record()])
    report = validate_manifest(m, VOCAB)
    assert "duplicate id" in report["000001"]


def test_label_grid_overlap_lower_id_wins():
    g = np.zeros((4, 4), dtype=np.uint8)
    g[:2] = 1
    rec = make_record(categories=(0, 1), text="cat and dog", counterfactual_text="nothing and nothing",
                      masks=(ClassMask.from_grid(1, np.ones((4, 4), dtype=np.uint8)), ClassMask.from_grid(0, g)))
    labels = rec.label_grid()
    assert (labels[:2] == 0).all() and (labels[2:] == 1).all()
