import dataclasses
import json

import numpy as np
import pytest

from magicforge.backends import BackendConfig, NoiseConfig, make_backends
from magicforge.backends.mock import MockImageGenerator, render_scene
from magicforge.pipeline import (PipelineConfig, Rejection, RetryBudgetExhausted, derive_seed, run_pipeline,
                                 synthesize_sample)
from magicforge.prompts import NOTHING
from magicforge.records import Manifest, SampleRecord, Vocabulary, validate_manifest
from magicforge.trainer import load_image

VOCAB = Vocabulary(("cat", "dog", "bus", "bicycle", "kite", "teapot"))


def config(tmp_path, **kw):
    base = dict(samples_target=8, seed=3, out_dir=str(tmp_path), backend=BackendConfig(width=40, height=40))
    base.update(kw)
    return PipelineConfig(**base)


def test_noise_free_masks_equal_renderer_truth(tmp_path):
    manifest, report = run_pipeline(VOCAB, config(tmp_path, categories_per_sample=2))
    assert report.accepted == 8 and report.rejected == 0
    for r in manifest.records:
        scene = render_scene(r.categories, r.seed, 40, 40, VOCAB.N)
        for m in r.masks:
            assert np.array_equal(m.decode(), scene.masks[m.category_id])
        assert np.array_equal(load_image(tmp_path / r.image_ref), scene.image)


def test_counterfactual_image_has_no_target(tmp_path):
    manifest, _ = run_pipeline(VOCAB, config(tmp_path))
    gen = MockImageGenerator(VOCAB)
    for r in manifest.records:
        assert NOTHING in r.counterfactual_text
        assert gen.categories_in(r.counterfactual_text) == []
        co = load_image(tmp_path / r.counterfactual_image_ref)
        assert np.array_equal(co, render_scene([], r.seed, 40, 40, VOCAB.N).image)


def test_outputs_written_and_valid(tmp_path):
    run_pipeline(VOCAB, config(tmp_path))
    back = Manifest.read(tmp_path / "manifest.jsonl")
    assert len(back.records) == 8
    assert validate_manifest(back, Vocabulary.load(tmp_path / "vocabulary.json"), root=tmp_path) == {}
    rep = json.loads((tmp_path / "run-report.json").read_text())
    assert rep["accepted"] == 8 and rep["config"]["seed"] == 3


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_rerun_is_byte_identical(tmp_path):
    run_pipeline(VOCAB, config(tmp_path / "a"))
    run_pipeline(VOCAB, config(tmp_path / "b"))
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    a.pop("run-report.json"), b.pop("run-report.json")  # echoes out_dir
    assert a == b


def test_parallel_jobs_match_serial(tmp_path):
    m1, _ = run_pipeline(VOCAB, config(tmp_path / "s", categories_per_sample=2))
    m4, _ = run_pipeline(VOCAB, config(tmp_path / "p", categories_per_sample=2, jobs=4))
    assert (tmp_path / "s" / "manifest.jsonl").read_bytes() == (tmp_path / "p" / "manifest.jsonl").read_bytes()


def test_different_seed_differs(tmp_path):
    a, _ = run_pipeline(VOCAB, config(tmp_path / "a"), write=False)
    b, _ = run_pipeline(VOCAB, config(tmp_path / "b", seed=4), write=False)
    assert [r.seed for r in a.records] != [r.seed for r in b.records]


def test_derive_seed_stable():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)
    assert 0 <= derive_seed(2**40, 7) < 2**63


def test_forced_dropout_rejects_with_reason():
    cfg = PipelineConfig(backend=BackendConfig(width=32, height=32, noise=NoiseConfig(dropout=1.0)))
    backends = make_backends(cfg.backend, VOCAB)
    out = synthesize_sample([0], 5, backends, cfg, VOCAB, "x")
    assert out == Rejection("target not detected: cat")


def test_low_confidence_fails_gate():
    cfg = PipelineConfig(backend=BackendConfig(width=32, height=32, noise=NoiseConfig(confidence=0.2)))
    out = synthesize_sample([2], 5, make_backends(cfg.backend, VOCAB), cfg, VOCAB, "x")
    assert out == Rejection("target not detected: bus")
    relaxed = cfg.model_copy(update={"detection_gate_threshold": 0.1})
    assert isinstance(synthesize_sample([2], 5, make_backends(cfg.backend, VOCAB), relaxed, VOCAB, "x"),
                      SampleRecord)


class SilentText:
    name = "silent"

    def generate_text(self, instruction, *, categories=(), seed=0):
        return "An empty room with a window."


def test_text_without_target_rejected():
    cfg = PipelineConfig(backend=BackendConfig(width=32, height=32))
    backends = dataclasses.replace(make_backends(cfg.backend, VOCAB), text=SilentText())
    assert synthesize_sample([1], 0, backends, cfg, VOCAB, "x") == Rejection("category absent from text")


def test_partial_dropout_still_meets_target(tmp_path):
    noisy = BackendConfig(width=32, height=32, noise=NoiseConfig(dropout=0.5, seed=9))
    manifest, report = run_pipeline(VOCAB, config(tmp_path, samples_target=12, backend=noisy))
    assert report.accepted == len(manifest.records) == 12
    assert report.rejected > 0
    assert set(report.rejected_by_reason) <= {f"target not detected: {n}" for n in VOCAB.names}


def test_retry_budget_exhausted(tmp_path):
    dead = BackendConfig(width=32, height=32, noise=NoiseConfig(dropout=1.0))
    with pytest.raises(RetryBudgetExhausted, match="3 attempts"):
        run_pipeline(VOCAB, config(tmp_path, backend=dead, max_attempts=3))


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(categories_per_sample=3)
    with pytest.raises(ValueError):
        PipelineConfig(samples_target=0)
