"""Prompt -> text -> image pair -> detect -> segment -> validated record."""
from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field

from .backends import BackendConfig, Backends, make_backends
from .prompts import ConditionSet, build_instruction, counterfactualize, find_mentions
from .records import (MANIFEST_NAME, VOCABULARY_NAME, ClassMask, Manifest, SampleRecord, Vocabulary,
                      validate_sample)

log = logging.getLogger(__name__)

IMAGE_DIR = "images"
REPORT_NAME = "run-report.json"


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples_target: int = Field(10, ge=1)
    categories_per_sample: int = Field(1, ge=1, le=2)
    detection_gate_threshold: float = Field(0.35, ge=0, le=1)
    seed: int = 0
    max_attempts: int = Field(20, ge=1)  # per sample, before the run fails
    jobs: int = Field(1, ge=1)
    out_dir: str = "out"
    conditions: list[str] | None = None
    backend: BackendConfig = BackendConfig()


class RetryBudgetExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class Rejection:
    reason: str


@dataclass
class RunReport:
    accepted: int = 0
    rejected: int = 0
    rejected_by_reason: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "rejected": self.rejected,
                "rejected_by_reason": dict(sorted(self.rejected_by_reason.items()))}


def derive_seed(master: int, *parts: int) -> int:
    h = hashlib.blake2b(repr((int(master),) + tuple(int(p) for p in parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1  # keep within signed 64-bit


def save_png(image: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    # textured scenes compress poorly, so favor encode speed over file size
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG", compress_level=1)


def label_image(image: np.ndarray, categories: Sequence[int], backends: Backends, vocabulary: Vocabulary,
                gate: float) -> list[ClassMask] | Rejection:
    """Detect, gate, segment and union per category. Every category must survive the gate."""
    names = [vocabulary.names[c] for c in categories]
    height, width = image.shape[:2]
    boxes = backends.detector.detect(image, names)
    masks = []
    for cid, name in zip(categories, names):
        kept = [b for b in boxes if b.category == name and b.confidence >= gate]
        if not kept:
            return Rejection(f"target not detected: {name}")
        union = np.zeros((height, width), dtype=np.uint8)
        for box in kept:
            union |= backends.segmenter.segment(image, box).astype(np.uint8)
        if not union.any():
            return Rejection(f"empty mask: {name}")
        masks.append(ClassMask.from_grid(cid, union))
    return masks


def synthesize_sample(categories: Sequence[int], seed: int, backends: Backends, config: PipelineConfig,
                      vocabulary: Vocabulary, sample_id: str, out_dir=None) -> SampleRecord | Rejection:
    """Run every stage for one sample; quality failures come back as ``Rejection``.

    Transport errors (``BackendError``) propagate.
    """
    names = [vocabulary.names[c] for c in categories]
    conditions = ConditionSet(tuple(config.conditions)) if config.conditions else ConditionSet()
    width, height = config.backend.width, config.backend.height

    instruction = build_instruction(names, conditions, count=1)
    text = backends.text.generate_text(instruction, categories=names, seed=seed)
    if set(find_mentions(text, names)) != set(names):
        return Rejection("category absent from text")
    cf = counterfactualize(text, names)

    image = backends.image.generate_image(text, seed, width, height)
    co_image = backends.image.generate_image(cf.text, seed, width, height)

    masks = label_image(image, categories, backends, vocabulary, config.detection_gate_threshold)
    if isinstance(masks, Rejection):
        return masks

    image_ref = f"{IMAGE_DIR}/{sample_id}.png"
    co_ref = f"{IMAGE_DIR}/{sample_id}_co.png"
    record = SampleRecord(
        id=sample_id, text=text, counterfactual_text=cf.text, categories=tuple(categories),
        image_ref=image_ref, counterfactual_image_ref=co_ref, masks=tuple(masks), seed=seed,
        provenance=backends.provenance(),
    )
    problems = validate_sample(record, vocabulary, image_size_hint=(width, height))
    if problems:
        return Rejection("invalid record: " + "; ".join(problems))
    if out_dir is not None:
        save_png(image, Path(out_dir) / image_ref)
        save_png(co_image, Path(out_dir) / co_ref)
    return record


def draw_categories(seed: int, vocab_size: int, k: int) -> list[int]:
    rng = np.random.default_rng(seed)
    return sorted(int(c) for c in rng.choice(vocab_size, size=min(k, vocab_size), replace=False))


def run_pipeline(vocabulary: Vocabulary, config: PipelineConfig, backends: Backends | None = None,
                 write: bool = True, echo: dict | None = None) -> tuple[Manifest, RunReport]:
    """Produce ``samples_target`` accepted records. ``echo`` replaces the config stored in the run report."""
    if vocabulary.N < 1:
        raise ValueError("vocabulary must not be empty")
    backends = backends or make_backends(config.backend, vocabulary)
    out_dir = Path(config.out_dir) if write else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def one(index: int):
        rejections = []
        for attempt in range(config.max_attempts):
            seed = derive_seed(config.seed, index, attempt)
            cats = draw_categories(seed, vocabulary.N, config.categories_per_sample)
            result = synthesize_sample(cats, seed, backends, config, vocabulary, f"{index:06d}", out_dir)
            if isinstance(result, SampleRecord):
                return result, rejections
            log.info(json.dumps({"event": "rejected", "sample": index, "attempt": attempt,
                                 "reason": result.reason}))
            rejections.append(result.reason)
        raise RetryBudgetExhausted(
            f"sample {index}: no accepted result in {config.max_attempts} attempts "
            f"(last reason: {rejections[-1]})")

    if config.jobs > 1:
        with ThreadPoolExecutor(config.jobs) as pool:
            results = list(pool.map(one, range(config.samples_target)))
    else:
        results = [one(i) for i in range(config.samples_target)]

    report = RunReport()
    records = []
    for record, rejections in results:  # already in sample-index order
        records.append(record)
        report.accepted += 1
        report.rejected += len(rejections)
        report.rejected_by_reason.update(rejections)
    manifest = Manifest(records)
    if out_dir is not None:
        vocabulary.save(out_dir / VOCABULARY_NAME)
        manifest.write(out_dir / MANIFEST_NAME)
        payload = {**report.to_dict(), "config": echo if echo is not None else config.model_dump()}
        (out_dir / REPORT_NAME).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return manifest, report
