"""mIoU and point-sampled p-mIoU over per-pixel label grids (-1 = background)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

BACKGROUND = -1
DEFAULT_BG_THRESHOLD = 0.95
DEFAULT_POINTS = 256


def assign_labels(pred, bg_threshold: float = DEFAULT_BG_THRESHOLD, category_ids=None) -> np.ndarray:
    """Argmax category per pixel, or background when the best score is below threshold.

    ``pred`` is ``(m, H, W)``; plane i stands for ``category_ids[i]`` (default i).
    Ties go to the lowest category id.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ids = np.arange(pred.shape[0]) if category_ids is None else np.asarray(category_ids)
    order = np.argsort(ids, kind="stable")
    ranked = pred[order]
    best = np.argmax(ranked, axis=0)  # first max wins -> lowest id after sorting
    best_score = np.take_along_axis(ranked, best[None], axis=0)[0]
    labels = ids[order][best]
    return np.where(best_score >= bg_threshold, labels, BACKGROUND).astype(np.int64)


@dataclass
class ConfusionAccumulator:
    categories: tuple[int, ...]
    intersection: dict = field(default_factory=dict)
    union: dict = field(default_factory=dict)
    gt_pixels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.categories = tuple(int(c) for c in self.categories)
        for c in self.categories:
            self.intersection.setdefault(c, 0)
            self.union.setdefault(c, 0)
            self.gt_pixels.setdefault(c, 0)

    def add(self, pred_labels, gt_labels) -> None:
        pred = np.asarray(pred_labels).reshape(-1)
        gt = np.asarray(gt_labels).reshape(-1)
        if pred.shape != gt.shape:
            raise ValueError(f"dimension mismatch: {np.shape(pred_labels)} vs {np.shape(gt_labels)}")
        for c in self.categories:
            p, g = pred == c, gt == c
            self.intersection[c] += int(np.count_nonzero(p & g))
            self.union[c] += int(np.count_nonzero(p | g))
            self.gt_pixels[c] += int(np.count_nonzero(g))

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        cats = tuple(dict.fromkeys(self.categories + other.categories))
        out = ConfusionAccumulator(cats)
        for acc in (self, other):
            for c in acc.categories:
                out.intersection[c] += acc.intersection[c]
                out.union[c] += acc.union[c]
                out.gt_pixels[c] += acc.gt_pixels[c]
        return out

    def report(self, mode: str = "miou", metadata: dict | None = None) -> "MetricReport":
        per = {c: self.intersection[c] / self.union[c] for c in self.categories if self.union[c] > 0}
        mean = float(np.mean(list(per.values()))) if per else float("nan")
        meta = {"background_in_mean": False, "accumulation": "dataset-wide",
                "excluded": "categories with empty union"}
        meta.update(metadata or {})
        return MetricReport(per, mean, mode, meta)


@dataclass
class MetricReport:
    per_category: dict
    mean: float
    mode: str = "miou"
    metadata: dict = field(default_factory=dict)

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        def key(c):
            return names[c] if names is not None else str(c)

        return {"mode": self.mode, "mean": self.mean,
                "per_category": {key(c): v for c, v in sorted(self.per_category.items())},
                "metadata": self.metadata}


def miou(pred_grids, gt_grids, categories) -> MetricReport:
    acc = ConfusionAccumulator(tuple(categories))
    pred_grids, gt_grids = list(pred_grids), list(gt_grids)
    if len(pred_grids) != len(gt_grids):
        raise ValueError("prediction and ground-truth lists differ in length")
    for p, g in zip(pred_grids, gt_grids):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"dimension mismatch: {np.shape(p)} vs {np.shape(g)}")
        acc.add(p, g)
    return acc.report("miou")


def sample_points(gt, categories, k: int, rng: np.random.Generator) -> np.ndarray:
    """Flat indices of sampled annotated pixels, stratified by gt label.

    Annotated pixels are those labelled background or one of ``categories``.
    Every label present gets ceil(k / #present) points, capped by its pixel
    count. When ``k`` covers all annotated pixels, all of them are returned.
    """
    gt = np.asarray(gt).reshape(-1)
    allowed = np.concatenate(([BACKGROUND], np.asarray(categories, dtype=np.int64)))
    annotated = np.flatnonzero(np.isin(gt, allowed))
    if k >= annotated.size:
        return annotated
    present = np.unique(gt[annotated])
    per = math.ceil(k / len(present))
    picks = []
    for lab in present:
        pool = annotated[gt[annotated] == lab]
        picks.append(rng.choice(pool, size=min(per, pool.size), replace=False))
    return np.sort(np.concatenate(picks))


def p_miou(pred_grids, gt_grids, categories, points_per_image: int = DEFAULT_POINTS,
           rng: np.random.Generator | None = None) -> MetricReport:
    if points_per_image < 1:
        raise ValueError("points_per_image must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    acc = ConfusionAccumulator(tuple(categories))
    skipped = 0
    for i, (p, g) in enumerate(zip(pred_grids, gt_grids)):
        p, g = np.asarray(p), np.asarray(g)
        if p.shape != g.shape:
            raise ValueError(f"dimension mismatch: {p.shape} vs {g.shape}")
        idx = sample_points(g, categories, points_per_image, rng)
        if idx.size == 0:
            log.warning("image %d has no annotated pixels; skipped", i)
            skipped += 1
            continue
        acc.add(p.reshape(-1)[idx], g.reshape(-1)[idx])
    return acc.report("pmiou", {"points_per_image": points_per_image, "skipped_images": skipped,
                                "stratified_by": "gt label incl. background"})
