"""Dataset data model: vocabulary, per-category RLE masks, sample records, manifests."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .prompts import counterfactualize, find_mentions, normalize_name
from .rle import check_runs, rle_decode, rle_encode

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"
VOCABULARY_NAME = "vocabulary.json"
MAX_CATEGORIES = 2


@dataclass(frozen=True)
class Vocabulary:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise ValueError("vocabulary must not be empty")
        seen = {}
        for i, name in enumerate(self.names):
            key = normalize_name(name)
            if not key:
                raise ValueError(f"empty category name at id {i}")
            if key in seen:
                raise ValueError(f"duplicate category name {name!r} (ids {seen[key]} and {i})")
            seen[key] = i

    @property
    def N(self) -> int:
        return len(self.names)

    def __len__(self):
        return len(self.names)

    def id_of(self, name: str) -> int:
        key = normalize_name(name)
        for i, n in enumerate(self.names):
            if normalize_name(n) == key:
                return i
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps({"format_version": FORMAT_VERSION, "names": list(self.names)}, indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, list):
            return cls(tuple(data))
        return cls(tuple(data["names"]))


@dataclass(frozen=True)
class ClassMask:
    category_id: int
    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(int(r) for r in self.runs))

    @classmethod
    def from_grid(cls, category_id: int, grid) -> "ClassMask":
        grid = np.asarray(grid)
        height, width = grid.shape
        return cls(int(category_id), int(width), int(height), tuple(rle_encode(grid, width, height)))

    def decode(self) -> np.ndarray:
        return rle_decode(self.runs, self.width, self.height)

    def problems(self) -> list[str]:
        return check_runs(self.runs, self.width, self.height)

    def to_dict(self) -> dict:
        return {"category_id": self.category_id, "width": self.width, "height": self.height,
                "runs": list(self.runs)}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassMask":
        return cls(int(d["category_id"]), int(d["width"]), int(d["height"]), tuple(d["runs"]))


@dataclass(frozen=True)
class SampleRecord:
    id: str
    text: str
    counterfactual_text: str
    categories: tuple[int, ...]
    image_ref: str
    counterfactual_image_ref: str
    masks: tuple[ClassMask, ...]
    seed: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(int(c) for c in self.categories))
        object.__setattr__(self, "masks", tuple(self.masks))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["categories"] = list(self.categories)
        d["masks"] = [m.to_dict() for m in self.masks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        return cls(
            id=str(d["id"]),
            text=d["text"],
            counterfactual_text=d["counterfactual_text"],
            categories=tuple(d["categories"]),
            image_ref=d["image_ref"],
            counterfactual_image_ref=d["counterfactual_image_ref"],
            masks=tuple(ClassMask.from_dict(m) for m in d["masks"]),
            seed=int(d["seed"]),
            provenance=dict(d.get("provenance", {})),
        )

    def label_grid(self) -> np.ndarray:
        """Per-pixel category id (-1 = background); lower id wins on overlap."""
        if not self.masks:
            raise ValueError(f"record {self.id} has no masks")
        return masks_to_labels(self.masks, self.masks[0].width, self.masks[0].height)


def masks_to_labels(masks, width: int, height: int) -> np.ndarray:
    """Paint binary masks into one label grid (-1 = background); lower id wins on overlap."""
    labels = np.full((height, width), -1, dtype=np.int64)
    for mask in sorted(masks, key=lambda m: m.category_id, reverse=True):
        if (mask.width, mask.height) != (width, height):
            raise ValueError(f"mask for category {mask.category_id} is {mask.width}x{mask.height}, "
                             f"expected {width}x{height}")
        labels[mask.decode().astype(bool)] = mask.category_id
    return labels


def labels_to_masks(labels) -> list[ClassMask]:
    labels = np.asarray(labels)
    return [ClassMask.from_grid(int(c), labels == c) for c in np.unique(labels) if c >= 0]


def record_line(record: SampleRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=False, separators=(",", ":"))


@dataclass
class Manifest:
    records: list[SampleRecord]
    vocabulary_ref: str = VOCABULARY_NAME
    format_version: int = FORMAT_VERSION

    def write(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            for rec in self.records:
                f.write(record_line(rec) + "\n")
        os.replace(tmp, path)

    @classmethod
    def read(cls, path) -> "Manifest":
        records = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    records.append(SampleRecord.from_dict(json.loads(line)))
                except (KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
        return cls(records)


def image_size(path) -> tuple[int, int]:
    from PIL import Image

    with Image.open(path) as im:
        return im.size


def validate_sample(record: SampleRecord, vocabulary: Vocabulary, *, root=None,
                    image_size_hint: tuple[int, int] | None = None) -> list[str]:
    """Every invariant violation of ``record`` as a message; empty when valid.

    Image dimensions are checked against ``image_size_hint`` (width, height) if
    given, otherwise against the PNG at ``root / image_ref`` when ``root`` is given.
    """
    out = []
    if not record.id:
        out.append("empty id")
    if not 1 <= len(record.categories) <= MAX_CATEGORIES:
        out.append(f"category count out of range: {len(record.categories)} (allowed 1..{MAX_CATEGORIES})")
    if len(set(record.categories)) != len(record.categories):
        out.append("duplicate category ids")
    bad_ids = [c for c in record.categories if not 0 <= c < vocabulary.N]
    if bad_ids:
        out.append(f"category id out of vocabulary range: {bad_ids}")
    names = [vocabulary.names[c] for c in record.categories if 0 <= c < vocabulary.N]

    if not record.text:
        out.append("empty text")
    else:
        missing = set(names) - set(find_mentions(record.text, names))
        if missing:
            out.append(f"category absent from text: {sorted(missing)}")
        if record.counterfactual_text != counterfactualize(record.text, names).text:
            out.append("counterfactual_text does not match class-name substitution of text")

    if not record.image_ref or not record.counterfactual_image_ref:
        out.append("missing image reference")

    mask_ids = [m.category_id for m in record.masks]
    if len(record.masks) != len(record.categories) or set(mask_ids) != set(record.categories):
        out.append(f"masks {mask_ids} do not match categories {list(record.categories)}")
    dims = {(m.width, m.height) for m in record.masks}
    if len(dims) > 1:
        out.append(f"masks disagree on dimensions: {sorted(dims)}")
    for m in record.masks:
        for p in m.problems():
            out.append(f"mask {m.category_id}: {p}")

    expected = image_size_hint
    if expected is None and root is not None and record.image_ref:
        img_path = Path(root) / record.image_ref
        if img_path.exists():
            expected = image_size(img_path)
        else:
            out.append(f"image file not found: {record.image_ref}")
        if record.counterfactual_image_ref and not (Path(root) / record.counterfactual_image_ref).exists():
            out.append(f"image file not found: {record.counterfactual_image_ref}")
    if expected is not None:
        for m in record.masks:
            if (m.width, m.height) != tuple(expected):
                out.append(f"mask {m.category_id} dimension {m.width}x{m.height} "
                           f"!= image {expected[0]}x{expected[1]}")
    return out


def validate_manifest(manifest: Manifest, vocabulary: Vocabulary, root=None) -> dict[str, list[str]]:
    """Violations keyed by record id (plus ``"<manifest>"`` for cross-record issues)."""
    report: dict[str, list[str]] = {}
    seen = set()
    for rec in manifest.records:
        problems = validate_sample(rec, vocabulary, root=root)
        if rec.id in seen:
            problems.append("duplicate id")
        seen.add(rec.id)
        if problems:
            report[rec.id] = problems
    return report
