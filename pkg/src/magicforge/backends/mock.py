"""Deterministic procedural backend.

Scenes are a grey textured background plus one flat-colored convex shape per
mentioned category. Category colors sit on a sphere around mid-grey (one point
per vocabulary id), so shapes are recoverable exactly by color keying and the
renderer's own masks serve as ground truth.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..prompts import find_mentions, template_fallback
from . import DetectionBox, NoiseConfig

PALETTE_RADIUS = 0.42
SHAPE_FAMILIES = ("ellipse", "rectangle", "triangle", "diamond", "hexagon")
SCALE_RANGE = (0.5, 0.75)  # shape bbox size relative to its layout cell


def _rng(*parts) -> np.random.Generator:
    h = hashlib.blake2b(digest_size=16)
    for p in parts:
        h.update(repr(p).encode() if not isinstance(p, bytes) else p)
        h.update(b"|")
    return np.random.default_rng(int.from_bytes(h.digest(), "little"))


@lru_cache(maxsize=64)
def palette(n: int) -> np.ndarray:
    """``(n, 3)`` base colors in [0, 1], Fibonacci-spread on a sphere around grey."""
    if n == 1:
        dirs = np.array([[1.0, -1.0, 0.0]]) / np.sqrt(2)
    else:
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        theta = np.pi * (1 + 5 ** 0.5) * i
        r = np.sqrt(1 - z * z)
        local = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
        # tilt so no point lies exactly on the grey axis
        rot = _rotation(np.array([1.0, 1.0, 1.0]) / np.sqrt(3), np.array([0.3, -0.5, 0.81]))
        dirs = local @ rot.T
    return 0.5 + PALETTE_RADIUS * dirs


def _rotation(a, b):
    b = b / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(a @ b)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1 + c)


@lru_cache(maxsize=64)
def palette_spacing(n: int) -> float:
    if n == 1:
        return 1.0
    p = palette(n)
    d = np.linalg.norm(p[:, None] - p[None], axis=-1)
    d[np.diag_indices(n)] = np.inf
    return float(d.min())


def color_jitter(n: int) -> float:
    return min(0.25 * palette_spacing(n), 0.04)


def key_tolerance(n: int) -> float:
    return min(0.5 * palette_spacing(n), 0.1)


def background(seed: int, width: int, height: int) -> np.ndarray:
    rng = _rng("background", int(seed))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = 0.5 + 0.03 * rng.uniform(-1, 1)
    freq = rng.uniform(0.5, 3.0, size=2) * 2 * np.pi / max(width, height)
    phase = rng.uniform(0, 2 * np.pi)
    wave = 0.07 * np.sin(freq[0] * xx + freq[1] * yy + phase)
    grain = rng.uniform(-0.025, 0.025, size=(height, width))
    tint = rng.uniform(-0.012, 0.012, size=3)
    img = (base + wave + grain)[..., None] + tint
    return np.clip(img, 0, 1)


def _shape_mask(family: str, x0, y0, x1, y1, width, height) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    hw, hh = (x1 - x0) / 2, (y1 - y0) / 2
    u, v = (xx - cx) / hw, (yy - cy) / hh
    if family == "ellipse":
        m = u * u + v * v <= 1
    elif family == "rectangle":
        m = (np.abs(u) <= 1) & (np.abs(v) <= 1)
    elif family == "triangle":
        # apex at top-center, base along the bottom edge
        m = (v <= 1) & (2 * np.abs(u) <= v + 1)
    elif family == "diamond":
        m = np.abs(u) + np.abs(v) <= 1
    elif family == "hexagon":
        m = (np.abs(v) <= 1) & (np.abs(u) + 0.5 * np.abs(v) <= 1)
    else:
        raise ValueError(family)
    return m


@dataclass(frozen=True)
class Scene:
    image: np.ndarray  # (H, W, 3) uint8
    masks: dict  # category id -> (H, W) uint8 ground truth
    boxes: dict  # category id -> (x0, y0, x1, y1) tight pixel bounds


def render_scene(category_ids: Sequence[int], seed: int, width: int, height: int,
                 vocab_size: int) -> Scene:
    """Render the scene for ``category_ids``; pure in its arguments."""
    ids = sorted(set(int(c) for c in category_ids))
    img = background(seed, width, height)
    masks, boxes = {}, {}
    if ids:
        rng = _rng("layout", int(seed), tuple(ids))
        cells = _cells(len(ids), width, height, rng)
        order = rng.permutation(len(ids))
        pal = palette(vocab_size)
        jit = color_jitter(vocab_size)
        for slot, cid in zip(order, ids):
            cx0, cy0, cx1, cy1 = cells[slot]
            cw, ch = cx1 - cx0, cy1 - cy0
            sw, sh = rng.uniform(*SCALE_RANGE, size=2)
            bw, bh = sw * cw, sh * ch
            bx0 = cx0 + rng.uniform(0, cw - bw)
            by0 = cy0 + rng.uniform(0, ch - bh)
            family = SHAPE_FAMILIES[cid % len(SHAPE_FAMILIES)]
            m = _shape_mask(family, bx0, by0, bx0 + bw, by0 + bh, width, height)
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            color = pal[cid] + jit * rng.uniform(0, 1) * direction
            img[m] = color
            masks[cid] = m.astype(np.uint8)
            rows, cols = np.nonzero(m)
            boxes[cid] = (int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)
    return Scene(to_uint8(img), masks, boxes)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)


def _cells(n, width, height, rng):
    if n == 1:
        return [(0, 0, width, height)]
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    if n == 2 and rng.uniform() < 0.5:
        cols, rows = 1, 2
    cells = []
    for r in range(rows):
        for c in range(cols):
            cells.append((c * width / cols, r * height / rows, (c + 1) * width / cols, (r + 1) * height / rows))
    return cells[:n]


def key_mask(image: np.ndarray, category_id: int, vocab_size: int) -> np.ndarray:
    """Pixels whose color lies within the keying tolerance of a category's base color."""
    rgb = np.asarray(image, dtype=np.float64) / 255.0
    dist = np.linalg.norm(rgb - palette(vocab_size)[category_id], axis=-1)
    return dist <= key_tolerance(vocab_size)


class MockTextGenerator:
    name = "mock-text"

    def generate_text(self, instruction: str, *, categories: Sequence[str] = (), seed: int = 0) -> str:
        if not instruction:
            raise ValueError("instruction must be non-empty")
        return template_fallback(list(categories), seed)


class MockImageGenerator:
    name = "mock-image"

    def __init__(self, vocabulary):
        self.vocabulary = vocabulary

    def categories_in(self, text: str) -> list[int]:
        return [self.vocabulary.id_of(n) for n in find_mentions(text, self.vocabulary.names)]

    def scene(self, text: str, seed: int, width: int, height: int) -> Scene:
        return render_scene(self.categories_in(text), seed, width, height, self.vocabulary.N)

    def generate_image(self, text: str, seed: int, width: int = 512, height: int = 512) -> np.ndarray:
        if not text:
            raise ValueError("text must be non-empty")
        return self.scene(text, seed, width, height).image


class MockDetector:
    name = "mock-detector"

    def __init__(self, vocabulary, noise: NoiseConfig | None = None):
        self.vocabulary = vocabulary
        self.noise = noise or NoiseConfig()

    def detect(self, image: np.ndarray, categories: Sequence[str]) -> list[DetectionBox]:
        if not categories:
            raise ValueError("category list must be non-empty")
        image = np.asarray(image)
        height, width = image.shape[:2]
        rng = _rng("detect", image.tobytes(), image.shape, tuple(categories), self.noise.model_dump_json())
        boxes = []
        for name in categories:
            cid = self.vocabulary.id_of(name)
            m = key_mask(image, cid, self.vocabulary.N)
            # draw noise unconditionally so one category's presence doesn't shift another's stream
            drop = rng.uniform()
            jitter = rng.normal(0, 1, size=4) * self.noise.jitter_px
            if not m.any() or drop < self.noise.dropout:
                continue
            rows, cols = np.nonzero(m)
            x0, y0, x1, y1 = np.array([cols.min(), rows.min(), cols.max() + 1, rows.max() + 1], float) + jitter
            x0, x1 = np.clip([x0, x1], 0, width)
            y0, y1 = np.clip([y0, y1], 0, height)
            x0, x1 = _ensure_extent(x0, x1, width)
            y0, y1 = _ensure_extent(y0, y1, height)
            boxes.append(DetectionBox(name, float(x0), float(y0), float(x1), float(y1), self.noise.confidence))
        boxes.sort(key=lambda b: -b.confidence)
        return boxes


def _ensure_extent(a, b, limit):
    if a > b:
        a, b = b, a
    if b - a < 1:
        mid = min(max((a + b) / 2, 0.5), limit - 0.5)
        a, b = mid - 0.5, mid + 0.5
    return a, b


class MockSegmenter:
    name = "mock-segmenter"

    def __init__(self, vocabulary):
        self.vocabulary = vocabulary

    def segment(self, image: np.ndarray, box: DetectionBox) -> np.ndarray:
        image = np.asarray(image)
        height, width = image.shape[:2]
        cid = self.vocabulary.id_of(box.category)
        m = key_mask(image, cid, self.vocabulary.N)
        out = np.zeros((height, width), dtype=np.uint8)
        rs, cs = box.pixel_slice(width, height)
        out[rs, cs] = m[rs, cs]
        return out
