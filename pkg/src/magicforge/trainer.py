"""Desk-scale segmenter: a bilinear scorer over fixed per-pixel features.

Per-pixel features are normalized RGB, position, gradient magnitude, a 3x3 mean
color and the six second-order RGB monomials. The quadratic terms let a single
linear readout carve a ball around one color, which is what a flat-colored
shape needs. For pixel features phi_k (d_f) the model scores category c as
``sigmoid(E_c . (phi_k W) + b_c)`` and uses ``mean_k(phi_k W)`` as the image's
class token. Training follows the full recipe: per-image category subsets,
focal + dice on the masks, hinged cosine between the class tokens of an image
and its counterfactual, Adam.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence, Union

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field

from .losses import LossWeights, total_loss
from .records import Manifest, SampleRecord
from .sampler import sample_categories, resolve_m

log = logging.getLogger(__name__)

FEATURE_NAMES = ("r", "g", "b", "x", "y", "grad", "mean_r", "mean_g", "mean_b",
                 "rr", "gg", "bb", "rg", "rb", "gb")
FEATURE_DIM = len(FEATURE_NAMES)


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    w1: float = Field(100.0, ge=0)
    w2: float = Field(1.0, ge=0)
    w3: float = Field(1.0, ge=0)
    alpha: float = Field(2.0, ge=0)

    def weights(self) -> LossWeights:
        return LossWeights(self.w1, self.w2, self.w3, self.alpha)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(0.0002, gt=0)
    batch_size: int = Field(8, ge=1)
    steps: int = Field(300, ge=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    m_subset: Union[int, Literal["full", "known"]] = 100
    dim: int = Field(16, ge=1)
    seed: int = 0
    loss: LossConfig = LossConfig()


# -- features -----------------------------------------------------------------

@dataclass(frozen=True)
class Features:
    grid: np.ndarray  # (H, W, FEATURE_DIM)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape[:2]

    @property
    def flat(self) -> np.ndarray:
        return self.grid.reshape(-1, FEATURE_DIM)

    @property
    def pooled(self) -> np.ndarray:
        return self.flat.mean(axis=0)


def extract_features(image) -> Features:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) RGB image, got {img.shape}")
    h, w = img.shape[:2]
    rgb = img / 255.0 * 2 - 1
    xs = np.linspace(-1, 1, w) if w > 1 else np.zeros(1)
    ys = np.linspace(-1, 1, h) if h > 1 else np.zeros(1)
    xx, yy = np.meshgrid(xs, ys)
    lum = img.mean(axis=2) / 255.0
    if h > 1 and w > 1:
        gy, gx = np.gradient(lum)
    else:
        gy = gx = np.zeros_like(lum)
    grad = np.hypot(gx, gy)
    padded = np.pad(rgb, ((1, 1), (1, 1), (0, 0)), mode="edge")
    mean3 = sum(padded[i:i + h, j:j + w] for i in range(3) for j in range(3)) / 9.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    quad = np.stack([r * r, g * g, b * b, r * g, r * b, g * b], axis=2)
    grid = np.concatenate([rgb, xx[..., None], yy[..., None], grad[..., None], mean3, quad], axis=2)
    return Features(grid)


# -- model --------------------------------------------------------------------

@dataclass
class ToyModelState:
    W: np.ndarray  # (FEATURE_DIM, d)
    E: np.ndarray  # (N, d)
    b: np.ndarray  # (N,)

    @classmethod
    def init(cls, vocab_size: int, dim: int, seed: int) -> "ToyModelState":
        rng = np.random.default_rng([int(seed), 0x5E6])
        W = rng.uniform(-0.1, 0.1, size=(FEATURE_DIM, dim))
        E = rng.uniform(-0.1, 0.1, size=(vocab_size, dim))
        return cls(W, E, np.zeros(vocab_size))

    def params(self) -> dict:
        return {"W": self.W, "E": self.E, "b": self.b}

    def copy(self) -> "ToyModelState":
        return ToyModelState(self.W.copy(), self.E.copy(), self.b.copy())

    def to_dict(self) -> dict:
        return {"W": self.W.tolist(), "E": self.E.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ToyModelState":
        return cls(np.asarray(d["W"], float), np.asarray(d["E"], float), np.asarray(d["b"], float))


def _as_features(x) -> Features:
    return x if isinstance(x, Features) else extract_features(x)


def sigmoid(z):
    return 0.5 * (1 + np.tanh(0.5 * z))


def forward(model: ToyModelState, image, ids: Sequence[int]):
    """Scores ``(m, H, W)`` for the categories ``ids`` and the class token ``(d,)``."""
    feats = _as_features(image)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= model.E.shape[0]):
        raise IndexError(f"category id out of range 0..{model.E.shape[0] - 1}")
    h = feats.flat @ model.W
    logits = model.E[ids] @ h.T + model.b[ids][:, None]
    H, W_ = feats.shape
    return sigmoid(logits).reshape(len(ids), H, W_), h.mean(axis=0)


@dataclass
class Example:
    """Everything one training image needs, precomputed."""

    features: Features
    co_pooled: np.ndarray  # pooled features of the counterfactual image
    known: tuple[int, ...]
    planes: dict  # category id -> flat binary gt

    def gt_for(self, ids) -> np.ndarray:
        H, W_ = self.features.shape
        gt = np.zeros((len(ids), H * W_))
        for i, c in enumerate(ids):
            if c in self.planes:
                gt[i] = self.planes[c]
        return gt.reshape(len(ids), H, W_)


def example_loss_and_grads(model: ToyModelState, ex: Example, ids, weights: LossWeights):
    """Loss terms for one image and gradients wrt W, E (rows ``ids``), b (entries ``ids``)."""
    ids = np.asarray(ids, dtype=np.int64)
    phi = ex.features.flat
    h = phi @ model.W
    E_sub = model.E[ids]
    logits = E_sub @ h.T + model.b[ids][:, None]
    P = sigmoid(logits)
    H, W_ = ex.features.shape
    gt = ex.gt_for(ids)
    p_cls = ex.features.pooled @ model.W
    p_co = ex.co_pooled @ model.W
    terms = total_loss(P.reshape(len(ids), H, W_), gt, p_cls, p_co, weights)
    G = terms.d_pred.reshape(len(ids), -1) * P * (1 - P)
    dE = G @ h
    db = G.sum(axis=1)
    dh = G.T @ E_sub
    dW = phi.T @ dh + np.outer(ex.features.pooled, terms.d_cls) + np.outer(ex.co_pooled, terms.d_co)
    return terms, dW, dE, db


@dataclass
class LossReport:
    focal: float
    dice: float
    cos: float
    total: float

    def to_dict(self):
        return {"focal": self.focal, "dice": self.dice, "cos": self.cos, "total": self.total}


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(p))
            v = self.v.setdefault(k, np.zeros_like(p))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainState:
    model: ToyModelState
    optimizer: Adam


def new_state(vocab_size: int, config: TrainConfig) -> TrainState:
    return TrainState(ToyModelState.init(vocab_size, config.dim, config.seed),
                      Adam(config.lr, config.beta1, config.beta2, config.eps))


def train_step(state: TrainState, batch: Sequence[Example], config: TrainConfig,
               rng: np.random.Generator) -> tuple[TrainState, LossReport]:
    """One Adam update on the batch-mean loss. Gradients are summed in batch order."""
    model = state.model
    n_vocab = model.E.shape[0]
    weights = config.loss.weights()
    gW = np.zeros_like(model.W)
    gE = np.zeros_like(model.E)
    gb = np.zeros_like(model.b)
    sums = np.zeros(4)
    for ex in batch:
        m = resolve_m(config.m_subset, len(ex.known), n_vocab)
        subset = sample_categories(ex.known, n_vocab, m, rng)
        terms, dW, dE, db = example_loss_and_grads(model, ex, subset.ids, weights)
        ids = np.asarray(subset.ids)
        gW += dW
        gE[ids] += dE
        gb[ids] += db
        sums += (terms.focal, terms.dice, terms.cos, terms.total)
    n = len(batch)
    state.optimizer.step(model.params(), {"W": gW / n, "E": gE / n, "b": gb / n})
    return state, LossReport(*(float(s / n) for s in sums))


# -- data ---------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def make_example(record: SampleRecord, root) -> Example:
    root = Path(root)
    feats = extract_features(load_image(root / record.image_ref))
    co = extract_features(load_image(root / record.counterfactual_image_ref))
    planes = {m.category_id: m.decode().reshape(-1).astype(np.float64) for m in record.masks}
    return Example(feats, co.pooled, tuple(record.categories), planes)


def fit(manifest: Manifest, config: TrainConfig, root, vocab_size: int, checkpoint=None,
        examples: Sequence[Example] | None = None):
    """Train from scratch; returns ``(model, history)``. Writes ``checkpoint`` if given."""
    if not manifest.records:
        raise ValueError("cannot train on an empty manifest")
    if examples is None:
        examples = [make_example(r, root) for r in manifest.records]
    state = new_state(vocab_size, config)
    rng = np.random.default_rng([int(config.seed), 0x7A1])
    history: list[LossReport] = []
    order: list[int] = []
    for step in range(config.steps):
        batch = []
        while len(batch) < min(config.batch_size, len(examples)):
            if not order:
                order = rng.permutation(len(examples)).tolist()
            batch.append(examples[order.pop()])
        state, report = train_step(state, batch, config, rng)
        history.append(report)
        if step % 50 == 0 or step == config.steps - 1:
            log.info(json.dumps({"event": "train", "step": step, **report.to_dict()}))
    if checkpoint is not None:
        save_checkpoint(checkpoint, state.model, config)
    return state.model, history


def save_checkpoint(path, model: ToyModelState, config: TrainConfig, extra: dict | None = None) -> None:
    doc = {"format_version": 1, **model.to_dict(), "config": config.model_dump()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[ToyModelState, TrainConfig]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return ToyModelState.from_dict(doc), TrainConfig(**doc.get("config", {}))


def predict_scores(model: ToyModelState, image) -> np.ndarray:
    """Scores for every vocabulary category, shape ``(N, H, W)``."""
    pred, _ = forward(model, image, np.arange(model.E.shape[0]))
    return pred
