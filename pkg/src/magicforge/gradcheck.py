"""Finite-difference verification of every analytic gradient."""
from __future__ import annotations

import numpy as np

from .losses import LossWeights, counterfactual_cosine_loss, dice_loss, focal_loss
from .trainer import FEATURE_DIM, Example, ToyModelState, example_loss_and_grads, extract_features

LOSS_TOL = 1e-5
END_TO_END_TOL = 1e-4
STEP = 1e-5


def central_diff(f, x: np.ndarray, h: float = STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_error(analytic, numeric) -> float:
    """Max-norm relative error ``|a - n|_inf / max(|a|_inf, |n|_inf)``."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(a).max(initial=0), np.abs(n).max(initial=0))
    diff = np.abs(a - n).max(initial=0)
    return float(diff / scale) if scale > 0 else float(diff)


def _shape(rng):
    return (int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 9)))


def _probs(rng, shape):
    # keep clear of the clamp so the function is smooth around every probe
    return rng.uniform(0.02, 0.98, size=shape)


def check_focal(seed: int) -> float:
    rng = np.random.default_rng([seed, 1])
    shape = _shape(rng)
    pred = _probs(rng, shape)
    gt = (rng.uniform(size=shape) < 0.4).astype(float)
    alpha = float(rng.choice([0.0, 0.5, 1.0, 2.0, 3.0]))
    _, g = focal_loss(pred, gt, alpha)
    return rel_error(g, central_diff(lambda p: focal_loss(p, gt, alpha)[0], pred))


def check_dice(seed: int) -> float:
    rng = np.random.default_rng([seed, 2])
    shape = _shape(rng)
    pred = _probs(rng, shape)
    gt = (rng.uniform(size=shape) < 0.4).astype(float)
    gt[0] = 0  # exercise an all-negative plane
    _, g = dice_loss(pred, gt)
    return rel_error(g, central_diff(lambda p: dice_loss(p, gt)[0], pred))


def _cos_pair(rng, d, positive=True):
    while True:
        a, b = rng.normal(size=d), rng.normal(size=d)
        c = a @ b / np.linalg.norm(a) / np.linalg.norm(b)
        if (c > 0.05) if positive else (c < -0.05):
            return a, b


def check_cosine(seed: int) -> float:
    rng = np.random.default_rng([seed, 3])
    d = int(rng.integers(2, 17))
    a, b = _cos_pair(rng, d, positive=seed % 4 != 3)  # every fourth seed checks the hinged-off side
    _, ga, gb = counterfactual_cosine_loss(a, b)
    na = central_diff(lambda x: counterfactual_cosine_loss(x, b)[0], a)
    nb = central_diff(lambda x: counterfactual_cosine_loss(a, x)[0], b)
    return max(rel_error(ga, na), rel_error(gb, nb))


def _toy_problem(seed: int):
    rng = np.random.default_rng([seed, 4])
    n_vocab, dim, size = 6, int(rng.integers(2, 7)), int(rng.integers(3, 7))
    model = ToyModelState(rng.normal(0, 0.5, size=(FEATURE_DIM, dim)), rng.normal(0, 0.5, size=(n_vocab, dim)),
                          rng.normal(0, 0.3, size=n_vocab))
    image = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    co = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    known = (int(rng.integers(n_vocab)),)
    planes = {known[0]: (rng.uniform(size=size * size) < 0.4).astype(float)}
    ex = Example(extract_features(image), extract_features(co).pooled, known, planes)
    ids = list(known) + [int(c) for c in rng.permutation([c for c in range(n_vocab) if c != known[0]])[:3]]
    weights = LossWeights(w1=float(rng.uniform(0.5, 100)), w2=float(rng.uniform(0, 2)),
                          w3=float(rng.uniform(0.5, 2)), alpha=2.0)
    return model, ex, ids, weights


def check_end_to_end(seed: int) -> float:
    """Gradient of the full composition wrt W, E and b."""
    model, ex, ids, weights = _toy_problem(seed)
    _, dW, dE, db = example_loss_and_grads(model, ex, ids, weights)
    gE = np.zeros_like(model.E)
    gb = np.zeros_like(model.b)
    gE[ids] = dE
    gb[ids] = db

    def loss_with(name):
        def f(value):
            trial = model.copy()
            setattr(trial, name, value)
            return example_loss_and_grads(trial, ex, ids, weights)[0].total
        return f

    errs = [rel_error(dW, central_diff(loss_with("W"), model.W)),
            rel_error(gE, central_diff(loss_with("E"), model.E)),
            rel_error(gb, central_diff(loss_with("b"), model.b))]
    return max(errs)


SUITES = {
    "focal": (check_focal, LOSS_TOL),
    "dice": (check_dice, LOSS_TOL),
    "cos": (check_cosine, LOSS_TOL),
    "end_to_end": (check_end_to_end, END_TO_END_TOL),
}


def run_gradcheck(seeds=range(10)) -> dict:
    """``{suite: {"max_rel_error", "tolerance", "passed"}}`` over ``seeds``."""
    out = {}
    for name, (fn, tol) in SUITES.items():
        worst = max(fn(s) for s in seeds)
        out[name] = {"max_rel_error": worst, "tolerance": tol, "passed": worst < tol}
    return out
