"""Run-length codec for binary masks.

Runs are counted over the row-major flattening of the mask and alternate
background/foreground, always starting with a background run (which may be 0
so that a mask starting with foreground is representable).
"""
from __future__ import annotations

import numpy as np


class MaskDimensionError(ValueError):
    pass


def rle_encode(grid, width: int, height: int) -> list[int]:
    flat = np.asarray(grid).reshape(-1)
    if flat.size != width * height:
        raise MaskDimensionError(
            f"grid has {flat.size} values, expected {width}x{height}={width * height}"
        )
    if flat.size and not np.isin(flat, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    flat = flat.astype(np.int8)
    if flat.size == 0:
        return [0]
    # positions where the value changes; prepend a virtual 0 so the first run is background
    padded = np.concatenate(([0], flat, [1 - flat[-1]]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [int(r) for r in np.diff(np.concatenate(([0], edges)))]


def check_runs(runs, width: int, height: int) -> list[str]:
    """Return human-readable problems with a run list (empty when valid)."""
    problems = []
    if any(r < 0 for r in runs):
        problems.append("negative run length")
    if sum(runs) != width * height:
        problems.append(f"run sum {sum(runs)} != {width}x{height}")
    if any(r == 0 for r in runs[1:]):
        problems.append("interior zero-length run")
    return problems


def rle_decode(runs, width: int, height: int) -> np.ndarray:
    """Decode runs to a ``(height, width)`` uint8 array."""
    problems = check_runs(runs, width, height)
    if problems:
        raise MaskDimensionError("; ".join(problems))
    values = np.arange(len(runs)) % 2
    flat = np.repeat(values.astype(np.uint8), np.asarray(runs, dtype=np.int64))
    return flat.reshape(height, width)
