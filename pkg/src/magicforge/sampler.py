"""Per-image category subsets: the known categories plus uniformly drawn negatives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CategorySubset:
    ids: tuple[int, ...]
    known: tuple[bool, ...]  # True for categories annotated in the image

    @property
    def m(self) -> int:
        return len(self.ids)

    @property
    def negatives(self) -> tuple[int, ...]:
        return tuple(c for c, k in zip(self.ids, self.known) if not k)


def _vocab_size(vocabulary) -> int:
    return vocabulary if isinstance(vocabulary, (int, np.integer)) else len(vocabulary)


def sample_categories(known, vocabulary, m: int, rng: np.random.Generator) -> CategorySubset:
    """Known ids first (in given order), then ``m - len(known)`` distinct negatives.

    ``vocabulary`` may be a Vocabulary or just its size.
    """
    n = _vocab_size(vocabulary)
    known = [int(c) for c in known]
    if len(set(known)) != len(known):
        raise ValueError(f"duplicate known categories: {known}")
    if any(not 0 <= c < n for c in known):
        raise ValueError(f"known categories outside vocabulary of size {n}: {known}")
    if m < len(known):
        raise ValueError(f"m={m} is smaller than the {len(known)} known categories")
    if m > n:
        raise ValueError(f"m={m} exceeds vocabulary size {n}")
    pool = np.setdiff1d(np.arange(n), known)
    negatives = rng.choice(pool, size=m - len(known), replace=False) if m > len(known) else []
    ids = tuple(known) + tuple(int(c) for c in negatives)
    return CategorySubset(ids, (True,) * len(known) + (False,) * (m - len(known)))


def batch_subsets(batch, vocabulary, m: int, rng: np.random.Generator) -> list[CategorySubset]:
    return [sample_categories(known, vocabulary, m, rng) for known in batch]


def resolve_m(m_subset, known_count: int, vocab_size: int) -> int:
    """Effective subset size: ``"full"`` means the whole vocabulary, ``"known"`` means |C|.

    Integers are clamped to [|C|, N] so a fixed m works across records with one
    or two categories.
    """
    if m_subset == "full":
        return vocab_size
    if m_subset == "known":
        return known_count
    return max(known_count, min(int(m_subset), vocab_size))
