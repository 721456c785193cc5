"""Instruction building and counterfactual text derivation."""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

NOTHING = "nothing"
NO_SUBSTITUTION = "no substitution performed"

DEFAULT_CONDITIONS: tuple[str, ...] = (
    "Describe the surroundings of each scene in enough detail that the named "
    "objects do not fill the whole picture, while keeping them the main subject.",
    "Set every example in a different place and situation, with concrete details.",
    "Vary how each named object looks, for example its color, size, material, or pose.",
)


def normalize_name(name: str) -> str:
    return " ".join(re.sub(r"[-_]", " ", name).lower().split())


@dataclass(frozen=True)
class ConditionSet:
    conditions: tuple[str, ...] = DEFAULT_CONDITIONS

    def __post_init__(self):
        if not self.conditions:
            raise ValueError("condition set must not be empty")
        for c in self.conditions:
            body = c.strip().rstrip(".!?")
            if not body or re.search(r"[.!?]\s", body):
                raise ValueError(f"condition is not a single sentence: {c!r}")


def build_instruction(categories, conditions: ConditionSet | None = None, count: int = 1) -> str:
    names = list(categories)
    if not names:
        raise ValueError("at least one category name is required")
    if len(names) > 2:
        raise ValueError("at most two category names per instruction")
    if count < 1:
        raise ValueError("count must be >= 1")
    conditions = conditions or ConditionSet()
    quoted = " and ".join(f'"{n}"' for n in names)
    lines = [
        f"Write {count} different image descriptions, one per line.",
        f"Every description must mention {quoted} by name.",
        "Requirements:",
    ]
    lines += [f"{i}. {c}" for i, c in enumerate(conditions.conditions, 1)]
    return "\n".join(lines)


@lru_cache(maxsize=4096)
def _name_pattern(names: tuple[str, ...]) -> re.Pattern:
    phrases = sorted({normalize_name(n) for n in names if normalize_name(n)}, key=len, reverse=True)
    alts = []
    for phrase in phrases:
        words = [re.escape(w) for w in phrase.split(" ")]
        alts.append(r"[\s_-]+".join(words) + r"(?:es|s)?")
    return re.compile(r"(?<![A-Za-z0-9])(?:" + "|".join(alts) + r")(?![A-Za-z0-9])", re.IGNORECASE)


def find_mentions(text: str, names) -> list[str]:
    """Names (as given) whose surface form occurs in ``text``, in input order."""
    found = []
    for name in names:
        if _name_pattern((name,)).search(text):
            found.append(name)
    return found


@dataclass(frozen=True)
class Counterfactual:
    text: str
    replacements: int

    @property
    def flags(self) -> tuple[str, ...]:
        return () if self.replacements else (NO_SUBSTITUTION,)


def counterfactualize(text: str, categories) -> Counterfactual:
    if not text:
        raise ValueError("text must be non-empty")
    names = tuple(categories)
    if not names:
        return Counterfactual(text, 0)
    out, n = _name_pattern(names).subn(NOTHING, text)
    return Counterfactual(out, n)


_OPENINGS = (
    "On a bright spring morning",
    "Late in a rainy evening",
    "Under a pale winter sky",
    "During a quiet afternoon",
    "At dusk, with long shadows stretching out",
    "In the soft light of dawn",
    "On a hazy summer day",
    "In the middle of a busy weekday",
)
_PLACES = (
    "inside a sunlit hallway with tiled floors",
    "along a narrow cobblestone lane lined with old shops",
    "beside a calm lake surrounded by hills",
    "in a cluttered workshop with shelves along the walls",
    "on a wide plaza paved with grey stone",
    "near a fence at the edge of an open field",
    "inside a spacious room with tall windows",
    "on a rooftop overlooking distant towers",
)
_ATTRIBUTES = (
    "small", "large", "weathered", "shiny", "brightly colored", "dark",
    "slightly worn", "freshly cleaned", "pale", "striped",
)
_SINGLE = (
    "{open}, a {a0} {c0} stands {place}, while the rest of the scene stays calm and detailed.",
    "{open} {place}, a {a0} {c0} catches the eye among the surrounding details.",
    "{place_cap}, {open_lc}, a {a0} {c0} is seen clearly against the background.",
)
_DOUBLE = (
    "{open}, a {a0} {c0} and a {a1} {c1} share the space {place}.",
    "{open} {place}, a {a0} {c0} sits not far from a {a1} {c1}.",
    "{place_cap}, {open_lc}, a {a0} {c0} appears next to a {a1} {c1}.",
)


def template_fallback(categories, rng_seed: int) -> str:
    """Deterministic description used when no text-generation backend is configured.

    Each category is mentioned exactly once; clause pools are retried until none
    of the filler words collides with a category name.
    """
    names = list(categories)
    if not 1 <= len(names) <= 2:
        raise ValueError("template_fallback takes one or two categories")
    rng = np.random.default_rng([abs(int(rng_seed)), 0x7E37])
    pool = _SINGLE if len(names) == 1 else _DOUBLE
    text = ""
    for _ in range(64):
        opening = _OPENINGS[rng.integers(len(_OPENINGS))]
        place = _PLACES[rng.integers(len(_PLACES))]
        attrs = rng.choice(len(_ATTRIBUTES), size=len(names), replace=False)
        template = pool[rng.integers(len(pool))]
        fields = {
            "open": opening,
            "open_lc": opening[0].lower() + opening[1:],
            "place": place,
            "place_cap": place[0].upper() + place[1:],
        }
        for i, name in enumerate(names):
            fields[f"c{i}"] = name
            fields[f"a{i}"] = _ATTRIBUTES[attrs[i]]
        text = template.format(**fields)
        if all(len(_name_pattern((n,)).findall(text)) == 1 for n in names):
            return text
    return text
