"""Positional keyword vocabulary used for layout-requirement detection.

Six word categories cover the five spatial relations (left, right, above,
below, between) plus the extra corner superlatives.  The default word sets
are fixed; custom vocabularies can extend them through a JSON file or the
``LAYOUTCAL_VOCAB`` environment variable.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

LEFT = "left"
RIGHT = "right"
ABOVE = "above"
BELOW = "below"
BETWEEN = "between"
EXTRA = "superlative-extra"

CATEGORIES = (LEFT, RIGHT, ABOVE, BELOW, BETWEEN, EXTRA)

# Directional categories participate in relative triples; BETWEEN and EXTRA
# words only ever produce superlative or between relations.
DIRECTIONAL = (LEFT, RIGHT, ABOVE, BELOW)

_DEFAULT_WORDS: dict[str, frozenset[str]] = {
    LEFT: frozenset({"left", "west"}),
    RIGHT: frozenset({"right", "east"}),
    ABOVE: frozenset({"above", "over", "on", "top", "north"}),
    BELOW: frozenset({"below", "beneath", "underneath", "under", "bottom", "south"}),
    BETWEEN: frozenset({"between", "among", "middle"}),
    EXTRA: frozenset({"upper-left", "upper-right", "lower-left", "lower-right"}),
}

ENV_VOCAB = "LAYOUTCAL_VOCAB"


@dataclass(frozen=True)
class RelationVocabulary:
    """Word sets per relation category, with a reverse word -> category index."""

    categories: dict[str, frozenset[str]] = field(
        default_factory=lambda: dict(_DEFAULT_WORDS)
    )

    def __post_init__(self):
        seen: dict[str, str] = {}
        for cat, words in self.categories.items():
            if cat not in CATEGORIES:
                raise ValueError(f"unknown relation category {cat!r}")
            for w in words:
                if w in seen:
                    raise ValueError(
                        f"word {w!r} appears in both {seen[w]!r} and {cat!r}"
                    )
                seen[w] = cat
        object.__setattr__(self, "_by_word", seen)

    def category_of(self, word: str) -> str | None:
        return self._by_word.get(word)

    def __contains__(self, word: str) -> bool:
        return word in self._by_word

    @property
    def words(self) -> frozenset[str]:
        return frozenset(self._by_word)

    def extended(self, category: str, *words: str) -> "RelationVocabulary":
        """Return a copy with extra words added to ``category``.

        Existing words are never removed, so anything detected before stays
        detected after.
        """
        if category not in CATEGORIES:
            raise ValueError(f"unknown relation category {category!r}")
        merged = dict(self.categories)
        merged[category] = merged.get(category, frozenset()) | frozenset(
            w.lower() for w in words
        )
        return RelationVocabulary(merged)


def default_vocabulary() -> RelationVocabulary:
    return RelationVocabulary(dict(_DEFAULT_WORDS))


def vocabulary_from_json(data: dict) -> RelationVocabulary:
    cats = {
        str(cat): frozenset(str(w).lower() for w in words)
        for cat, words in data.items()
    }
    return RelationVocabulary(cats)


def load_vocabulary(path: str | None = None) -> RelationVocabulary:
    """Load a vocabulary from ``path``, the env override, or the defaults."""
    if path is None:
        path = os.environ.get(ENV_VOCAB)
    if not path:
        return default_vocabulary()
    with open(path, "r", encoding="utf-8") as fh:
        return vocabulary_from_json(json.load(fh))
