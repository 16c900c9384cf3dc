"""Prompt parsing: keyword detection, object extraction, relation parsing.

The parser is a deterministic pattern grammar over the closed benchmark
prompt templates ("a X on the <pos>", "a X <rel> a Y", "a X between a Y
and a Z", fragments joined by "and").  Prompts outside the grammar fail
loudly with :class:`AmbiguousRelation` instead of being silently guessed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import AmbiguousRelation, ParseFailure
from .vocab import (
    ABOVE,
    BELOW,
    BETWEEN,
    DIRECTIONAL,
    EXTRA,
    LEFT,
    RIGHT,
    RelationVocabulary,
    default_vocabulary,
)

# Lowercase words; intra-word hyphens survive so corner terms stay whole.
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")

# Glue that never belongs to an object phrase.  "and" is handled separately
# because it doubles as the anchor separator in "between X and Y".
_STOPWORDS = frozenset({
    "a", "an", "the", "to", "of", "in", "at", "by", "is", "are", "was",
    "were", "with", "there", "that", "this", "it", "its", "side",
})

LEFT_OF = "left-of"
RIGHT_OF = "right-of"
ABOVE_REL = "above"
BELOW_REL = "below"

_REL_LABEL = {LEFT: LEFT_OF, RIGHT: RIGHT_OF, ABOVE: ABOVE_REL, BELOW: BELOW_REL}

# Canonical superlative terms are the nine predefined position names.
SUPERLATIVE_TERMS = (
    "left", "right", "above", "below", "middle",
    "upper-left", "upper-right", "lower-left", "lower-right",
)


def tokenize(prompt: str) -> list[str]:
    """Lowercase tokens split on whitespace/punctuation, hyphens kept."""
    return _TOKEN_RE.findall(prompt.lower())


@dataclass(frozen=True)
class KeywordMatch:
    word: str
    category: str
    token_index: int


def detect_layout_requirement(
    prompt: str, vocab: RelationVocabulary | None = None
) -> tuple[bool, list[KeywordMatch]]:
    """Check whether the prompt contains any positional keyword.

    Returns ``(detected, matches)`` where matches carry the word, its
    category and its token position.  Matching is case-insensitive on word
    boundaries; hyphenated compounds match as single tokens.
    """
    vocab = vocab or default_vocabulary()
    matches = []
    for i, tok in enumerate(tokenize(prompt)):
        cat = vocab.category_of(tok)
        if cat is not None:
            matches.append(KeywordMatch(tok, cat, i))
    return bool(matches), matches


@dataclass(frozen=True)
class ObjectPhrase:
    """Article-stripped noun phrase with the head noun's token index."""

    phrase: str
    head_token_index: int

    def __str__(self) -> str:
        return self.phrase


def extract_objects(
    prompt: str, vocab: RelationVocabulary | None = None
) -> list[ObjectPhrase]:
    """Pull object phrases out of a prompt.

    An object is a maximal run of consecutive tokens that are neither glue
    words nor positional keywords, so multi-word items like "yellow
    sunflower" or "vanilla ice cream cone" stay whole.  The head token is
    the final noun of the run.
    """
    vocab = vocab or default_vocabulary()
    tokens = tokenize(prompt)
    if not tokens:
        raise ParseFailure("empty prompt")
    objects: list[ObjectPhrase] = []
    run: list[tuple[int, str]] = []

    def flush():
        if run:
            phrase = " ".join(t for _, t in run)
            objects.append(ObjectPhrase(phrase, run[-1][0]))
            run.clear()

    for i, tok in enumerate(tokens):
        if tok in _STOPWORDS or tok == "and" or tok in vocab:
            flush()
        else:
            run.append((i, tok))
    flush()
    if not objects:
        raise ParseFailure(f"no object phrase found in {prompt!r}")
    return objects


@dataclass(frozen=True)
class Superlative:
    obj: ObjectPhrase
    term: str
    order: int = 0


@dataclass(frozen=True)
class Relative:
    subject: ObjectPhrase
    relation: str
    obj: ObjectPhrase
    order: int = 0


@dataclass(frozen=True)
class Between:
    subject: ObjectPhrase
    anchor1: ObjectPhrase
    anchor2: ObjectPhrase
    order: int = 0


@dataclass
class RelationSet:
    """Parsed relations: superlative binaries, relative triples, betweens."""

    superlatives: list[Superlative] = field(default_factory=list)
    relatives: list[Relative] = field(default_factory=list)
    betweens: list[Between] = field(default_factory=list)

    def in_parse_order(self) -> list:
        return sorted(
            [*self.superlatives, *self.relatives, *self.betweens],
            key=lambda r: r.order,
        )

    def referenced_objects(self) -> list[ObjectPhrase]:
        seen: list[ObjectPhrase] = []
        for rel in self.in_parse_order():
            if isinstance(rel, Superlative):
                refs = (rel.obj,)
            elif isinstance(rel, Relative):
                refs = (rel.subject, rel.obj)
            else:
                refs = (rel.subject, rel.anchor1, rel.anchor2)
            for o in refs:
                if o not in seen:
                    seen.append(o)
        return seen


def _canonical_term(word: str, category: str) -> str:
    if category in (LEFT, RIGHT, ABOVE, BELOW):
        return category
    if category == BETWEEN:
        return "middle"
    return word  # EXTRA words are their own terms


# Internal scan items.
_OBJ, _REL, _AND = 0, 1, 2


def parse_relations(
    prompt: str,
    objects: list[ObjectPhrase],
    vocab: RelationVocabulary | None = None,
) -> RelationSet:
    """Attach positional keywords to objects.

    Keyword groups (maximal runs of vocabulary words) resolve as follows:

    * group followed by nothing or "and": superlative binary for the
      nearest preceding object, term taken from the group's last word
      ("on the bottom" -> below);
    * directional group followed by an object: relative triple;
    * between-word group followed by "X and Y": between quaternion;
    * a group with no preceding object raises :class:`AmbiguousRelation`.

    Every matched keyword is consumed by exactly one relation.
    """
    vocab = vocab or default_vocabulary()
    if not objects:
        raise ParseFailure("parse_relations requires at least one object")
    tokens = tokenize(prompt)

    head_to_obj = {o.head_token_index: o for o in objects}
    object_token_spans: set[int] = set()
    for o in objects:
        n_words = len(o.phrase.split())
        object_token_spans.update(
            range(o.head_token_index - n_words + 1, o.head_token_index + 1)
        )

    items: list[tuple[int, object]] = []
    for i, tok in enumerate(tokens):
        if i in head_to_obj:
            items.append((_OBJ, head_to_obj[i]))
        elif i in object_token_spans:
            continue
        elif tok == "and":
            items.append((_AND, i))
        else:
            cat = vocab.category_of(tok)
            if cat is not None:
                items.append((_REL, (tok, cat, i)))

    rels = RelationSet()
    taken_superlative: set[ObjectPhrase] = set()
    order = 0
    subject: ObjectPhrase | None = None
    i = 0
    while i < len(items):
        kind, payload = items[i]
        if kind == _OBJ:
            subject = payload
            i += 1
            continue
        if kind == _AND:
            i += 1
            continue
        # Collect the keyword group.
        group: list[tuple[str, str, int]] = []
        while i < len(items) and items[i][0] == _REL:
            group.append(items[i][1])
            i += 1
        if subject is None:
            raise AmbiguousRelation(
                f"position term {group[0][0]!r} has no object to attach to"
            )
        nxt = items[i] if i < len(items) else None
        is_between = any(
            cat == BETWEEN and word in ("between", "among") for word, cat, _ in group
        )
        if is_between and nxt is not None and nxt[0] == _OBJ:
            if (
                i + 2 >= len(items)
                or items[i + 1][0] != _AND
                or items[i + 2][0] != _OBJ
            ):
                raise AmbiguousRelation(
                    f"{group[-1][0]!r} needs two anchor objects joined by 'and'"
                )
            a1, a2 = items[i][1], items[i + 2][1]
            rels.betweens.append(Between(subject, a1, a2, order))
            order += 1
            subject = a2
            i += 3
        elif nxt is not None and nxt[0] == _OBJ:
            word, cat, pos = group[-1]
            if cat not in DIRECTIONAL:
                raise AmbiguousRelation(
                    f"{word!r} cannot relate two objects directionally"
                )
            rels.relatives.append(
                Relative(subject, _REL_LABEL[cat], nxt[1], order)
            )
            order += 1
            subject = nxt[1]
            i += 1
        else:
            word, cat, pos = group[-1]
            term = _canonical_term(word, cat)
            if subject in taken_superlative:
                raise AmbiguousRelation(
                    f"object {subject.phrase!r} already holds a superlative position"
                )
            taken_superlative.add(subject)
            rels.superlatives.append(Superlative(subject, term, order))
            order += 1
    return rels
