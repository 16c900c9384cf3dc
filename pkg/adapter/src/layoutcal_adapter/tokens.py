"""Mapping prompt words onto pipeline tokenizer positions.

The engine addresses objects by word-level head token index; a live
pipeline addresses attention maps by subword position.  Phrases that span
several subword pieces bind to the last piece of the head noun, and the
choice is recorded in the handshake so downstream consumers can tell.
"""

from __future__ import annotations

import json
from typing import Callable

from layoutcal import ParsedLayout, tokenize
from layoutcal.parsing import ObjectPhrase

HEAD_POLICY = "last-subword-of-head-noun"


def build_token_map(
    prompt: str,
    pieces_per_word: Callable[[str], int],
    bos_offset: int = 1,
) -> dict[int, int]:
    """Word index -> pipeline position of the word's last subword piece.

    ``pieces_per_word`` reports how many subword tokens the pipeline's
    tokenizer produces for one word; ``bos_offset`` accounts for
    begin-of-sequence tokens.  The result is injective by construction.
    """
    mapping: dict[int, int] = {}
    pos = bos_offset
    for i, word in enumerate(tokenize(prompt)):
        n = pieces_per_word(word)
        if n < 1:
            raise ValueError(f"tokenizer reported {n} pieces for {word!r}")
        pos += n
        mapping[i] = pos - 1
    return mapping


def remap_layout(layout: ParsedLayout, token_map: dict[int, int]) -> ParsedLayout:
    """Re-key a layout's objects from word indices to pipeline positions."""
    objects = []
    boxes = {}
    for obj in layout.objects:
        moved = ObjectPhrase(obj.phrase, token_map[obj.head_token_index])
        objects.append(moved)
        boxes[moved] = layout.boxes[obj]
    return ParsedLayout(layout.prompt, objects, layout.relations, boxes)


def handshake_json(prompt: str, token_map: dict[int, int]) -> str:
    """Sidecar document shipped next to exported tensor files."""
    return json.dumps(
        {
            "prompt": prompt,
            "token_map": {str(k): v for k, v in sorted(token_map.items())},
            "head_policy": HEAD_POLICY,
        },
        indent=2,
    )
