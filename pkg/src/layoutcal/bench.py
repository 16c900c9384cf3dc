"""Seeded benchmark prompt generator with gold relation annotations.

Prompts are built from a closed template grammar: one "a {object} on the
{position}" fragment per object, fragments joined with "and", the middle
position rendered as "in the middle".  Sampling order is object count,
then one superlative relation per slot, then the objects, never repeating
a relation or an object inside one prompt.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from .errors import ExhaustedSpace

SINGLE_WORD_OBJECTS = (
    "backpack", "flower", "crown", "towel", "scarf", "beach", "clouds",
    "tree", "table", "book", "handbag", "bus", "bicycle", "car",
    "motorcycle", "cat", "dog", "horse",
)
PHRASE_OBJECTS = ("chocolate cookie", "strawberry cake", "vanilla ice cream cone")
COLOR_OBJECTS = (
    "yellow sunflower", "gray mountain", "white daisy", "pink cupcake",
    "red tomato", "golden saxophone", "green broccoli",
)
DEFAULT_OBJECTS = SINGLE_WORD_OBJECTS + PHRASE_OBJECTS + COLOR_OBJECTS

RELATION_TERMS = (
    "left", "right", "above", "below", "middle",
    "upper-left", "upper-right", "lower-left", "lower-right",
)

# Surface rendering per relation term; every rendering round-trips through
# the relation parser back to its canonical term.
_SURFACE = {
    "left": "on the left",
    "right": "on the right",
    "above": "on the top",
    "below": "on the bottom",
    "middle": "in the middle",
    "upper-left": "on the upper-left",
    "upper-right": "on the upper-right",
    "lower-left": "on the lower-left",
    "lower-right": "on the lower-right",
}


@dataclass(frozen=True)
class BenchConfig:
    objects: tuple[str, ...] = DEFAULT_OBJECTS
    relations: tuple[str, ...] = RELATION_TERMS
    count_weights: tuple[float, ...] = (36.0, 96.0, 56.0, 15.0)  # 1..4 objects
    seed: int = 0

    def __post_init__(self):
        if len(set(self.objects)) != len(self.objects):
            raise ValueError("object set contains duplicates")
        if len(self.count_weights) < 1:
            raise ValueError("need at least one count weight")


@dataclass(frozen=True)
class BenchPrompt:
    id: str
    text: str
    objects: tuple[str, ...]
    relations: tuple[tuple[str, str], ...]  # (object, term) in order

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "text": self.text,
                "objects": list(self.objects),
                "relations": [list(r) for r in self.relations],
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "BenchPrompt":
        d = json.loads(line)
        return cls(
            d["id"], d["text"], tuple(d["objects"]),
            tuple((o, t) for o, t in d["relations"]),
        )


def render_prompt(pairs: list[tuple[str, str]]) -> str:
    """Fixed template rendering for (object, term) pairs."""
    return " and ".join(f"a {obj} {_SURFACE[term]}" for obj, term in pairs)


def sample_prompt(rng: random.Random, cfg: BenchConfig, count: int | None = None,
                  prompt_id: str = "simm-0000") -> BenchPrompt:
    """Draw one prompt: count, then relations, then objects, no repeats."""
    if count is None:
        count = rng.choices(
            range(1, len(cfg.count_weights) + 1), weights=cfg.count_weights
        )[0]
    if count > len(cfg.relations) or count > len(cfg.objects):
        raise ExhaustedSpace(
            f"cannot place {count} objects with {len(cfg.relations)} relations "
            f"and {len(cfg.objects)} objects"
        )
    terms = rng.sample(cfg.relations, count)
    objs = rng.sample(cfg.objects, count)
    pairs = list(zip(objs, terms))
    return BenchPrompt(
        prompt_id, render_prompt(pairs), tuple(objs), tuple(pairs)
    )


def _space_size(cfg: BenchConfig, count: int) -> int:
    size = 1
    for i in range(count):
        size *= (len(cfg.objects) - i) * (len(cfg.relations) - i)
    # Orderings of (object, relation) pairs are distinct texts already
    # counted by the sampled permutations above.
    return size


def generate_benchmark(
    n: int,
    cfg: BenchConfig | None = None,
    counts: tuple[int, ...] | None = None,
) -> list[BenchPrompt]:
    """Generate ``n`` textually distinct prompts, deterministic per seed.

    ``counts`` pins the exact number of prompts per object count (for
    example ``(36, 96, 56, 15)``); otherwise counts are sampled from the
    configured weights.
    """
    cfg = cfg or BenchConfig()
    if n < 1:
        raise ValueError("n must be >= 1")
    if counts is not None:
        if sum(counts) != n:
            raise ValueError(f"counts {counts} sum to {sum(counts)}, expected {n}")
        for c, bucket in enumerate(counts, start=1):
            if bucket > _space_size(cfg, c):
                raise ExhaustedSpace(
                    f"{bucket} distinct prompts with {c} objects exceed the "
                    f"{_space_size(cfg, c)} the grammar can produce"
                )
        plan = [c for c, bucket in enumerate(counts, start=1) for _ in range(bucket)]
    else:
        plan = [None] * n

    rng = random.Random(cfg.seed)
    prompts: list[BenchPrompt] = []
    seen: set[str] = set()
    for i, count in enumerate(plan):
        for attempt in range(10_000):
            p = sample_prompt(rng, cfg, count, prompt_id=f"simm-{i:04d}")
            if p.text not in seen:
                break
        else:
            raise ExhaustedSpace(
                f"could not find a {i + 1}-th distinct prompt after 10000 draws"
            )
        seen.add(p.text)
        prompts.append(p)
    return prompts


def write_jsonl(path: str, prompts: list[BenchPrompt]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in prompts:
            fh.write(p.to_json() + "\n")


def read_jsonl(path: str) -> list[BenchPrompt]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(BenchPrompt.from_json(line))
    return out
