import random
from collections import Counter

import pytest

from layoutcal.bench import (
    BenchConfig,
    DEFAULT_OBJECTS,
    RELATION_TERMS,
    generate_benchmark,
    read_jsonl,
    render_prompt,
    sample_prompt,
    write_jsonl,
)
from layoutcal.errors import ExhaustedSpace
from layoutcal.layout import plan_layout
from layoutcal.parsing import extract_objects, parse_relations


def test_default_object_set_has_28_items():
    assert len(DEFAULT_OBJECTS) == 28
    assert len(set(DEFAULT_OBJECTS)) == 28
    assert len(RELATION_TERMS) == 9


def test_render_single_fragment():
    assert render_prompt([("flower", "left")]) == "a flower on the left"
    assert render_prompt([("cat", "middle")]) == "a cat in the middle"
    assert render_prompt([("dog", "below"), ("cat", "upper-right")]) == (
        "a dog on the bottom and a cat on the upper-right"
    )


def test_sample_prompt_no_duplicates_within_prompt():
    rng = random.Random(99)
    cfg = BenchConfig()
    for _ in range(300):
        p = sample_prompt(rng, cfg)
        assert len(set(p.objects)) == len(p.objects)
        terms = [t for _, t in p.relations]
        assert len(set(terms)) == len(terms)


def test_text_regenerates_from_gold_fields():
    rng = random.Random(7)
    for _ in range(100):
        p = sample_prompt(rng, BenchConfig())
        assert render_prompt(list(p.relations)) == p.text


def test_paper_shape_counts_and_relation_slots():
    prompts = generate_benchmark(203, BenchConfig(seed=11), counts=(36, 96, 56, 15))
    assert len(prompts) == 203
    sizes = Counter(len(p.objects) for p in prompts)
    assert (sizes[1], sizes[2], sizes[3], sizes[4]) == (36, 96, 56, 15)
    slots = sum(len(p.relations) for p in prompts)
    assert slots == 36 * 1 + 96 * 2 + 56 * 3 + 15 * 4 == 456
    assert len({p.text for p in prompts}) == 203


def test_deterministic_files(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_jsonl(str(a), generate_benchmark(50, BenchConfig(seed=4)))
    write_jsonl(str(b), generate_benchmark(50, BenchConfig(seed=4)))
    assert a.read_bytes() == b.read_bytes()
    different = generate_benchmark(50, BenchConfig(seed=5))
    assert [p.text for p in different] != [p.text for p in generate_benchmark(50, BenchConfig(seed=4))]


def test_single_prompt_file(tmp_path):
    path = tmp_path / "one.jsonl"
    write_jsonl(str(path), generate_benchmark(1, BenchConfig(seed=0)))
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 1
    (back,) = read_jsonl(str(path))
    assert back.text


def test_exhausted_space():
    with pytest.raises(ExhaustedSpace):
        generate_benchmark(300, BenchConfig(seed=0), counts=(300,))


def test_parser_roundtrip_sample():
    prompts = generate_benchmark(500, BenchConfig(seed=21))
    for p in prompts:
        objs = extract_objects(p.text)
        rels = parse_relations(p.text, objs)
        got = [(s.obj.phrase, s.term) for s in rels.superlatives]
        assert got == list(p.relations), p.text
        assert not rels.relatives and not rels.betweens


def test_generated_prompts_allocate_cleanly():
    for p in generate_benchmark(100, BenchConfig(seed=33)):
        layout = plan_layout(p.text)
        assert len(layout.boxes) == len(p.objects)
