import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layoutcal.errors import AllocationOverflow, CycleDetected, UnknownTerm
from layoutcal.layout import (
    SUPERLATIVE_BOXES,
    allocate_layout,
    assign_superlative_box,
    build_semantic_tree,
    layout_from_json,
    layout_to_json,
    plan_layout,
)
from layoutcal.parsing import (
    ObjectPhrase,
    Relative,
    RelationSet,
    Superlative,
)

GOLDEN_BOXES = {
    "left": (0.20, 0.50, 0.33, 1.00),
    "right": (0.80, 0.50, 0.33, 1.00),
    "above": (0.50, 0.20, 1.00, 0.33),
    "below": (0.50, 0.80, 1.00, 0.33),
    "middle": (0.50, 0.50, 0.50, 0.50),
    "upper-left": (0.25, 0.25, 0.50, 0.50),
    "upper-right": (0.75, 0.25, 0.50, 0.50),
    "lower-left": (0.25, 0.75, 0.50, 0.50),
    "lower-right": (0.75, 0.75, 0.50, 0.50),
}


def test_superlative_box_table_is_golden():
    assert set(SUPERLATIVE_BOXES) == set(GOLDEN_BOXES)
    for term, expected in GOLDEN_BOXES.items():
        assert assign_superlative_box(term).as_tuple() == expected


def test_unknown_term_rejected():
    with pytest.raises(UnknownTerm):
        assign_superlative_box("diagonal")


def _objs(*names):
    return [ObjectPhrase(n, i) for i, n in enumerate(names)]


def test_tree_single_edge():
    dog, cat = _objs("dog", "cat")
    rels = RelationSet(relatives=[Relative(dog, "left-of", cat, 0)])
    tree = build_semantic_tree(rels)
    assert tree.nodes == [dog, cat]
    assert [(e.subject.phrase, e.label, e.target.phrase) for e in tree.edges] == [
        ("dog", "left-of", "cat")
    ]


def test_tree_chain_keeps_parse_order():
    a, b, c = _objs("a", "b", "c")
    rels = RelationSet(relatives=[
        Relative(a, "left-of", b, 0), Relative(b, "left-of", c, 1),
    ])
    tree = build_semantic_tree(rels)
    assert [e.subject.phrase for e in tree.edges] == ["a", "b"]


def test_tree_contradiction_raises():
    a, b = _objs("a", "b")
    rels = RelationSet(relatives=[
        Relative(a, "left-of", b, 0), Relative(b, "left-of", a, 1),
    ])
    with pytest.raises(CycleDetected) as err:
        build_semantic_tree(rels)
    assert err.value.edge.subject.phrase == "b"


def test_tree_transitive_cycle_raises():
    a, b, c = _objs("a", "b", "c")
    rels = RelationSet(relatives=[
        Relative(a, "left-of", b, 0),
        Relative(b, "left-of", c, 1),
        Relative(c, "left-of", a, 2),
    ])
    with pytest.raises(CycleDetected):
        build_semantic_tree(rels)


def test_allocate_single_superlative_is_table_box():
    layout = plan_layout("a flower on the left")
    (box,) = layout.boxes.values()
    assert box.as_tuple() == (0.20, 0.50, 0.33, 1.00)


def test_allocate_relative_pair_halves():
    layout = plan_layout("a dog to the left of a cat")
    dog, cat = layout.objects
    assert layout.boxes[dog].as_tuple() == (0.25, 0.50, 0.45, 0.90)
    assert layout.boxes[cat].as_tuple() == (0.75, 0.50, 0.45, 0.90)


def test_allocate_duplicate_superlatives_split_band():
    dog, cat = _objs("dog", "cat")
    rels = RelationSet(superlatives=[
        Superlative(dog, "left", 0), Superlative(cat, "left", 1),
    ])
    boxes = allocate_layout([dog, cat], rels)
    assert boxes[dog].as_tuple() == (0.20, 0.25, 0.33, 0.50)
    assert boxes[cat].as_tuple() == (0.20, 0.75, 0.33, 0.50)


def test_allocate_chain_keeps_order():
    a, b, c = _objs("a", "b", "c")
    rels = RelationSet(relatives=[
        Relative(a, "left-of", b, 0), Relative(b, "left-of", c, 1),
    ])
    boxes = allocate_layout([a, b, c], rels)
    assert boxes[a].cx < boxes[b].cx < boxes[c].cx


def test_allocate_vertical_pair():
    a, b = _objs("a", "b")
    rels = RelationSet(relatives=[Relative(a, "above", b, 0)])
    boxes = allocate_layout([a, b], rels)
    assert boxes[a].cy < boxes[b].cy
    assert boxes[a].as_tuple() == (0.50, 0.25, 0.90, 0.45)


def test_allocate_between_centers_at_anchor_midpoint():
    s, a1, a2 = _objs("cat", "dog", "bird")
    from layoutcal.parsing import Between

    rels = RelationSet(betweens=[Between(s, a1, a2, 0)])
    boxes = allocate_layout([s, a1, a2], rels)
    mid_x = (boxes[a1].cx + boxes[a2].cx) / 2
    mid_y = (boxes[a1].cy + boxes[a2].cy) / 2
    assert abs(boxes[s].cx - mid_x) <= 0.05
    assert abs(boxes[s].cy - mid_y) <= 0.05


def test_allocate_anchored_root_keeps_superlative_box():
    flower, dog = _objs("flower", "dog")
    rels = RelationSet(
        superlatives=[Superlative(flower, "left", 0)],
        relatives=[Relative(dog, "right-of", flower, 1)],
    )
    boxes = allocate_layout([flower, dog], rels)
    assert boxes[flower].as_tuple() == (0.20, 0.50, 0.33, 1.00)
    assert boxes[dog].cx > boxes[flower].cx
    assert boxes[dog].x0 >= boxes[flower].x1 - 1e-9


def test_allocate_loose_object_goes_to_free_region():
    flower, dog = _objs("flower", "dog")
    rels = RelationSet(superlatives=[Superlative(flower, "left", 0)])
    boxes = allocate_layout([flower, dog], rels)
    assert boxes[dog].x0 >= boxes[flower].x1 - 1e-9


def test_allocate_overflow_on_crowded_band():
    objs = _objs(*[f"o{i}" for i in range(11)])
    rels = RelationSet(
        superlatives=[Superlative(o, "left", i) for i, o in enumerate(objs)]
    )
    with pytest.raises(AllocationOverflow):
        allocate_layout(objs, rels)


def test_allocate_is_pure():
    prompt = "a dog on the left and a cat on the upper-right and a bird in the middle"
    a = layout_to_json(plan_layout(prompt))
    b = layout_to_json(plan_layout(prompt))
    assert a == b


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_allocated_boxes_inside_unit_square_with_min_area(data):
    from layoutcal.bench import BenchConfig, sample_prompt
    import random

    seed = data.draw(st.integers(0, 10_000))
    prompt = sample_prompt(random.Random(seed), BenchConfig())
    layout = plan_layout(prompt.text)
    for box in layout.boxes.values():
        assert 0.0 <= box.x0 and box.x1 <= 1.0 + 1e-9
        assert 0.0 <= box.y0 and box.y1 <= 1.0 + 1e-9
        assert box.w * box.h >= 0.01 - 1e-12


def test_relative_consistency_all_directions():
    for rel, check in [
        ("left-of", lambda s, o: s.cx < o.cx),
        ("right-of", lambda s, o: s.cx > o.cx),
        ("above", lambda s, o: s.cy < o.cy),
        ("below", lambda s, o: s.cy > o.cy),
    ]:
        s, o = _objs("s", "o")
        rels = RelationSet(relatives=[Relative(s, rel, o, 0)])
        boxes = allocate_layout([s, o], rels)
        assert check(boxes[s], boxes[o]), rel


def test_layout_json_roundtrip():
    layout = plan_layout("a dog to the left of a cat and a bird on the top")
    text = layout_to_json(layout)
    back = layout_from_json(text)
    assert back.prompt == layout.prompt
    assert [o.phrase for o in back.objects] == [o.phrase for o in layout.objects]
    for obj in layout.objects:
        orig = layout.boxes[obj]
        restored = back.boxes[next(o for o in back.objects if o.phrase == obj.phrase)]
        for a, b in zip(orig.as_tuple(), restored.as_tuple()):
            assert abs(a - b) < 1e-6


def test_layout_json_six_decimal_floats():
    layout = plan_layout("a dog to the left of a cat")
    text = layout_to_json(layout)
    assert '"box": [0.250000, 0.500000, 0.450000, 0.900000]' in text
