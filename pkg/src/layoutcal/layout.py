"""Target layout generation: superlative boxes, semantic tree, allocation.

Superlative objects receive predefined boxes first.  The remaining objects
are organized in a semantic tree (nodes are objects, edges are spatial
relations) and the free space left over by the superlative bands is
partitioned by traversing the tree in parse order.  The whole pipeline is
a pure function: identical input produces identical boxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import AllocationOverflow, CycleDetected, ParseFailure, UnknownTerm
from .geometry import RelBox
from .parsing import (
    ABOVE_REL,
    LEFT_OF,
    RIGHT_OF,
    Between,
    ObjectPhrase,
    Relative,
    RelationSet,
    Superlative,
    detect_layout_requirement,
    extract_objects,
    parse_relations,
)
from .vocab import RelationVocabulary, default_vocabulary

# Predefined box per superlative position term.
SUPERLATIVE_BOXES: dict[str, RelBox] = {
    "left": RelBox(0.20, 0.50, 0.33, 1.00),
    "right": RelBox(0.80, 0.50, 0.33, 1.00),
    "above": RelBox(0.50, 0.20, 1.00, 0.33),
    "below": RelBox(0.50, 0.80, 1.00, 0.33),
    "middle": RelBox(0.50, 0.50, 0.50, 0.50),
    "upper-left": RelBox(0.25, 0.25, 0.50, 0.50),
    "upper-right": RelBox(0.75, 0.25, 0.50, 0.50),
    "lower-left": RelBox(0.25, 0.75, 0.50, 0.50),
    "lower-right": RelBox(0.75, 0.75, 0.50, 0.50),
}

# Sub-regions shrink by this factor on each axis when turned into boxes;
# anything smaller than MIN_SIDE per side means the space ran out.
MARGIN = 0.9
MIN_SIDE = 0.1
_EPS = 1e-9


def assign_superlative_box(term: str) -> RelBox:
    """Predefined box for one of the nine superlative position terms."""
    try:
        return SUPERLATIVE_BOXES[term]
    except KeyError:
        raise UnknownTerm(f"no predefined box for position term {term!r}") from None


@dataclass(frozen=True)
class TreeEdge:
    subject: ObjectPhrase
    label: str
    target: ObjectPhrase


@dataclass
class SemanticTree:
    """Objects as nodes, directed spatial relations as edges, parse order kept."""

    nodes: list[ObjectPhrase]
    edges: list[TreeEdge]
    anchored_roots: list[ObjectPhrase]


def build_semantic_tree(relations: RelationSet) -> SemanticTree:
    """Organize relative/between relations into a traversal structure.

    Objects that already hold superlative boxes become anchored roots.
    Contradictory orderings (for example A left of B and B left of A)
    raise :class:`CycleDetected` naming the offending edge.
    """
    nodes: list[ObjectPhrase] = []
    edges: list[TreeEdge] = []
    # One ordering graph per axis; an edge a->b means a must precede b.
    order_graph: dict[str, dict[ObjectPhrase, set[ObjectPhrase]]] = {
        "x": {},
        "y": {},
    }

    def note(obj: ObjectPhrase):
        if obj not in nodes:
            nodes.append(obj)

    def reachable(graph, src, dst) -> bool:
        stack, seen = [src], set()
        while stack:
            cur = stack.pop()
            if cur == dst:
                return True
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(graph.get(cur, ()))
        return False

    for rel in relations.in_parse_order():
        if isinstance(rel, Superlative):
            continue
        if isinstance(rel, Relative):
            note(rel.subject)
            note(rel.obj)
            edges.append(TreeEdge(rel.subject, rel.relation, rel.obj))
            axis = "x" if rel.relation in (LEFT_OF, RIGHT_OF) else "y"
            lo, hi = (
                (rel.subject, rel.obj)
                if rel.relation in (LEFT_OF, ABOVE_REL)
                else (rel.obj, rel.subject)
            )
            graph = order_graph[axis]
            if reachable(graph, hi, lo):
                raise CycleDetected(
                    f"relation ({rel.subject.phrase}, {rel.relation}, "
                    f"{rel.obj.phrase}) contradicts earlier relations",
                    edge=rel,
                )
            graph.setdefault(lo, set()).add(hi)
        elif isinstance(rel, Between):
            note(rel.subject)
            note(rel.anchor1)
            note(rel.anchor2)
            edges.append(TreeEdge(rel.subject, "between", rel.anchor1))
            edges.append(TreeEdge(rel.subject, "between", rel.anchor2))

    anchored = [
        s.obj for s in relations.superlatives if s.obj in nodes
    ]
    return SemanticTree(nodes, edges, anchored)


class _Rect:
    """Mutable working rectangle used only during allocation."""

    __slots__ = ("x0", "x1", "y0", "y1")

    def __init__(self, x0, x1, y0, y1):
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1

    @property
    def w(self):
        return self.x1 - self.x0

    @property
    def h(self):
        return self.y1 - self.y0

    def center(self):
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def copy(self):
        return _Rect(self.x0, self.x1, self.y0, self.y1)

    def split(self, axis: str) -> tuple["_Rect", "_Rect"]:
        if axis == "x":
            mid = (self.x0 + self.x1) / 2.0
            return _Rect(self.x0, mid, self.y0, self.y1), _Rect(mid, self.x1, self.y0, self.y1)
        mid = (self.y0 + self.y1) / 2.0
        return _Rect(self.x0, self.x1, self.y0, mid), _Rect(self.x0, self.x1, mid, self.y1)


def _shrink_to_box(rect: _Rect, obj: ObjectPhrase) -> RelBox:
    w = rect.w * MARGIN
    h = rect.h * MARGIN
    if w < MIN_SIDE - _EPS or h < MIN_SIDE - _EPS:
        raise AllocationOverflow(
            f"no room left for {obj.phrase!r}: "
            f"sub-region {rect.w:.3f}x{rect.h:.3f} is below the minimum box size"
        )
    cx, cy = rect.center()
    return RelBox(cx, cy, w, h)


def _split_band(box: RelBox, count: int, term: str) -> list[RelBox]:
    """Evenly split a shared superlative band along its long axis."""
    if box.h >= box.w:  # vertical split (stack along y)
        step = box.h / count
        if step < MIN_SIDE - _EPS:
            raise AllocationOverflow(
                f"{count} objects share the {term!r} band; slices fall below minimum size"
            )
        return [
            RelBox(box.cx, box.y0 + (i + 0.5) * step, box.w, step)
            for i in range(count)
        ]
    step = box.w / count
    if step < MIN_SIDE - _EPS:
        raise AllocationOverflow(
            f"{count} objects share the {term!r} band; slices fall below minimum size"
        )
    return [
        RelBox(box.x0 + (i + 0.5) * step, box.cy, step, box.h)
        for i in range(count)
    ]


@dataclass
class ParsedLayout:
    """Objects, their relations, and one target box per object."""

    prompt: str
    objects: list[ObjectPhrase]
    relations: RelationSet
    boxes: dict[ObjectPhrase, RelBox] = field(default_factory=dict)


def allocate_layout(
    objects: list[ObjectPhrase],
    relations: RelationSet,
    vocab: RelationVocabulary | None = None,
) -> dict[ObjectPhrase, RelBox]:
    """Assign one target box per object.

    1. Superlative objects get their predefined boxes (objects sharing a
       term split the band evenly along its long axis, in order of
       appearance).
    2. The free region is the unit square minus the bands the superlative
       boxes occupy.
    3. Tree edges partition the free region in parse order: left/right
       relations split the current region along x (subject on the left for
       left-of), above/below split along y; a between relation centers the
       subject's box at the midpoint of its anchors' centers.
    4. Boxes fill their sub-region shrunk by the margin factor per axis.
    """
    vocab = vocab or default_vocabulary()
    tree = build_semantic_tree(relations)

    boxes: dict[ObjectPhrase, RelBox] = {}
    # Superlative assignment, duplicates split per term.
    by_term: dict[str, list[ObjectPhrase]] = {}
    for sup in relations.superlatives:
        by_term.setdefault(sup.term, []).append(sup.obj)
    for term, objs in by_term.items():
        base = assign_superlative_box(term)
        if len(objs) == 1:
            boxes[objs[0]] = base
        else:
            for obj, sub in zip(objs, _split_band(base, len(objs), term)):
                boxes[obj] = sub

    # Free region: full-height bands cut the x range, full-width bands the
    # y range, quadrant boxes cut both on their anchored side.
    free = _Rect(0.0, 1.0, 0.0, 1.0)
    for term in by_term:
        b = assign_superlative_box(term)
        full_w = b.w >= 1.0 - _EPS
        full_h = b.h >= 1.0 - _EPS
        cut_x = full_h or (not full_w and abs(b.cx - 0.5) > _EPS)
        cut_y = full_w or (not full_h and abs(b.cy - 0.5) > _EPS)
        if cut_x:
            if b.cx < 0.5:
                free.x0 = max(free.x0, b.x1)
            elif b.cx > 0.5:
                free.x1 = min(free.x1, b.x0)
        if cut_y:
            if b.cy < 0.5:
                free.y0 = max(free.y0, b.y1)
            elif b.cy > 0.5:
                free.y1 = min(free.y1, b.y0)
    if free.w <= 0 or free.h <= 0:
        if tree.nodes or any(o not in boxes for o in objects):
            raise AllocationOverflow("superlative bands leave no free region")

    regions: dict[ObjectPhrase, _Rect] = {}
    deferred_between: list[Between] = []

    def placed(o: ObjectPhrase) -> bool:
        return o in regions or o in boxes

    def clip_beside(anchor_box: RelBox, axis: str, low: bool) -> _Rect:
        """Free region strictly beside an anchored box (its edge, then its
        center line as fallback)."""
        for bound in (
            (anchor_box.x0 if axis == "x" else anchor_box.y0) if low
            else (anchor_box.x1 if axis == "x" else anchor_box.y1),
            (anchor_box.cx if axis == "x" else anchor_box.cy),
        ):
            r = free.copy()
            if axis == "x":
                if low:
                    r.x1 = min(r.x1, bound)
                else:
                    r.x0 = max(r.x0, bound)
                if r.w > _EPS:
                    return r
            else:
                if low:
                    r.y1 = min(r.y1, bound)
                else:
                    r.y0 = max(r.y0, bound)
                if r.h > _EPS:
                    return r
        raise AllocationOverflow(
            "no free space beside the anchored box for a relative placement"
        )

    for rel in relations.in_parse_order():
        if isinstance(rel, Superlative):
            continue
        if isinstance(rel, Relative):
            axis = "x" if rel.relation in (LEFT_OF, RIGHT_OF) else "y"
            subject_low = rel.relation in (LEFT_OF, ABOVE_REL)
            s, o = rel.subject, rel.obj
            ps, po = placed(s), placed(o)
            if not ps and not po:
                lo, hi = free.split(axis)
                regions[s], regions[o] = (lo, hi) if subject_low else (hi, lo)
            elif ps and po:
                # Both placed: only refine when both are movable regions.
                if s in regions and o in regions:
                    s_lo, s_hi = regions[s].split(axis)
                    o_lo, o_hi = regions[o].split(axis)
                    regions[s] = s_lo if subject_low else s_hi
                    regions[o] = o_hi if subject_low else o_lo
                # Anchored boxes win; the relation is already expressed or
                # contradicts a superlative, which superlatives override.
            else:
                fixed, mobile = (s, o) if ps else (o, s)
                mobile_low = subject_low == (mobile is s)
                if fixed in boxes:
                    regions[mobile] = clip_beside(boxes[fixed], axis, mobile_low)
                else:
                    lo, hi = regions[fixed].split(axis)
                    regions[fixed] = hi if mobile_low else lo
                    regions[mobile] = lo if mobile_low else hi
        elif isinstance(rel, Between):
            a1, a2 = rel.anchor1, rel.anchor2
            if not placed(a1) and not placed(a2):
                lo, hi = free.split("x")
                regions[a1], regions[a2] = lo, hi
            elif not placed(a2):
                ext = regions[a1] if a1 in regions else None
                bound = ext.x1 if ext else boxes[a1].x1
                r = free.copy()
                r.x0 = max(r.x0, bound)
                regions[a2] = r if r.w > _EPS else free.split("x")[1]
            elif not placed(a1):
                ext = regions[a2] if a2 in regions else None
                bound = ext.x0 if ext else boxes[a2].x0
                r = free.copy()
                r.x1 = min(r.x1, bound)
                regions[a1] = r if r.w > _EPS else free.split("x")[0]
            deferred_between.append(rel)

    deferred_subjects = {b.subject for b in deferred_between}

    # Regions become boxes in object order.
    for obj in objects:
        if obj in boxes or obj in deferred_subjects:
            continue
        if obj in regions:
            boxes[obj] = _shrink_to_box(regions[obj], obj)

    # Objects untouched by any relation share the free region in x strips.
    loose = [o for o in objects if o not in boxes and o not in deferred_subjects]
    if loose:
        step = free.w / len(loose)
        for i, obj in enumerate(loose):
            strip = _Rect(free.x0 + i * step, free.x0 + (i + 1) * step, free.y0, free.y1)
            boxes[obj] = _shrink_to_box(strip, obj)

    # Between subjects: centered at the midpoint of the anchors' centers.
    for rel in deferred_between:
        if rel.subject in boxes:
            continue  # superlative precedence
        b1, b2 = boxes[rel.anchor1], boxes[rel.anchor2]
        cx = (b1.cx + b2.cx) / 2.0
        cy = (b1.cy + b2.cy) / 2.0
        w = min(b1.w, b2.w)
        h = min(b1.h, b2.h)
        if w < MIN_SIDE - _EPS or h < MIN_SIDE - _EPS:
            raise AllocationOverflow(
                f"anchors leave no room for {rel.subject.phrase!r} between them"
            )
        # Keep the box inside the unit square without moving its center.
        w = min(w, 2 * cx, 2 * (1 - cx))
        h = min(h, 2 * cy, 2 * (1 - cy))
        boxes[rel.subject] = RelBox(cx, cy, w, h)

    return boxes


def plan_layout(
    prompt: str, vocab: RelationVocabulary | None = None
) -> ParsedLayout:
    """Full parse: detection, object extraction, relations, box allocation."""
    vocab = vocab or default_vocabulary()
    detected, _ = detect_layout_requirement(prompt, vocab)
    if not detected:
        raise ParseFailure(f"prompt {prompt!r} contains no layout keywords")
    objects = extract_objects(prompt, vocab)
    relations = parse_relations(prompt, objects, vocab)
    boxes = allocate_layout(objects, relations, vocab)
    return ParsedLayout(prompt, objects, relations, boxes)


def layout_to_json(layout: ParsedLayout) -> str:
    """Serialize a layout with fixed field order and 6-decimal floats."""

    def fnum(x: float) -> str:
        return f"{x:.6f}"

    parts = ['{"prompt": ' + _jstr(layout.prompt) + ', "objects": [']
    obj_parts = []
    for obj in layout.objects:
        box = layout.boxes[obj]
        obj_parts.append(
            '{"phrase": ' + _jstr(obj.phrase)
            + f', "head_token_index": {obj.head_token_index}'
            + ', "box": [' + ", ".join(fnum(v) for v in box.as_tuple()) + "]}"
        )
    parts.append(", ".join(obj_parts))
    sups = ", ".join(
        "[" + _jstr(s.obj.phrase) + ", " + _jstr(s.term) + "]"
        for s in layout.relations.superlatives
    )
    rels = ", ".join(
        "[" + _jstr(r.subject.phrase) + ", " + _jstr(r.relation) + ", "
        + _jstr(r.obj.phrase) + "]"
        for r in layout.relations.relatives
    )
    btw = ", ".join(
        "[" + _jstr(b.subject.phrase) + ", " + _jstr(b.anchor1.phrase) + ", "
        + _jstr(b.anchor2.phrase) + "]"
        for b in layout.relations.betweens
    )
    parts.append(
        '], "relations": {"superlatives": [' + sups + '], "relatives": ['
        + rels + '], "betweens": [' + btw + "]}}"
    )
    return "".join(parts)


def layout_from_json(text: str) -> ParsedLayout:
    """Parse a layout JSON document (inverse of :func:`layout_to_json`)."""
    import json

    data = json.loads(text)
    objects = [
        ObjectPhrase(o["phrase"], int(o["head_token_index"]))
        for o in data["objects"]
    ]
    by_phrase = {o.phrase: o for o in objects}
    rels = RelationSet()
    order = 0
    for obj, term in data["relations"]["superlatives"]:
        rels.superlatives.append(Superlative(by_phrase[obj], term, order))
        order += 1
    for s, r, o in data["relations"]["relatives"]:
        rels.relatives.append(Relative(by_phrase[s], r, by_phrase[o], order))
        order += 1
    for s, a1, a2 in data["relations"]["betweens"]:
        rels.betweens.append(
            Between(by_phrase[s], by_phrase[a1], by_phrase[a2], order)
        )
        order += 1
    boxes = {}
    for o in data["objects"]:
        cx, cy, w, h = o["box"]
        boxes[by_phrase[o["phrase"]]] = RelBox(cx, cy, w, h)
    return ParsedLayout(data["prompt"], objects, rels, boxes)


def _jstr(s: str) -> str:
    import json

    return json.dumps(s)
