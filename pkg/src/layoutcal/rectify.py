"""Attention rectification: activation transfer, intra/inter-map adjustment,
and the check-locate-rectify session that drives them step by step.

All rectification math operates on pre-softmax logits.  The first and last
cross-attention layers pass through untouched by default, which preserves
generation quality in practice.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np

from .attention import (
    LOGITS,
    PROBS,
    AttnMap,
    AttnStack,
    check_discrepancy,
    layered_merge,
    locate_region,
    resize_bilinear,
    temporal_merge,
)
from .errors import AmbiguousRelation, KindMismatch, ParseFailure, PlanStackMismatch
from .geometry import PixelRegion, RelBox, region_to_relbox, to_pixel_region
from .layout import ParsedLayout, plan_layout
from .vocab import RelationVocabulary

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibrationConfig:
    """Knobs for one calibration session.

    ``guidance_ratio`` is recorded for provenance only; it matters to real
    diffusion backends, not to the map math here.
    """

    steps: int = 20
    t_loc: int = 1
    alpha: float = 10.0
    threshold: float = 0.2
    skip_layers: tuple[int, ...] | None = None  # 1-based; None = first and last
    guidance_ratio: float = 5.0

    def __post_init__(self):
        if not (1 <= self.t_loc < self.steps):
            raise ValueError("need 1 <= t_loc < steps")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must be in (0, 1)")

    def resolved_skip(self, num_layers: int) -> frozenset[int]:
        if self.skip_layers is None:
            return frozenset({1, num_layers})
        return frozenset(self.skip_layers)


@dataclass(frozen=True)
class PlanTarget:
    """Source and target cell regions for one object at one layer."""

    source: PixelRegion
    target: PixelRegion


@dataclass(frozen=True)
class PlanEntry:
    token_index: int
    phrase: str
    source_box: RelBox  # located window, relative coordinates
    target_box: RelBox
    per_layer: tuple[PlanTarget, ...]


@dataclass(frozen=True)
class RectificationPlan:
    """Per-object relocation regions; only misplaced objects appear."""

    entries: tuple[PlanEntry, ...]
    aligned_tokens: tuple[int, ...]

    @property
    def num_layers(self) -> int:
        return len(self.entries[0].per_layer) if self.entries else 0


def transfer_activation(
    grid: np.ndarray, src: PixelRegion, dst: PixelRegion
) -> np.ndarray:
    """Move the source window's activations into the destination window.

    The source is back-filled with the grid's global minimum.  When the
    two windows differ in size, the snapshot is bilinearly resampled to
    fit the destination.  The destination write wins wherever the windows
    overlap.
    """
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    if not (src.fits(h, w) and dst.fits(h, w)):
        raise PlanStackMismatch(
            f"regions {src} / {dst} exceed grid {h}x{w}"
        )
    out = grid.copy()
    snapshot = grid[src.as_slices()].copy()
    out[src.as_slices()] = grid.min()
    if (src.height, src.width) != (dst.height, dst.width):
        snapshot = resize_bilinear(snapshot, dst.height, dst.width)
    out[dst.as_slices()] = snapshot
    return out


def intra_adjust(grid: np.ndarray, target: PixelRegion, alpha: float) -> np.ndarray:
    """Scale values inside the target by alpha, divide the rest by alpha.

    Applied to raw logits, so negative scores inside the box become more
    negative; that asymmetry is intentional and must not be "fixed".
    """
    grid = np.asarray(grid, dtype=np.float64)
    out = grid / alpha
    rs, cs = target.as_slices()
    out[rs, cs] = grid[rs, cs] * alpha
    return out


def softmax_mask(grid: np.ndarray) -> np.ndarray:
    """Adjustment mask ``1 - softmax`` over the grid's cells.

    The softmax runs over all spatial positions of the single grid with
    the max subtracted for stability, so every mask value lies in [0, 1).
    """
    grid = np.asarray(grid, dtype=np.float64)
    e = np.exp(grid - grid.max())
    return 1.0 - e / e.sum()


def inter_adjust(grids: np.ndarray, k: int) -> np.ndarray:
    """Suppress other tokens' grids where token ``k`` activates.

    ``grids`` is the full (N, H, W) layer; every grid except ``k`` is
    multiplied element-wise by ``1 - softmax(grid_k)``.
    """
    grids = np.asarray(grids, dtype=np.float64)
    n = grids.shape[0]
    if not (0 <= k < n):
        raise PlanStackMismatch(f"token index {k} out of range for {n} tokens")
    if n == 1:
        return grids.copy()
    mask = softmax_mask(grids[k])
    out = grids * mask
    out[k] = grids[k]
    return out


def rectify_token_grids(
    grids: np.ndarray,
    layer_no: int,
    num_layers: int,
    plan: RectificationPlan,
    cfg: CalibrationConfig,
) -> np.ndarray:
    """Rectify one layer's (tokens, H, W) grids in plan order.

    Entry point for in-process bindings that intercept attention scores a
    layer at a time; :func:`rectify_layer` drives it across a whole stack.
    Layers in the skip set come back unchanged.
    """
    grids = np.asarray(grids, dtype=np.float64)
    if layer_no in cfg.resolved_skip(num_layers):
        return grids
    n, h, w = grids.shape
    for entry in plan.entries:
        if len(entry.per_layer) != num_layers:
            raise PlanStackMismatch(
                f"plan covers {len(entry.per_layer)} layers, stack has {num_layers}"
            )
        regions = entry.per_layer[layer_no - 1]
        if not (regions.source.fits(h, w) and regions.target.fits(h, w)):
            raise PlanStackMismatch(
                f"plan regions for token {entry.token_index} exceed layer "
                f"{layer_no} ({w}x{h})"
            )
        if entry.token_index >= n:
            raise PlanStackMismatch(f"plan token {entry.token_index} out of range")
        g = transfer_activation(
            grids[entry.token_index], regions.source, regions.target
        )
        g = intra_adjust(g, regions.target, cfg.alpha)
        grids = grids.copy()
        grids[entry.token_index] = g
        grids = inter_adjust(grids, entry.token_index)
    return grids


def rectify_layer(
    stack: AttnStack, plan: RectificationPlan, cfg: CalibrationConfig
) -> AttnStack:
    """Apply transfer, intra and inter adjustment per misplaced object.

    Layers in the skip set pass through untouched (their map objects are
    reused as-is).  Objects are processed in prompt-token order; the inter
    mask of each object sees the grids after its own transfer and intra
    steps.
    """
    if stack.kind != LOGITS:
        raise KindMismatch("rectify_layer expects logits")
    if not plan.entries:
        return stack
    if plan.num_layers != stack.num_layers:
        raise PlanStackMismatch(
            f"plan covers {plan.num_layers} layers, stack has {stack.num_layers}"
        )
    skip = cfg.resolved_skip(stack.num_layers)
    layers: list[AttnMap] = []
    for idx, m in enumerate(stack.layers):
        layer_no = idx + 1
        if layer_no in skip:
            layers.append(m)
            continue
        grids = rectify_token_grids(
            m.values, layer_no, stack.num_layers, plan, cfg
        )
        layers.append(AttnMap(grids, LOGITS))
    return AttnStack(tuple(layers), stack.step)


class Phase(str, Enum):
    CHECKING = "checking"
    LOCATING = "locating"
    RECTIFYING = "rectifying"
    PASS_THROUGH = "pass_through"


_FORWARD = {
    Phase.CHECKING: {Phase.LOCATING, Phase.PASS_THROUGH, Phase.CHECKING},
    Phase.LOCATING: {Phase.RECTIFYING, Phase.LOCATING},
    Phase.RECTIFYING: {Phase.RECTIFYING},
    Phase.PASS_THROUGH: {Phase.PASS_THROUGH},
}


class AttentionSource(Protocol):
    """Step-wise producer/consumer of attention stacks.

    ``produce`` yields the logits and probs stacks for step ``t`` (steps
    count down from T to 1); ``consume`` receives the possibly rectified
    logits for the same step.
    """

    def produce(self, t: int) -> tuple[AttnStack, AttnStack]: ...

    def consume(self, t: int, logits: AttnStack) -> None: ...


@dataclass
class CalibrationReport:
    """Machine-readable session outcome."""

    prompt: str
    config: CalibrationConfig
    pass_through: bool
    reason: str | None
    phase_steps: dict[str, list[int]]
    plan: RectificationPlan | None
    modified_per_step: dict[int, int]
    inside_fractions: dict[int, float]
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        plan_json = None
        if self.plan is not None:
            plan_json = [
                {
                    "token_index": e.token_index,
                    "phrase": e.phrase,
                    "source_box": [round(v, 6) for v in e.source_box.as_tuple()],
                    "target_box": [round(v, 6) for v in e.target_box.as_tuple()],
                    "layers": [
                        {
                            "layer": i + 1,
                            "source": [t.source.row_start, t.source.row_end,
                                       t.source.col_start, t.source.col_end],
                            "target": [t.target.row_start, t.target.row_end,
                                       t.target.col_start, t.target.col_end],
                        }
                        for i, t in enumerate(e.per_layer)
                    ],
                }
                for e in self.plan.entries
            ]
        doc = {
            "prompt": self.prompt,
            "pass_through": self.pass_through,
            "reason": self.reason,
            "phases": {p: steps for p, steps in self.phase_steps.items()},
            "plan": plan_json,
            "modified_per_step": {str(t): c for t, c in sorted(
                self.modified_per_step.items(), reverse=True)},
            "inside_fractions": {str(k): round(v, 6) for k, v in sorted(
                self.inside_fractions.items())},
            "config": {
                "steps": self.config.steps,
                "t_loc": self.config.t_loc,
                "alpha": self.config.alpha,
                "threshold": self.config.threshold,
                "skip_layers": sorted(self.config.skip_layers)
                if self.config.skip_layers is not None else None,
                "guidance_ratio": self.config.guidance_ratio,
            },
            "warnings": self.warnings,
        }
        return json.dumps(doc, indent=2)


class CalibrationSession:
    """Single-generation state machine for check, locate and rectify.

    Feed each step's probs stack to :meth:`observe` (needed only while the
    session is checking or locating) and pass the step's logits through
    :meth:`process`.  Phases only move forward; a pass-through session
    never modifies anything.
    """

    def __init__(
        self,
        prompt: str,
        cfg: CalibrationConfig | None = None,
        vocab: RelationVocabulary | None = None,
        layout: ParsedLayout | None = None,
    ):
        self.cfg = cfg or CalibrationConfig()
        self.prompt = prompt
        self.layout = layout
        self.plan: RectificationPlan | None = None
        self._stored: list[AttnMap] = []
        self._phase_steps: dict[str, list[int]] = {}
        self.modified_per_step: dict[int, int] = {}
        self.inside_fractions: dict[int, float] = {}
        self.warnings: list[str] = []
        self.reason: str | None = None
        self._phase = Phase.CHECKING
        self._noted_steps: set[int] = set()
        self._misplaced: list[int] = []
        self._aligned: tuple[int, ...] = ()
        self._resolutions: list[tuple[int, int]] = []
        if self.layout is None:
            from .parsing import detect_layout_requirement

            detected, _ = detect_layout_requirement(prompt, vocab)
            if not detected:
                self._enter(Phase.PASS_THROUGH)
                self.reason = "no layout keywords detected"
            else:
                try:
                    self.layout = plan_layout(prompt, vocab)
                except (ParseFailure, AmbiguousRelation) as exc:
                    self._enter(Phase.PASS_THROUGH)
                    self.reason = f"parse degraded to pass-through: {exc}"
                    self.warnings.append(str(exc))
                    logger.warning("calibration disabled for %r: %s", prompt, exc)

    @property
    def phase(self) -> Phase:
        return self._phase

    def _enter(self, phase: Phase) -> None:
        if phase not in _FORWARD[self._phase]:
            raise RuntimeError(f"illegal transition {self._phase} -> {phase}")
        self._phase = phase

    def _note_step(self, t: int) -> None:
        if t not in self._noted_steps:
            self._noted_steps.add(t)
            self._phase_steps.setdefault(self._phase.value, []).append(t)

    def token_boxes(self) -> dict[int, RelBox]:
        assert self.layout is not None
        return {
            o.head_token_index: self.layout.boxes[o] for o in self.layout.objects
        }

    def observe(self, t: int, probs: AttnStack) -> None:
        """Record the probs stack for step ``t`` while checking/locating."""
        if self._phase not in (Phase.CHECKING, Phase.LOCATING):
            return
        if probs.kind != PROBS:
            raise KindMismatch("observe expects a probs stack")
        self._note_step(t)
        merged = layered_merge(probs)
        if self._phase == Phase.CHECKING:
            verdicts = check_discrepancy(
                merged, self.token_boxes(), self.cfg.threshold
            )
            self.inside_fractions = {k: frac for k, (_, frac) in verdicts.items()}
            self._misplaced = sorted(k for k, (bad, _) in verdicts.items() if bad)
            self._aligned = tuple(
                sorted(k for k, (bad, _) in verdicts.items() if not bad)
            )
            if not self._misplaced:
                self._enter(Phase.PASS_THROUGH)
                self.reason = "layout already consistent"
                return
            self._resolutions = probs.resolutions()
            self._enter(Phase.LOCATING)
        self._stored.append(merged)
        if len(self._stored) >= self.cfg.t_loc:
            self._build_plan()
            self._enter(Phase.RECTIFYING)

    def _build_plan(self) -> None:
        assert self.layout is not None
        merged = temporal_merge(self._stored)
        self._stored = []
        w1, h1 = self._resolutions[0]
        boxes = self.token_boxes()
        phrase_by_token = {
            o.head_token_index: o.phrase for o in self.layout.objects
        }
        entries = []
        for k in self._misplaced:
            target_box = boxes[k]
            target_l1 = to_pixel_region(target_box, w1, h1)
            window = (target_l1.width, target_l1.height)
            source_l1 = locate_region(merged.token_grid(k), window)
            source_box = region_to_relbox(source_l1, w1, h1)
            per_layer = []
            for wl, hl in self._resolutions:
                target = to_pixel_region(target_box, wl, hl)
                # Source keeps the target's per-layer size so the transfer
                # never needs resampling; only its origin is rescaled.
                r0 = int(round(source_l1.row_start * hl / h1))
                c0 = int(round(source_l1.col_start * wl / w1))
                r0 = min(max(r0, 0), hl - target.height)
                c0 = min(max(c0, 0), wl - target.width)
                source = PixelRegion(
                    r0, r0 + target.height, c0, c0 + target.width
                )
                per_layer.append(PlanTarget(source, target))
            entries.append(
                PlanEntry(k, phrase_by_token[k], source_box, target_box,
                          tuple(per_layer))
            )
        self.plan = RectificationPlan(tuple(entries), self._aligned)

    def rectifies_at(self, t: int) -> bool:
        """True when step ``t``'s logits are due for rectification."""
        return (
            self._phase == Phase.RECTIFYING
            and self.plan is not None
            and t <= self.cfg.steps - self.cfg.t_loc
        )

    def process(self, t: int, logits: AttnStack) -> AttnStack:
        """Return the (possibly rectified) logits stack for step ``t``."""
        self._note_step(t)
        if (
            self._phase == Phase.RECTIFYING
            and self.plan is not None
            and t <= self.cfg.steps - self.cfg.t_loc
        ):
            out = rectify_layer(logits, self.plan, self.cfg)
            touched_layers = logits.num_layers - len(
                self.cfg.resolved_skip(logits.num_layers)
            )
            self.modified_per_step[t] = (
                touched_layers * logits.tokens if self.plan.entries else 0
            )
            return out
        self.modified_per_step[t] = 0
        return logits

    def report(self) -> CalibrationReport:
        return CalibrationReport(
            prompt=self.prompt,
            config=self.cfg,
            pass_through=self._phase == Phase.PASS_THROUGH,
            reason=self.reason,
            phase_steps=self._phase_steps,
            plan=self.plan,
            modified_per_step=self.modified_per_step,
            inside_fractions=self.inside_fractions,
            warnings=self.warnings,
        )


def run_calibration(
    prompt: str,
    source: AttentionSource,
    cfg: CalibrationConfig | None = None,
    vocab: RelationVocabulary | None = None,
    layout: ParsedLayout | None = None,
) -> CalibrationReport:
    """Drive a full check-locate-rectify session over an attention source.

    Without layout keywords, or when every object already sits in its
    box, the session passes every stack through untouched.  A prompt the
    relation grammar cannot attach degrades to pass-through with a warning
    rather than corrupting generation.
    """
    cfg = cfg or CalibrationConfig()
    session = CalibrationSession(prompt, cfg, vocab, layout)
    for t in range(cfg.steps, 0, -1):
        logits, probs = source.produce(t)
        session.observe(t, probs)
        source.consume(t, session.process(t, logits))
    return session.report()
