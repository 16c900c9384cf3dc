"""Attention hooks that route a live pipeline's cross-attention through the
calibration engine.

The adapter targets the de-facto attention-processor seam: any module with
``is_cross_attention`` set and a ``set_processor`` method (plus the usual
``to_q``/``to_k``/``to_v``/``to_out`` projections, ``heads`` and ``scale``)
can be intercepted.  Scores are captured pre-softmax, handed to the engine,
and written back before the softmax runs, so a pass-through session leaves
generation bit-identical.

Maps cross the boundary head-averaged for checking and localization; the
rectification plan is applied to every head's raw scores individually.  No
calibration math lives here, only tensor plumbing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from layoutcal import (
    AttnMap,
    AttnStack,
    CalibrationConfig,
    CalibrationSession,
    ParsedLayout,
    rectify_token_grids,
)
from layoutcal.attention import LOGITS, PROBS

from .tokens import remap_layout


class UnsupportedPipeline(Exception):
    """The pipeline exposes no usable attention interception points."""


def find_cross_attention_modules(pipeline) -> list[torch.nn.Module]:
    """Cross-attention modules in traversal order, or raise."""
    root = getattr(pipeline, "unet", pipeline)
    if not isinstance(root, torch.nn.Module):
        raise UnsupportedPipeline(f"{type(pipeline).__name__} has no torch module tree")
    found = [
        m
        for m in root.modules()
        if getattr(m, "is_cross_attention", False)
        and callable(getattr(m, "set_processor", None))
    ]
    if not found:
        raise UnsupportedPipeline(
            "no cross-attention modules with a processor seam found"
        )
    return found


def infer_spatial(seq_len: int, aspect: tuple[int, int] = (1, 1)) -> tuple[int, int]:
    """Recover (height, width) of a flattened spatial sequence."""
    ah, aw = aspect
    w = round(math.sqrt(seq_len * aw / ah))
    if w < 1 or seq_len % w:
        raise UnsupportedPipeline(
            f"cannot factor sequence length {seq_len} at aspect {ah}:{aw}"
        )
    h = seq_len // w
    if h * aw != w * ah:
        raise UnsupportedPipeline(
            f"sequence length {seq_len} does not match aspect {ah}:{aw}"
        )
    return h, w


class InterceptingProcessor:
    """Drop-in attention processor that exposes the pre-softmax scores."""

    def __init__(self, binding: "HookBinding", layer_no: int):
        self._binding = binding
        self._layer_no = layer_no

    def __call__(self, attn, hidden_states, encoder_hidden_states=None,
                 attention_mask=None):
        context = (
            encoder_hidden_states if encoder_hidden_states is not None
            else hidden_states
        )
        query = attn.to_q(hidden_states)
        key = attn.to_k(context)
        value = attn.to_v(context)
        batch, seq, inner = query.shape
        heads = attn.heads
        dim_head = inner // heads

        def split_heads(t):
            b, n, _ = t.shape
            return (
                t.reshape(b, n, heads, dim_head)
                .transpose(1, 2)
                .reshape(b * heads, n, dim_head)
            )

        query, key, value = split_heads(query), split_heads(key), split_heads(value)
        scores = torch.baddbmm(
            torch.empty(
                query.shape[0], query.shape[1], key.shape[1],
                dtype=query.dtype, device=query.device,
            ),
            query,
            key.transpose(-1, -2),
            beta=0,
            alpha=attn.scale,
        )
        scores = self._binding.on_scores(self._layer_no, scores, batch, heads)
        probs = scores.softmax(dim=-1)
        out = torch.bmm(probs, value)
        out = (
            out.reshape(batch, heads, seq, dim_head)
            .transpose(1, 2)
            .reshape(batch, seq, heads * dim_head)
        )
        return attn.to_out(out)


@dataclass
class HookBinding:
    """Installed hooks plus per-generation session state."""

    modules: list[torch.nn.Module]
    session: CalibrationSession
    cfg: CalibrationConfig
    token_map: dict[int, int] | None
    cond_index: int = -1
    aspect: tuple[int, int] = (1, 1)
    capture: bool = True

    _originals: list = field(default_factory=list, repr=False)
    _step: int = field(default=0, repr=False)
    _seen_layers: set = field(default_factory=set, repr=False)
    _step_logits: list = field(default_factory=list, repr=False)
    _step_probs: list = field(default_factory=list, repr=False)
    captured: list[AttnStack] = field(default_factory=list, repr=False)
    detached: bool = field(default=False, repr=False)

    def __post_init__(self):
        self._originals = [(m, m.processor) for m in self.modules]
        for i, m in enumerate(self.modules):
            m.set_processor(InterceptingProcessor(self, i + 1))
        self._step = self.cfg.steps

    @property
    def num_layers(self) -> int:
        return len(self.modules)

    def reset(self) -> None:
        """Start a fresh step countdown for a new generation run."""
        self._step = self.cfg.steps
        self._seen_layers.clear()
        self._step_logits.clear()
        self._step_probs.clear()
        self.captured.clear()

    def detach(self) -> None:
        """Restore the original processors."""
        for module, proc in self._originals:
            module.set_processor(proc)
        self.detached = True

    # -- interception ---------------------------------------------------------

    def _cond_grids(self, scores: torch.Tensor, batch: int, heads: int):
        bh, seq, tokens = scores.shape
        h, w = infer_spatial(seq, self.aspect)
        per_batch = scores.reshape(batch, heads, seq, tokens)
        cond = per_batch[self.cond_index]
        return cond, h, w

    def on_scores(self, layer_no: int, scores: torch.Tensor, batch: int,
                  heads: int) -> torch.Tensor:
        if self.detached or self._step < 1:
            return scores
        if layer_no in self._seen_layers:
            raise UnsupportedPipeline(
                f"cross-attention layer {layer_no} ran twice within one step"
            )
        self._seen_layers.add(layer_no)
        with torch.no_grad():
            cond, h, w = self._cond_grids(scores, batch, heads)
            tokens = cond.shape[-1]
            mean_logits = (
                cond.mean(dim=0).transpose(0, 1).reshape(tokens, h, w)
            )
            self._step_logits.append(mean_logits.cpu().numpy().astype(np.float32))
            mean_probs = (
                cond.softmax(dim=-1).mean(dim=0)
                .transpose(0, 1).reshape(tokens, h, w)
            )
            self._step_probs.append(
                np.clip(mean_probs.cpu().numpy().astype(np.float32), 0.0, 1.0)
            )
            out = scores
            if (
                self.session.rectifies_at(self._step)
                and layer_no not in self.cfg.resolved_skip(self.num_layers)
            ):
                out = scores.clone()
                per_batch = out.reshape(batch, heads, cond.shape[1], tokens)
                for head in range(heads):
                    grids = (
                        per_batch[self.cond_index, head]
                        .transpose(0, 1).reshape(tokens, h, w)
                        .cpu().numpy().astype(np.float64)
                    )
                    fixed = rectify_token_grids(
                        grids, layer_no, self.num_layers, self.session.plan, self.cfg
                    )
                    per_batch[self.cond_index, head] = torch.from_numpy(
                        np.ascontiguousarray(
                            fixed.reshape(tokens, h * w).T
                        )
                    ).to(dtype=scores.dtype, device=scores.device)
        if len(self._seen_layers) == self.num_layers:
            self._finish_step()
        return out

    def _finish_step(self) -> None:
        t = self._step
        logits_stack = AttnStack(
            tuple(AttnMap(g, LOGITS) for g in self._step_logits), t
        )
        probs_stack = AttnStack(
            tuple(AttnMap(g, PROBS) for g in self._step_probs), t
        )
        if self.capture:
            self.captured.append(logits_stack)
        self.session.observe(t, probs_stack)
        self.session.process(t, logits_stack)  # report bookkeeping only
        self._seen_layers.clear()
        self._step_logits = []
        self._step_probs = []
        self._step = t - 1

    # -- export ---------------------------------------------------------------

    def export(self, path: str) -> None:
        """Write the captured (as-produced, head-averaged) logits stacks."""
        from layoutcal import write_stacks

        if not self.captured:
            raise ValueError("nothing captured yet")
        write_stacks(path, self.captured)


def attach(
    pipeline,
    prompt: str,
    cfg: CalibrationConfig | None = None,
    token_map: dict[int, int] | None = None,
    layout: ParsedLayout | None = None,
    cond_index: int = -1,
    aspect: tuple[int, int] = (1, 1),
    capture: bool = True,
) -> HookBinding:
    """Install engine hooks on every cross-attention layer of ``pipeline``.

    ``layout`` (word-indexed) falls back to parsing the prompt; when a
    ``token_map`` is given, object head indices are re-keyed onto pipeline
    token positions.  Keyword-free prompts produce a pass-through session
    whose hooks never alter a single score.
    """
    cfg = cfg or CalibrationConfig()
    modules = find_cross_attention_modules(pipeline)
    if layout is not None and token_map is not None:
        layout = remap_layout(layout, token_map)
        session = CalibrationSession(prompt, cfg, layout=layout)
    elif layout is not None:
        session = CalibrationSession(prompt, cfg, layout=layout)
    else:
        session = CalibrationSession(prompt, cfg)
        if session.layout is not None and token_map is not None:
            session = CalibrationSession(
                prompt, cfg, layout=remap_layout(session.layout, token_map)
            )
    return HookBinding(
        modules=modules,
        session=session,
        cfg=cfg,
        token_map=token_map,
        cond_index=cond_index,
        aspect=aspect,
        capture=capture,
    )
