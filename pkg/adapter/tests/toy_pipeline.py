"""Minimal torch denoising pipeline exposing the attention-processor seam.

The cross-attention modules mirror the interface the adapter targets in
production pipelines: ``is_cross_attention``, ``heads``, ``scale``,
``to_q``/``to_k``/``to_v``/``to_out`` and ``set_processor``.  The default
processor performs the same operation sequence as the adapter's
interceptor, so an attached pass-through session is bit-identical to an
unhooked run.
"""

from __future__ import annotations

import torch
from torch import nn


class DefaultProcessor:
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
        probs = scores.softmax(dim=-1)
        out = torch.bmm(probs, value)
        out = (
            out.reshape(batch, heads, seq, dim_head)
            .transpose(1, 2)
            .reshape(batch, seq, heads * dim_head)
        )
        return attn.to_out(out)


class CrossAttention(nn.Module):
    def __init__(self, query_dim: int, context_dim: int, heads: int = 2):
        super().__init__()
        dim_head = query_dim // heads
        self.heads = heads
        self.scale = dim_head**-0.5
        self.is_cross_attention = True
        self.to_q = nn.Linear(query_dim, heads * dim_head, bias=False)
        self.to_k = nn.Linear(context_dim, heads * dim_head, bias=False)
        self.to_v = nn.Linear(context_dim, heads * dim_head, bias=False)
        self.to_out = nn.Linear(heads * dim_head, query_dim)
        self.processor = DefaultProcessor()

    def set_processor(self, processor) -> None:
        self.processor = processor

    def forward(self, hidden_states, encoder_hidden_states):
        return self.processor(self, hidden_states, encoder_hidden_states)


class AttnBlock(nn.Module):
    def __init__(self, channels: int, context_dim: int):
        super().__init__()
        self.attn = CrossAttention(channels, context_dim)

    def forward(self, x, context):
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        tokens = self.attn(tokens, context)
        return x + tokens.transpose(1, 2).reshape(b, c, h, w)


class ToyUNet(nn.Module):
    """Down/up ladder with one cross-attention per resolution stage."""

    def __init__(self, channels: int = 8, context_dim: int = 16):
        super().__init__()
        self.conv_in = nn.Conv2d(4, channels, 3, padding=1)
        self.attn_hi_in = AttnBlock(channels, context_dim)
        self.down = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.attn_lo_a = AttnBlock(channels, context_dim)
        self.attn_lo_b = AttnBlock(channels, context_dim)
        self.up = nn.ConvTranspose2d(channels, channels, 2, stride=2)
        self.attn_hi_out = AttnBlock(channels, context_dim)
        self.conv_out = nn.Conv2d(channels, 4, 3, padding=1)

    def forward(self, x, context):
        h = self.conv_in(x)
        h = self.attn_hi_in(h, context)
        h = self.down(h)
        h = self.attn_lo_a(h, context)
        h = self.attn_lo_b(h, context)
        h = self.up(h)
        h = self.attn_hi_out(h, context)
        return self.conv_out(h)


class ToyPipeline:
    """Deterministic fake denoiser: latent 4x16x16, four attention layers."""

    def __init__(self, context_tokens: int = 12, seed: int = 0):
        torch.manual_seed(seed)
        self.unet = ToyUNet()
        self.context_tokens = context_tokens
        self.context_dim = 16

    def encode_prompt(self, prompt: str, batch: int = 2) -> torch.Tensor:
        gen = torch.Generator().manual_seed(abs(hash(prompt)) % (2**31))
        ctx = torch.randn(
            batch, self.context_tokens, self.context_dim, generator=gen
        )
        return ctx

    @torch.no_grad()
    def generate(self, prompt: str, steps: int = 4, seed: int = 0) -> torch.Tensor:
        context = self.encode_prompt(prompt)
        gen = torch.Generator().manual_seed(seed)
        latent = torch.randn(2, 4, 16, 16, generator=gen)
        for _ in range(steps, 0, -1):
            latent = latent - 0.1 * self.unet(latent, context)
        return latent
