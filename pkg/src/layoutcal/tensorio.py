"""Binary tensor exchange format shared with external attention producers.

Layout ("SIMMATN1"):

* magic bytes ``SIMMATN1``
* ``T``, ``L``, ``N`` as unsigned 32-bit little-endian
* ``L`` pairs ``(W_l, H_l)``, u32 little-endian
* one kind byte: 0 = logits, 1 = probs
* data as little-endian IEEE-754 float32, ordered
  ``[step descending from T][layer][row][col][token]``

The float payload round-trips bit-exactly, so a file written from a read
sequence reproduces the original bytes.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .attention import LOGITS, PROBS, AttnMap, AttnStack
from .errors import FormatError

MAGIC = b"SIMMATN1"
_KIND_CODE = {LOGITS: 0, PROBS: 1}
_KIND_NAME = {0: LOGITS, 1: PROBS}


def write_stacks(path: str, stacks: list[AttnStack]) -> None:
    """Write a full step sequence (ordered t = T .. 1) to ``path``."""
    if not stacks:
        raise FormatError("cannot write an empty stack sequence")
    first = stacks[0]
    kind = first.kind
    tokens = first.tokens
    resolutions = first.resolutions()
    for s in stacks:
        if s.kind != kind or s.tokens != tokens or s.resolutions() != resolutions:
            raise FormatError("all steps must share kind, token count and resolutions")
    with open(path, "wb") as fh:
        _write_header(fh, len(stacks), len(resolutions), tokens, resolutions, kind)
        for stack in stacks:
            for m in stack.layers:
                # (N, H, W) -> (H, W, N), row/col/token order on disk
                block = np.ascontiguousarray(
                    m.values.transpose(1, 2, 0), dtype="<f4"
                )
                fh.write(block.tobytes())


def _write_header(fh: BinaryIO, t: int, n_layers: int, tokens: int,
                  resolutions: list[tuple[int, int]], kind: str) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<III", t, n_layers, tokens))
    for w, h in resolutions:
        fh.write(struct.pack("<II", w, h))
    fh.write(struct.pack("<B", _KIND_CODE[kind]))


def read_stacks(path: str) -> list[AttnStack]:
    """Read a step sequence written by :func:`write_stacks`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a SIMMATN1 file")
    off = len(MAGIC)
    try:
        t, n_layers, tokens = struct.unpack_from("<III", data, off)
        off += 12
        resolutions = []
        for _ in range(n_layers):
            w, h = struct.unpack_from("<II", data, off)
            off += 8
            resolutions.append((w, h))
        (kind_code,) = struct.unpack_from("<B", data, off)
        off += 1
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if kind_code not in _KIND_NAME:
        raise FormatError(f"{path}: unknown kind byte {kind_code}")
    kind = _KIND_NAME[kind_code]
    if t < 1 or n_layers < 1 or tokens < 1:
        raise FormatError(f"{path}: degenerate dimensions T={t} L={n_layers} N={tokens}")

    expected = sum(w * h for w, h in resolutions) * tokens * t * 4
    if len(data) - off != expected:
        raise FormatError(
            f"{path}: payload is {len(data) - off} bytes, expected {expected}"
        )

    stacks = []
    for i in range(t):
        step = t - i
        layers = []
        for w, h in resolutions:
            count = w * h * tokens
            block = np.frombuffer(data, dtype="<f4", count=count, offset=off)
            off += count * 4
            values = block.reshape(h, w, tokens).transpose(2, 0, 1)
            layers.append(AttnMap(np.ascontiguousarray(values), kind))
        stacks.append(AttnStack(tuple(layers), step))
    return stacks
