"""Deterministic synthetic denoiser standing in for a diffusion backend.

Each scene paints one Gaussian activation blob per object token onto every
layer, biased toward a configurable center so layout errors can be
manufactured on purpose.  A feedback gain couples each step's blob centers
to the centroid of the previous step's (possibly rectified) attention, so
rectification causally moves objects, which is what the end-to-end suite
verifies.  A background token absorbs residual mass so the per-position
softmax over tokens is well behaved.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .attention import (
    LOGITS,
    AttnMap,
    AttnStack,
    center_of_mass,
    layered_merge,
    probs_from_logits,
)
from .errors import WindowTooLarge
from .geometry import PixelRegion, RelBox
from .layout import ParsedLayout
from .rectify import AttentionSource, CalibrationConfig, CalibrationReport, run_calibration

DEFAULT_RESOLUTIONS: tuple[tuple[int, int], ...] = (
    (64, 64), (32, 32), (32, 32), (16, 16), (16, 16), (8, 8),
)


@dataclass(frozen=True)
class SimObject:
    token_index: int
    bias: tuple[float, float]  # (x, y), relative
    sigma: float
    amplitude: float


@dataclass
class SimScene:
    """Full description of one synthetic generation run."""

    objects: list[SimObject]
    n_tokens: int
    resolutions: tuple[tuple[int, int], ...] = DEFAULT_RESOLUTIONS
    noise_sigma: float = 0.3
    seed: int = 0
    feedback: float = 0.8  # blob centers follow the previous step's centroid
    background_level: float = 6.0
    layer_scales: tuple[float, ...] | None = None  # amplitude scale per layer

    def __post_init__(self):
        tokens = [o.token_index for o in self.objects]
        if len(set(tokens)) != len(tokens):
            raise ValueError("object token indices must be distinct")
        if any(t < 0 or t >= self.n_tokens - 1 for t in tokens):
            raise ValueError(
                "token indices must leave the last slot for the background token"
            )
        if any(o.amplitude <= 0 for o in self.objects):
            raise ValueError("amplitudes must be positive")
        if any(w < 4 or h < 4 for w, h in self.resolutions):
            raise ValueError("layer resolutions must be at least 4x4")
        if not (0.0 <= self.feedback <= 1.0):
            raise ValueError("feedback gain must lie in [0, 1]")
        if self.layer_scales is not None and len(self.layer_scales) != len(
            self.resolutions
        ):
            raise ValueError("layer_scales must match the number of layers")

    @property
    def background_token(self) -> int:
        return self.n_tokens - 1

    def to_json(self) -> str:
        return json.dumps(
            {
                "objects": [
                    {
                        "token_index": o.token_index,
                        "bias": [o.bias[0], o.bias[1]],
                        "sigma": o.sigma,
                        "amplitude": o.amplitude,
                    }
                    for o in self.objects
                ],
                "n_tokens": self.n_tokens,
                "resolutions": [list(r) for r in self.resolutions],
                "noise_sigma": self.noise_sigma,
                "seed": self.seed,
                "feedback": self.feedback,
                "background_level": self.background_level,
                "layer_scales": list(self.layer_scales)
                if self.layer_scales is not None
                else None,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SimScene":
        d = json.loads(text)
        return cls(
            objects=[
                SimObject(
                    o["token_index"], (o["bias"][0], o["bias"][1]),
                    o["sigma"], o["amplitude"],
                )
                for o in d["objects"]
            ],
            n_tokens=d["n_tokens"],
            resolutions=tuple(tuple(r) for r in d["resolutions"]),
            noise_sigma=d["noise_sigma"],
            seed=d["seed"],
            feedback=d["feedback"],
            background_level=d.get("background_level", 6.0),
            layer_scales=tuple(d["layer_scales"]) if d.get("layer_scales") else None,
        )


def _blob_centers(
    scene: SimScene, prev_probs: AttnStack | None
) -> dict[int, tuple[float, float]]:
    if prev_probs is None or scene.feedback == 0.0:
        return {o.token_index: o.bias for o in scene.objects}
    merged = layered_merge(prev_probs)
    lam = scene.feedback
    centers = {}
    for o in scene.objects:
        com = center_of_mass(merged.token_grid(o.token_index))
        centers[o.token_index] = (
            (1 - lam) * o.bias[0] + lam * com[0],
            (1 - lam) * o.bias[1] + lam * com[1],
        )
    return centers


def synth_step(
    scene: SimScene, t: int, prev_probs: AttnStack | None = None
) -> tuple[AttnStack, AttnStack]:
    """Produce the logits and probs stacks for one denoising step.

    Blob centers sit at each object's bias on the first step and then
    follow ``(1 - feedback) * bias + feedback * centroid(prev)``.  Object
    grids get seeded Gaussian noise; the background token is a constant
    shelf; remaining tokens stay at zero.  Identical inputs produce
    bit-identical tensors.
    """
    centers = _blob_centers(scene, prev_probs)
    logits_layers = []
    for li, (w, h) in enumerate(scene.resolutions):
        scale = scene.layer_scales[li] if scene.layer_scales is not None else 1.0
        grids = np.zeros((scene.n_tokens, h, w), dtype=np.float64)
        grids[scene.background_token] = scene.background_level
        xs = (np.arange(w) + 0.5) / w
        ys = (np.arange(h) + 0.5) / h
        gx, gy = np.meshgrid(xs, ys)
        for o in scene.objects:
            rng = np.random.default_rng(
                np.random.SeedSequence([scene.seed, t, li, o.token_index])
            )
            cx, cy = centers[o.token_index]
            d2 = (gx - cx) ** 2 + (gy - cy) ** 2
            blob = o.amplitude * scale * np.exp(-d2 / (2.0 * o.sigma**2))
            noise = rng.normal(0.0, scene.noise_sigma, size=(h, w))
            grids[o.token_index] = blob + noise
        logits_layers.append(AttnMap(grids, LOGITS))
    logits = AttnStack(tuple(logits_layers), t)
    return logits, probs_from_logits(logits)


@dataclass
class SimResult:
    """Where each object ended up, and whether it landed in its box."""

    centers: dict[int, tuple[float, float]]
    success: dict[int, bool]
    accuracy: float

    @property
    def all_correct(self) -> bool:
        return all(self.success.values())


def evaluate_layout(final_probs: AttnStack, layout: ParsedLayout) -> SimResult:
    """Judge the final step: each object's activation centroid must fall
    inside its target box."""
    merged = layered_merge(final_probs)
    centers: dict[int, tuple[float, float]] = {}
    success: dict[int, bool] = {}
    for obj in layout.objects:
        k = obj.head_token_index
        com = center_of_mass(merged.token_grid(k))
        centers[k] = com
        success[k] = layout.boxes[obj].contains(com[0], com[1])
    acc = sum(success.values()) / len(success) if success else 0.0
    return SimResult(centers, success, acc)


def brute_force_locate(grid: np.ndarray, window: tuple[int, int]) -> PixelRegion:
    """Exhaustive window-sum maximization, first maximum wins.

    Quadratic test oracle for the summed-area-table sweep; identical
    tie-break (smallest row_start, then col_start).
    """
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    ww, wh = window
    if wh > h or ww > w or ww < 1 or wh < 1:
        raise WindowTooLarge(f"window {ww}x{wh} exceeds map {w}x{h}")
    best = None
    best_sum = -math.inf
    for r0 in range(h - wh + 1):
        for c0 in range(w - ww + 1):
            s = float(grid[r0:r0 + wh, c0:c0 + ww].sum())
            if s > best_sum:
                best_sum = s
                best = (r0, c0)
    r0, c0 = best
    return PixelRegion(r0, r0 + wh, c0, c0 + ww)


class SimSource(AttentionSource):
    """Adapter that lets the calibration loop drive a scene step by step."""

    def __init__(self, scene: SimScene):
        self.scene = scene
        self._prev: AttnStack | None = None
        self.final_probs: AttnStack | None = None
        self.consumed: list[AttnStack] = []

    def produce(self, t: int) -> tuple[AttnStack, AttnStack]:
        logits, probs = synth_step(self.scene, t, self._prev)
        if t == 1:
            self.final_probs = probs
        return logits, probs

    def consume(self, t: int, logits: AttnStack) -> None:
        self.consumed.append(logits)
        self._prev = probs_from_logits(logits)


def run_scene(
    scene: SimScene,
    layout: ParsedLayout,
    cfg: CalibrationConfig | None = None,
    rectify: bool = True,
) -> tuple[SimResult, CalibrationReport | None]:
    """Run one scene through the simulator, with or without calibration."""
    cfg = cfg or CalibrationConfig()
    source = SimSource(scene)
    report = None
    if rectify:
        report = run_calibration(layout.prompt, source, cfg, layout=layout)
    else:
        for t in range(cfg.steps, 0, -1):
            logits, _ = source.produce(t)
            source.consume(t, logits)
    assert source.final_probs is not None
    return evaluate_layout(source.final_probs, layout), report


# Suite construction ---------------------------------------------------------

SUITE_RESOLUTIONS: tuple[tuple[int, int], ...] = (
    (32, 32), (16, 16), (16, 16), (8, 8),
)
SUITE_LAYER_SCALES: tuple[float, ...] = (0.25, 1.0, 1.0, 0.25)


def _gauss_box_overlap(bias: tuple[float, float], sigma: float, box: RelBox) -> float:
    def cdf(z: float) -> float:
        return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))

    px = cdf((box.x1 - bias[0]) / sigma) - cdf((box.x0 - bias[0]) / sigma)
    py = cdf((box.y1 - bias[1]) / sigma) - cdf((box.y0 - bias[1]) / sigma)
    return px * py


def scene_for_prompt(
    layout: ParsedLayout,
    seed: int,
    feedback: float = 0.8,
    misplaced_tokens: list[int] | None = None,
    resolutions: tuple[tuple[int, int], ...] = SUITE_RESOLUTIONS,
    layer_scales: tuple[float, ...] | None = SUITE_LAYER_SCALES,
    amplitude: float = 12.0,
    sigma_range: tuple[float, float] = (0.15, 0.24),
    noise_sigma: float = 0.3,
    background_level: float = 6.0,
    max_overlap: float = 0.08,
) -> SimScene:
    """Build a scene whose blobs start outside their target boxes.

    Misplaced objects (all by default) get a bias sampled so that at most
    ``max_overlap`` of their blob mass falls inside the box; aligned
    objects start at their box center.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB1A5]))
    misplace = (
        set(misplaced_tokens)
        if misplaced_tokens is not None
        else {o.head_token_index for o in layout.objects}
    )
    objects = []
    for obj in layout.objects:
        box = layout.boxes[obj]
        sigma = float(rng.uniform(*sigma_range))
        if obj.head_token_index in misplace:
            bias = None
            for _ in range(500):
                cand = (float(rng.uniform(0.08, 0.92)), float(rng.uniform(0.08, 0.92)))
                if _gauss_box_overlap(cand, sigma, box) <= max_overlap:
                    bias = cand
                    break
                # Fat blobs may never clear the margin next to a large box.
                sigma = max(sigma_range[0], sigma * 0.95)
            if bias is None:
                raise ValueError(
                    f"could not place {obj.phrase!r} outside its box"
                )
        else:
            bias = (box.cx, box.cy)
        objects.append(SimObject(obj.head_token_index, bias, sigma, amplitude))
    n_tokens = max(o.head_token_index for o in layout.objects) + 2
    return SimScene(
        objects=objects,
        n_tokens=n_tokens,
        resolutions=resolutions,
        noise_sigma=noise_sigma,
        seed=seed,
        feedback=feedback,
        background_level=background_level,
        layer_scales=layer_scales,
    )
