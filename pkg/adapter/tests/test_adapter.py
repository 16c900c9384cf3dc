import time

import numpy as np
import pytest
import torch

from layoutcal import CalibrationConfig, plan_layout, read_stacks
from layoutcal.geometry import RelBox
from layoutcal.layout import ParsedLayout
from layoutcal_adapter import (
    UnsupportedPipeline,
    attach,
    build_token_map,
    find_cross_attention_modules,
    handshake_json,
    infer_spatial,
)

from toy_pipeline import ToyPipeline

STEPS = 4


def _cfg(**overrides):
    params = dict(steps=STEPS, t_loc=1, alpha=10.0, threshold=0.2)
    params.update(overrides)
    return CalibrationConfig(**params)


def _small_box_layout(prompt: str) -> ParsedLayout:
    """Word-indexed layout with deliberately tiny boxes so a random-init
    pipeline is always flagged as misplaced."""
    layout = plan_layout(prompt)
    boxes = {
        obj: RelBox(box.cx, box.cy, 0.12, 0.12)
        for obj, box in layout.boxes.items()
    }
    return ParsedLayout(layout.prompt, layout.objects, layout.relations, boxes)


def test_find_cross_attention_modules_ordered():
    pipe = ToyPipeline()
    modules = find_cross_attention_modules(pipe)
    assert len(modules) == 4


def test_unsupported_pipeline_raises():
    class NoSeams:
        unet = torch.nn.Linear(3, 3)

    with pytest.raises(UnsupportedPipeline):
        attach(NoSeams(), "a dog on the left")
    with pytest.raises(UnsupportedPipeline):
        attach(object(), "a dog on the left")


def test_infer_spatial():
    assert infer_spatial(256) == (16, 16)
    assert infer_spatial(64) == (8, 8)
    assert infer_spatial(32, aspect=(1, 2)) == (4, 8)
    with pytest.raises(UnsupportedPipeline):
        infer_spatial(13)


def test_passthrough_hook_is_bit_identical_and_detach_clean():
    prompt = "a photo of a dog"  # no layout keywords
    baseline = ToyPipeline(seed=3).generate(prompt, steps=STEPS, seed=11)

    pipe = ToyPipeline(seed=3)
    binding = attach(pipe, prompt, cfg=_cfg())
    hooked = pipe.generate(prompt, steps=STEPS, seed=11)
    assert binding.session.report().pass_through
    assert torch.equal(hooked, baseline)

    binding.detach()
    unhooked_again = pipe.generate(prompt, steps=STEPS, seed=11)
    assert torch.equal(unhooked_again, baseline)


def test_export_import_roundtrip_bit_exact(tmp_path):
    prompt = "a photo of a dog"
    pipe = ToyPipeline(seed=5)
    binding = attach(pipe, prompt, cfg=_cfg())
    pipe.generate(prompt, steps=STEPS, seed=7)
    assert len(binding.captured) == STEPS

    path = tmp_path / "steps.simm"
    binding.export(str(path))
    back = read_stacks(str(path))
    assert len(back) == STEPS
    for orig, rest in zip(binding.captured, back):
        assert rest.step == orig.step and rest.kind == orig.kind
        for lo, lr in zip(orig.layers, rest.layers):
            assert lo.values.dtype == np.float32
            assert np.array_equal(lo.values, lr.values)


def test_integration_smoke_rectifies_live_pipeline():
    prompt = "a dog to the left of a cat"
    layout = _small_box_layout(prompt)
    token_map = build_token_map(prompt, lambda w: 1, bos_offset=1)
    pipe = ToyPipeline(seed=9)
    binding = attach(pipe, prompt, cfg=_cfg(), layout=layout, token_map=token_map)
    out = pipe.generate(prompt, steps=STEPS, seed=13)

    report = binding.session.report()
    assert not report.pass_through
    assert report.plan is not None and len(report.plan.entries) >= 1
    rectified_steps = [t for t, c in report.modified_per_step.items() if c > 0]
    assert rectified_steps and max(rectified_steps) == STEPS - 1
    assert out.shape == (2, 4, 16, 16)
    assert torch.isfinite(out).all()


def test_rectifying_hook_changes_cond_scores_only():
    prompt = "a dog to the left of a cat"
    layout = _small_box_layout(prompt)
    token_map = build_token_map(prompt, lambda w: 1)
    baseline = ToyPipeline(seed=21).generate(prompt, steps=STEPS, seed=2)

    pipe = ToyPipeline(seed=21)
    binding = attach(pipe, prompt, cfg=_cfg(), layout=layout, token_map=token_map)
    hooked = pipe.generate(prompt, steps=STEPS, seed=2)
    assert not binding.session.report().pass_through
    assert not torch.equal(hooked, baseline)


def test_reset_supports_second_generation():
    prompt = "a photo of a dog"
    pipe = ToyPipeline(seed=4)
    binding = attach(pipe, prompt, cfg=_cfg())
    pipe.generate(prompt, steps=STEPS, seed=1)
    first = [s.step for s in binding.captured]
    binding.reset()
    pipe.generate(prompt, steps=STEPS, seed=1)
    assert [s.step for s in binding.captured] == first


def test_handshake_document():
    prompt = "a dog to the left of a cat"
    token_map = build_token_map(prompt, lambda w: 2, bos_offset=1)
    import json

    doc = json.loads(handshake_json(prompt, token_map))
    assert doc["prompt"] == prompt
    assert doc["head_policy"] == "last-subword-of-head-noun"
    # dog is word 1: BOS + 2 pieces for "a" + 2 for "dog" ends at position 4
    assert doc["token_map"]["1"] == 4
    values = list(doc["token_map"].values())
    assert len(set(values)) == len(values)


def test_passthrough_overhead_smoke():
    prompt = "a photo of a dog"
    pipe = ToyPipeline(seed=8)
    t0 = time.perf_counter()
    for _ in range(3):
        pipe.generate(prompt, steps=STEPS, seed=3)
    bare = time.perf_counter() - t0

    binding = attach(pipe, prompt, cfg=_cfg(), capture=False)
    binding.reset()
    t0 = time.perf_counter()
    for _ in range(3):
        binding.reset()
        pipe.generate(prompt, steps=STEPS, seed=3)
    hooked = time.perf_counter() - t0
    print(f"pass-through overhead: {hooked / bare - 1:+.1%} (informational)")
