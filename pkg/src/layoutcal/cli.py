"""Command-line workflows over prompts, tensor files and benchmarks.

Stages compose through files: ``plan`` emits layout JSON, ``locate`` and
``rectify`` exchange SIMMATN1 tensor files, ``bench-gen`` and ``eval``
work on JSONL datasets.  Every subcommand is deterministic given its
inputs, flags and seed.
"""

from __future__ import annotations

import argparse
import json
import sys

from .attention import LOGITS, AttnStack, probs_from_logits
from .bench import BenchConfig, generate_benchmark, read_jsonl, write_jsonl
from .errors import (
    AllocationOverflow,
    AmbiguousRelation,
    CycleDetected,
    ExhaustedSpace,
    FormatError,
    KindMismatch,
    ParseFailure,
    PlanStackMismatch,
    ShapeMismatch,
    UnknownTerm,
    WindowTooLarge,
)
from .layout import layout_from_json, layout_to_json, plan_layout
from .parsing import detect_layout_requirement
from .rectify import CalibrationConfig, CalibrationSession, run_calibration
from .simulate import SimScene, run_scene, scene_for_prompt
from .tensorio import read_stacks, write_stacks
from .vocab import load_vocabulary

_PARSE_ERRORS = (
    ParseFailure, AmbiguousRelation, CycleDetected, AllocationOverflow,
    UnknownTerm, ExhaustedSpace,
)
_FORMAT_ERRORS = (
    FormatError, KindMismatch, ShapeMismatch, PlanStackMismatch,
    WindowTooLarge, json.JSONDecodeError, ValueError,
)


class FileSource:
    """Attention source backed by a tensor file's step sequence."""

    def __init__(self, stacks: list[AttnStack]):
        self._by_step = {s.step: s for s in stacks}
        self.outputs: list[AttnStack] = []

    def produce(self, t: int):
        logits = self._by_step[t]
        return logits, probs_from_logits(logits)

    def consume(self, t: int, logits: AttnStack) -> None:
        self.outputs.append(logits)


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _config_from_args(args, steps: int | None = None) -> CalibrationConfig:
    return CalibrationConfig(
        steps=steps if steps is not None else args.steps,
        t_loc=args.t_loc,
        alpha=args.alpha,
        threshold=args.threshold,
    )


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, default=20, help="denoising steps T")
    p.add_argument("--t-loc", type=int, default=1, dest="t_loc",
                   help="localization steps before rectification starts")
    p.add_argument("--alpha", type=float, default=10.0,
                   help="adjustment strength")
    p.add_argument("--threshold", type=float, default=0.2,
                   help="inside-fraction below which an object is misplaced")


def _cmd_check(args) -> int:
    vocab = load_vocabulary(args.vocab)
    detected, matches = detect_layout_requirement(args.prompt, vocab)
    _emit(json.dumps({
        "prompt": args.prompt,
        "detected": detected,
        "matches": [
            {"word": m.word, "category": m.category, "token_index": m.token_index}
            for m in matches
        ],
    }, indent=2), args.output)
    return 0


def _cmd_plan(args) -> int:
    vocab = load_vocabulary(args.vocab)
    layout = plan_layout(args.prompt, vocab)
    _emit(layout_to_json(layout), args.output)
    return 0


def _read_layout(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return layout_from_json(fh.read())


def _session_inputs(args):
    if args.layout:
        layout = _read_layout(args.layout)
        return layout.prompt, layout
    return args.prompt, None


def _cmd_locate(args) -> int:
    prompt, layout = _session_inputs(args)
    stacks = read_stacks(args.tensors)
    cfg = _config_from_args(args, steps=len(stacks))
    session = CalibrationSession(prompt, cfg, layout=layout)
    for stack in stacks:
        probs = probs_from_logits(stack) if stack.kind == LOGITS else stack
        session.observe(stack.step, probs)
        if session.plan is not None:
            break
    _emit(session.report().to_json(), args.output)
    return 0


def _cmd_rectify(args) -> int:
    prompt, layout = _session_inputs(args)
    stacks = read_stacks(args.tensors)
    if stacks[0].kind != LOGITS:
        raise FormatError("rectify needs a logits tensor file")
    cfg = _config_from_args(args, steps=len(stacks))
    source = FileSource(stacks)
    report = run_calibration(prompt, source, cfg, layout=layout)
    write_stacks(args.output, source.outputs)
    if args.report:
        _emit(report.to_json(), args.report)
    return 0


def _cmd_simulate(args) -> int:
    layout = plan_layout(args.prompt, load_vocabulary(args.vocab))
    if args.scene:
        with open(args.scene, "r", encoding="utf-8") as fh:
            scene = SimScene.from_json(fh.read())
    else:
        scene = scene_for_prompt(layout, seed=args.seed, feedback=args.lam)
    cfg = _config_from_args(args)
    result, report = run_scene(scene, layout, cfg, rectify=not args.off)
    doc = {
        "prompt": args.prompt,
        "rectified": not args.off,
        "accuracy": result.accuracy,
        "all_correct": result.all_correct,
        "centers": {str(k): [round(c, 6) for c in v]
                    for k, v in sorted(result.centers.items())},
        "success": {str(k): v for k, v in sorted(result.success.items())},
    }
    _emit(json.dumps(doc, indent=2), args.output)
    if args.scene_out:
        _emit(scene.to_json(), args.scene_out)
    if args.report and report is not None:
        _emit(report.to_json(), args.report)
    return 0


def _cmd_bench_gen(args) -> int:
    counts = None
    if args.counts:
        counts = tuple(int(c) for c in args.counts.split(","))
    cfg = BenchConfig(seed=args.seed)
    prompts = generate_benchmark(args.n, cfg, counts)
    write_jsonl(args.output, prompts)
    return 0


def _cmd_eval(args) -> int:
    prompts = read_jsonl(args.bench)
    cfg = _config_from_args(args)
    rows = []
    for p in sorted(prompts, key=lambda b: b.id):
        layout = plan_layout(p.text)
        scene = scene_for_prompt(
            layout, seed=args.seed * 1_000_003 + int(p.id.split("-")[-1]),
            feedback=args.lam,
        )
        on, _ = run_scene(scene, layout, cfg, rectify=True)
        off, _ = run_scene(scene, layout, cfg, rectify=False)
        rows.append({
            "id": p.id,
            "objects": len(p.objects),
            "on_correct": on.all_correct,
            "off_correct": off.all_correct,
        })
    n = len(rows)
    doc = {
        "n": n,
        "on_accuracy": sum(r["on_correct"] for r in rows) / n if n else 0.0,
        "off_accuracy": sum(r["off_correct"] for r in rows) / n if n else 0.0,
        "rows": rows,
    }
    _emit(json.dumps(doc, indent=2), args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layoutcal",
        description="Training-free layout calibration for cross-attention maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="detect layout keywords in a prompt")
    p.add_argument("prompt")
    p.add_argument("--vocab", default=None, help="vocabulary JSON override")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("plan", help="parse a prompt into a target layout")
    p.add_argument("prompt")
    p.add_argument("--vocab", default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("locate", help="find activated regions for misplaced objects")
    p.add_argument("--tensors", required=True, help="SIMMATN1 tensor file")
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--layout", help="layout JSON from plan")
    grp.add_argument("--prompt", help="plan the layout from this prompt instead")
    _add_config_flags(p)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_locate)

    p = sub.add_parser("rectify", help="rectify a logits tensor file")
    p.add_argument("--tensors", required=True)
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--layout", help="layout JSON from plan")
    grp.add_argument("--prompt", help="plan the layout from this prompt instead")
    _add_config_flags(p)
    p.add_argument("-o", "--output", required=True, help="rectified tensor file")
    p.add_argument("--report", default=None, help="write the session report here")
    p.set_defaults(func=_cmd_rectify)

    p = sub.add_parser("simulate", help="run one prompt through the simulator")
    p.add_argument("--prompt", required=True)
    p.add_argument("--scene", default=None, help="scene JSON (generated if omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lam", type=float, default=0.8, help="feedback gain")
    p.add_argument("--off", action="store_true", help="disable rectification")
    p.add_argument("--vocab", default=None)
    _add_config_flags(p)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--scene-out", default=None, dest="scene_out")
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bench-gen", help="generate a benchmark JSONL dataset")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--counts", default=None,
                   help="exact prompts per object count, e.g. 36,96,56,15")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_bench_gen)

    p = sub.add_parser("eval", help="run a benchmark through the simulator")
    p.add_argument("--bench", required=True, help="JSONL from bench-gen")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lam", type=float, default=0.8)
    _add_config_flags(p)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _PARSE_ERRORS as exc:
        _error_json(exc)
        return 2
    except _FORMAT_ERRORS as exc:
        _error_json(exc)
        return 3
    except OSError as exc:
        _error_json(exc)
        return 1


def _error_json(exc: Exception) -> None:
    sys.stderr.write(json.dumps(
        {"error": type(exc).__name__, "message": str(exc)}
    ) + "\n")


if __name__ == "__main__":
    sys.exit(main())
