"""Command-line interface.

Subcommands map one-to-one onto harness operations: make-scene, coverage,
render, gen-flow, train, eval, compare. Reports are JSON on stdout (or the
--out file) with floats rendered as 17-significant-digit strings; repeated
runs with the same inputs produce identical bytes except for the wall_clock_s
entry. Contract violations print a JSON diagnostic to stderr and exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import blobio
from .encoder import load_params, save_params
from .errors import ContractViolation
from .flow_annotation import reduce_bev_flow
from .harness import (compare_methods, coverage_report, evaluate_model, jsonable,
                      resolve_preset, train_model)
from .scene_sim import (load_scene, preset_scene, render_camera_features, save_scene,
                        scene_ground_truth, with_feature_channels)
from .temporal_stream import load_queue, save_queue

SCENE_PRESETS = ("training", "boundary", "rotation", "stream")


def _resolve_scene(ref: str):
    if Path(ref).exists():
        return load_scene(ref)
    if ref in SCENE_PRESETS:
        return preset_scene(ref)
    raise ContractViolation(
        f"scene {ref!r} is neither a file nor a preset; presets: {SCENE_PRESETS}")


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(jsonable(report), indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _check_frame(frame: int, total: int) -> int:
    if not 0 <= frame < total:
        raise ContractViolation(f"frame {frame} is outside the scene's {total} frames")
    return frame


def _parse_frames(text: str | None, total: int):
    if text is None:
        return None
    try:
        if ":" in text:
            a, b = text.split(":", 1)
            lo = int(a) if a else 0
            hi = int(b) if b else total
        else:
            lo = int(text)
            hi = lo + 1
    except ValueError:
        raise ContractViolation(f"--frames expects an index or lo:hi range, got {text!r}")
    if not (0 <= lo < hi <= total):
        raise ContractViolation(
            f"frame range {text!r} is outside the scene's {total} frames")
    return list(range(lo, hi))


def _cmd_make_scene(args) -> int:
    scene = preset_scene(args.preset, seed=args.seed)
    if args.channels is not None:
        scene = with_feature_channels(scene, args.channels)
    save_scene(args.out, scene)
    _emit({"scene": scene.name, "frames": scene.num_frames,
           "cameras": len(scene.cameras), "feature_channels": scene.feature_channels,
           "path": args.out}, None)
    return 0


def _cmd_coverage(args) -> int:
    scene = _resolve_scene(args.scene)
    _emit(coverage_report(scene, frame=_check_frame(args.frame, scene.num_frames)),
          args.out)
    return 0


def _cmd_render(args) -> int:
    scene = _resolve_scene(args.scene)
    _check_frame(args.frame, scene.num_frames)
    arrays = {f"cam.{j}": render_camera_features(scene, args.frame, j).data
              for j in range(len(scene.cameras))}
    meta = {"scene": scene.name, "frame": args.frame,
            "cameras": [cam.name for cam in scene.cameras]}
    blobio.write_blob(args.out, arrays, meta)
    _emit({"written": args.out, "cameras": len(arrays)}, None)
    return 0


def _cmd_gen_flow(args) -> int:
    scene = _resolve_scene(args.scene)
    _check_frame(args.frame, scene.num_frames)
    labels, field = scene_ground_truth(scene, args.frame, flow_mode=args.flow_mode)
    bev = reduce_bev_flow(field)
    if args.out:
        blobio.write_blob(args.out, {
            "labels": labels, "flow": field.flow, "occupied": field.occupied,
            "category": field.category, "bev_flow": bev.flow, "bev_valid": bev.valid,
            "bev_category": bev.category,
        }, {"scene": scene.name, "frame": args.frame, "mode": args.flow_mode,
            "dt": scene.frame_dt, "grid": scene.grid.to_json(),
            "foreground_classes": list(field.foreground_classes)})
    speeds = np.linalg.norm(field.flow[field.occupied], axis=-1) if field.occupied.any() else None
    _emit({
        "scene": scene.name, "frame": args.frame, "mode": args.flow_mode,
        "occupied_voxels": int(field.occupied.sum()),
        "moving_voxels": int((np.linalg.norm(field.flow, axis=-1) > 1e-12).sum()),
        "max_speed": float(speeds.max()) if speeds is not None and speeds.size else 0.0,
        "bev_valid_cells": int(bev.valid.sum()),
        "blob": args.out,
    }, None)
    return 0


def _cmd_train(args) -> int:
    t0 = time.perf_counter()
    scene = _resolve_scene(args.scene)
    config, settings = resolve_preset(args.preset, scene, method=args.method,
                                      mode=args.mode, queue_len=args.queue_len)
    if args.epochs is not None:
        settings.epochs = args.epochs
    if args.lr is not None:
        settings.lr = args.lr
    settings.seed = args.seed
    params, history = train_model(scene, config, settings, csv_path=args.curve)
    report, _ = evaluate_model(scene, params)
    if args.params:
        save_params(args.params, params)
    _emit({
        "scene": scene.name, "preset": args.preset, "method": args.method,
        "mode": args.mode, "queue_len": config.queue_len, "epochs": settings.epochs,
        "seed": settings.seed, "n_parameters": params.n_parameters(),
        "initial_loss": history[0]["total"], "final_loss": history[-1]["total"],
        "evaluation": report, "params_blob": args.params, "curve_csv": args.curve,
        "wall_clock_s": time.perf_counter() - t0,
    }, args.out)
    return 0


def _cmd_eval(args) -> int:
    t0 = time.perf_counter()
    scene = _resolve_scene(args.scene)
    params = load_params(args.params)
    queue = load_queue(args.queue_in) if args.queue_in else None
    frames = _parse_frames(args.frames, scene.num_frames)
    report, queue = evaluate_model(scene, params, frames=frames, queue=queue)
    if args.queue_out:
        save_queue(args.queue_out, queue)
    report["queue_in"] = args.queue_in
    report["queue_out"] = args.queue_out
    report["wall_clock_s"] = time.perf_counter() - t0
    _emit(report, args.out)
    return 0


def _cmd_compare(args) -> int:
    t0 = time.perf_counter()
    scene = _resolve_scene(args.scene)
    override = {}
    if args.epochs is not None:
        override["epochs"] = args.epochs
    if args.lr is not None:
        override["lr"] = args.lr
    report = compare_methods(
        scene, args.preset,
        methods=tuple(args.methods.split(",")),
        queue_lens=tuple(int(x) for x in args.queue_lens.split(",")),
        mode=args.mode, settings_override=override or None, seed=args.seed)
    report["wall_clock_s"] = time.perf_counter() - t0
    _emit(report, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewocc",
        description="multi-view occupancy perception on synthetic desk-scale scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scene", help="write a preset scene to a JSON file")
    p.add_argument("--preset", choices=SCENE_PRESETS, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--channels", type=int, default=None,
                   help="override rendered feature channels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_scene)

    p = sub.add_parser("coverage", help="per-voxel camera coverage statistics")
    p.add_argument("--scene", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_coverage)

    p = sub.add_parser("render", help="render every camera's feature map to a blob")
    p.add_argument("--scene", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("gen-flow", help="generate occupancy and flow ground truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--flow-mode", choices=("occupancy-flow", "object-flow"),
                   default="occupancy-flow")
    p.add_argument("--out", default=None, help="blob prefix for the full arrays")
    p.set_defaults(func=_cmd_gen_flow)

    p = sub.add_parser("train", help="train a model on a scene and evaluate it")
    p.add_argument("--scene", required=True)
    p.add_argument("--preset", default="small")
    p.add_argument("--method", choices=("view-attn", "proj-first"), default="view-attn")
    p.add_argument("--mode", choices=("one-dof", "two-dof", "ego"), default="one-dof")
    p.add_argument("--queue-len", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", default=None, help="blob prefix for trained parameters")
    p.add_argument("--curve", default=None, help="CSV path for the per-epoch curve")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate saved parameters over a frame stream")
    p.add_argument("--scene", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--frames", default=None, help="frame index or lo:hi range")
    p.add_argument("--queue-in", default=None, help="resume from a saved memory queue")
    p.add_argument("--queue-out", default=None, help="save the memory queue afterwards")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("compare", help="train and evaluate method variants side by side")
    p.add_argument("--scene", required=True)
    p.add_argument("--preset", default="small")
    p.add_argument("--methods", default="view-attn,proj-first")
    p.add_argument("--queue-lens", default="4")
    p.add_argument("--mode", choices=("one-dof", "two-dof", "ego"), default="one-dof")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ContractViolation as exc:
        sys.stderr.write(json.dumps({"error": str(exc)}, indent=2, sort_keys=True) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
