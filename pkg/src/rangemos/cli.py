"""Command-line entry point.

Settings resolve in this order: command-line flag, then ``--config`` JSON
file, then the built-in defaults in ``DEFAULTS``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .dataset_io import ClassMap, KittiSequence, frame_name, remap_labels, write_sequence
from .metrics import evaluate_sequence
from .oracles import run_block_checks
from .projection import ProjConfig, back_project, project, save_png, save_range_image
from .residual import (InsufficientHistoryError, StrideDistribution, residual_stack,
                       sample_stride, save_residual)
from .synth import PRESETS, SceneConfig, baseline_segment, gen_sequence

DEFAULTS = {
    "root": None,
    "sequence": "00",
    "height": 64,
    "width": 2048,
    "fov_up": 3.0,
    "fov_down": -25.0,
    "k": 8,
    "strides": "1,2,3",
    "probs": "0.5,0.25,0.25",
    "stride_preset": "1",
    "threshold": 0.3,
    "seed": 0,
    "out": None,
    "classmap": None,
}


class CommandError(Exception):
    pass


def _floats(text):
    return [float(v) for v in str(text).replace(" ", "").split(",") if v]


def resolve_config(args):
    """Merge defaults, the optional JSON config file and explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise CommandError(f"config file not found: {path}")
        file_cfg = json.loads(path.read_text())
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise CommandError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def proj_config(cfg):
    return ProjConfig(cfg["height"], cfg["width"], cfg["fov_up"], cfg["fov_down"])


def distribution(cfg):
    strides = [int(s) for s in _floats(cfg["strides"])]
    try:
        return StrideDistribution(tuple(strides), tuple(_floats(cfg["probs"])))
    except ValueError as exc:
        raise CommandError(str(exc)) from None


def open_sequence(cfg):
    if not cfg["root"]:
        raise CommandError("--root is required")
    root = Path(cfg["root"])
    if not root.is_dir():
        raise CommandError(f"dataset root not found: {root}")
    try:
        return KittiSequence(root, cfg["sequence"])
    except (FileNotFoundError, ValueError) as exc:
        raise CommandError(str(exc)) from None


def out_dir(cfg):
    if not cfg["out"]:
        raise CommandError("--out is required")
    path = Path(cfg["out"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_project(args):
    cfg = resolve_config(args)
    seq = open_sequence(cfg)
    pc = proj_config(cfg)
    out = out_dir(cfg)
    for i in range(len(seq)):
        image = project(seq.scan(i), pc)
        save_range_image(image, out / f"{frame_name(i)}.rimg")
        if args.png:
            save_png(image, out / f"{frame_name(i)}.png")
        print(f"frame {frame_name(i)}: {pc.height}x{pc.width} valid={int(image.valid.sum())}")
    return 0


def cmd_residual(args):
    cfg = resolve_config(args)
    seq = open_sequence(cfg)
    pc = proj_config(cfg)
    stride = distribution(cfg).preset(cfg["stride_preset"])
    out = out_dir(cfg)
    k = int(cfg["k"])
    frames = [f for f in range(len(seq)) if f >= k * stride]
    if not frames:
        raise CommandError(f"no frame has {k * stride} predecessors (k={k}, stride={stride})")
    for f in frames:
        _, stack = residual_stack(seq, f, k, stride, pc)
        save_residual(stack, out / f"{frame_name(f)}.res")
        print(f"frame {frame_name(f)}: stride={stride} mean={float(stack.maps.mean()):.6f}")
    return 0


def cmd_augment_sample(args):
    cfg = resolve_config(args)
    dist = distribution(cfg)
    seed = int(cfg["seed"])
    print(f"seed: {seed}")
    rng = np.random.default_rng(seed)
    draws = [sample_stride(dist, rng) for _ in range(args.n)]
    counts = {s: draws.count(s) for s in dist.strides}
    for s, p in zip(dist.strides, dist.probabilities):
        print(f"stride {s}: target={p:.4f} freq={counts[s] / args.n:.4f} count={counts[s]}")
    if args.show:
        print("draws: " + " ".join(str(d) for d in draws))
    return 0


def cmd_synth_gen(args):
    cfg = resolve_config(args)
    if args.scene:
        scene = SceneConfig.from_json(Path(args.scene).read_text())
    else:
        scene = PRESETS[args.preset](frames=args.frames)
    if args.seed is not None:
        scene.seed = int(args.seed)
    if not cfg["root"]:
        raise CommandError("--root is required")
    print(f"seed: {scene.seed}")
    frames = gen_sequence(scene, args.frames)
    seq_dir = write_sequence(cfg["root"], cfg["sequence"], [f[0] for f in frames],
                             [f[1] for f in frames], [f[2] for f in frames])
    (seq_dir / "scene.json").write_text(scene.to_json() + "\n")
    print(f"wrote {len(frames)} frames to {seq_dir}")
    return 0


def run_baseline_eval(cfg):
    """Residual-threshold baseline over every frame with enough history."""
    seq = open_sequence(cfg)
    if not seq.has_labels:
        raise CommandError(f"sequence {cfg['sequence']} has no labels")
    pc = proj_config(cfg)
    dist = distribution(cfg)
    stride = dist.preset(cfg["stride_preset"])
    k = int(cfg["k"])
    threshold = float(cfg["threshold"])
    class_map = ClassMap.from_file(cfg["classmap"]) if cfg["classmap"] else ClassMap.default()
    frames = [f for f in range(len(seq)) if f >= k * stride]
    if not frames:
        raise InsufficientHistoryError(
            f"sequence has {len(seq)} frames; k={k}, stride={stride} needs more than {k * stride}"
        )
    preds, truths = [], []
    for f in frames:
        image, stack = residual_stack(seq, f, k, stride, pc)
        pixel_pred = baseline_segment(stack, image, threshold)
        preds.append(back_project(pixel_pred, image, default=0))
        truths.append(remap_labels(seq.labels(f), class_map))
    config = {
        "sequence": str(cfg["sequence"]),
        "k": k,
        "stride": stride,
        "stride_preset": str(cfg["stride_preset"]),
        "strides": list(dist.strides),
        "probs": list(dist.probabilities),
        "threshold": threshold,
        "height": pc.height,
        "width": pc.width,
        "fov_up": pc.fov_up,
        "fov_down": pc.fov_down,
        "seed": int(cfg["seed"]),
        "frames": [frames[0], frames[-1]],
    }
    return evaluate_sequence(preds, truths, config)


def cmd_baseline_eval(args):
    cfg = resolve_config(args)
    print(f"seed: {cfg['seed']}")
    report = run_baseline_eval(cfg)
    text = report.to_text()
    if cfg["out"]:
        out = out_dir(cfg)
        (out / "report.txt").write_text(text)
        (out / "report.json").write_text(report.to_json())
    sys.stdout.write(text)
    return 0


def cmd_block_check(args):
    seed = args.seed if args.seed is not None else DEFAULTS["seed"]
    print(f"seed: {seed}")
    results = run_block_checks(seed=seed, instances=args.instances, fault=args.inject_fault)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed checks: " + ", ".join(failed))
        return 1
    return 0


def _add_common(p, *flags):
    if "data" in flags:
        p.add_argument("--root", help="dataset root containing sequences/")
        p.add_argument("--sequence", help="sequence id (default 00)")
    if "proj" in flags:
        p.add_argument("--height", type=int)
        p.add_argument("--width", type=int)
        p.add_argument("--fov-up", dest="fov_up", type=float)
        p.add_argument("--fov-down", dest="fov_down", type=float)
    if "residual" in flags:
        p.add_argument("--k", type=int, help="residual maps per frame (default 8)")
        p.add_argument("--stride-preset", dest="stride_preset", choices=["1", "max"])
    if "dist" in flags:
        p.add_argument("--strides", help="comma separated frame strides")
        p.add_argument("--probs", help="comma separated stride probabilities")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config", help="JSON file of defaults; flags take precedence")


def build_parser():
    parser = argparse.ArgumentParser(prog="rangemos", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="write range images for every frame")
    _add_common(p, "data", "proj")
    p.add_argument("--png", action="store_true", help="also write grayscale range previews")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("residual", help="write residual stacks at a stride preset")
    _add_common(p, "data", "proj", "residual", "dist")
    p.set_defaults(func=cmd_residual)

    p = sub.add_parser("augment-sample", help="draw training strides from a distribution")
    _add_common(p, "dist")
    p.add_argument("-n", type=int, default=100000, help="number of draws")
    p.add_argument("--show", action="store_true", help="print every draw")
    p.set_defaults(func=cmd_augment_sample)

    p = sub.add_parser("synth-gen", help="generate a synthetic KITTI-layout sequence")
    _add_common(p, "data")
    p.add_argument("--preset", choices=sorted(PRESETS), default="moving_box")
    p.add_argument("--scene", help="scene JSON file (overrides --preset)")
    p.add_argument("--frames", type=int, default=30)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("baseline-eval", help="evaluate the residual-threshold baseline")
    _add_common(p, "data", "proj", "residual", "dist")
    p.add_argument("--threshold", type=float)
    p.add_argument("--classmap", help="class map file (default: bundled SemanticKITTI-MOS map)")
    p.set_defaults(func=cmd_baseline_eval)

    p = sub.add_parser("block-check", help="compare block kernels against their oracles")
    p.add_argument("--seed", type=int)
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--inject-fault", dest="inject_fault", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_block_check)
    return parser


def main(argv=None):
    level = os.environ.get("MOS_LOG", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(getattr(logging, level, None), int) else "WARNING",
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CommandError, InsufficientHistoryError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
