"""Command-line entry point: ``scalematch {detect,match,repeat,render,synth}``.

Every command writes its fully resolved configuration next to its results.
Passing that JSON back through ``--config`` reruns the command with the same
settings; flags given explicitly on the command line still take precedence.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from scalematch import __version__
from scalematch.errors import DecodeError, SchemaError, ScaleMatchError
from scalematch.evalbench import SCENE_KINDS, CropRegion, SyntheticScene, make_pair, sweep_repeatability, sweep_to_csv
from scalematch.imageio import read_image, write_png
from scalematch.matchengine import MatchConfig, match_one_to_many, prepare
from scalematch.report import build_report, render_detections, render_overlay, validate_report
from scalematch.scaledetect import DetectorParams, detect

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NO_MATCH = 3

DETECTOR_KEYS = ("sigma", "sigma_tilde", "alpha", "rel_threshold", "nms_radius")
MATCHER_KEYS = tuple(k for k in MatchConfig.__dataclass_fields__ if k != "seed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_scales(text: str) -> list[float]:
    """``"1..8"`` (inclusive integer range) or a comma list such as ``"1,3,5"``."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError
            vals = [float(k) for k in range(lo_i, hi_i + 1)]
        else:
            vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid scale list {text!r}; use e.g. 1..8 or 1,3,5") from None
    if not vals or any(not math.isfinite(v) or v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"scales must be >= 1, got {text!r}")
    return vals


def _scale_list(value) -> list[float]:
    if isinstance(value, list):
        return [float(x) for x in value]
    return parse_scales(value)


def _add_detector_flags(p, scales=True):
    g = p.add_argument_group("detector")
    if scales:
        g.add_argument("--scales", type=parse_scales, default=parse_scales("1..8"), help="e.g. 1..8 or 1,3,5 (default 1..8)")
    g.add_argument("--sigma", type=float, default=1.0, help="derivation scale (default 1)")
    g.add_argument("--sigma-tilde", dest="sigma_tilde", type=float, default=2.0, help="integration scale (default 2)")
    g.add_argument("--alpha", type=float, default=0.04)
    g.add_argument("--rel-threshold", dest="rel_threshold", type=float, default=0.01)
    g.add_argument("--nms-radius", dest="nms_radius", type=float, default=3.0)


def _add_matcher_flags(p):
    d = MatchConfig()
    g = p.add_argument_group("matcher")
    g.add_argument("--d-max", dest="d_max", type=float, default=d.d_max)
    g.add_argument("--support-radius", dest="support_radius", type=float, default=d.support_radius)
    g.add_argument("--min-support", dest="min_support", type=int, default=d.min_support)
    g.add_argument("--consistency-tol", dest="consistency_tol", type=float, default=d.consistency_tol)
    g.add_argument("--model", choices=("similarity", "affine", "homography"), default=d.model)
    g.add_argument("--inlier-tol", dest="inlier_tol", type=float, default=d.inlier_tol)
    g.add_argument("--confidence", type=float, default=d.confidence)
    g.add_argument("--max-iterations", dest="max_iterations", type=int, default=d.max_iterations)
    g.add_argument("--ssd-cutoff", dest="ssd_cutoff", type=float, default=d.ssd_cutoff)
    g.add_argument("--ssd-half-window", dest="ssd_half_window", type=int, default=d.ssd_half_window)
    g.add_argument("--descriptor-sigma", dest="descriptor_sigma", type=float, default=d.descriptor_sigma)
    g.add_argument("--photometric", choices=("joint", "independent"), default=d.photometric)


def _add_scene_flags(p, seed_default=0):
    p.add_argument("--scene", choices=SCENE_KINDS, default="textured-noise")
    p.add_argument("--size", type=int, default=256, help="scene size in low-resolution pixels")
    p.add_argument("--scene-seed", dest="scene_seed", type=int, default=seed_default)
    p.add_argument("--square", type=int, default=8, help="checkerboard square size")
    p.add_argument("--psf", type=float, default=0.5, help="camera blur in output pixels")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scalematch", description="Match a high-resolution image against a low-resolution one.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("detect", help="scale-adapted Harris points at several scales")
    p.add_argument("--config", type=Path, help="JSON config echoed by a previous run")
    p.add_argument("--image", type=Path)
    p.add_argument("--out", type=Path, help="point-set JSON path")
    p.add_argument("--annotate", type=Path, help="optional PNG with a cross per point")
    p.add_argument("--descriptors", action="store_true", help="attach 7-element descriptors to each point")
    _add_detector_flags(p)

    p = sub.add_parser("match", help="recover the transform from a high- to a low-resolution image")
    p.add_argument("--config", type=Path)
    p.add_argument("--high", type=Path)
    p.add_argument("--low", type=Path)
    p.add_argument("--out", type=Path, help="match-report JSON path")
    p.add_argument("--overlay", type=Path, help="overlay PNG path")
    p.add_argument("--seed", type=int, default=None, help="RANSAC seed (required)")
    _add_detector_flags(p)
    _add_matcher_flags(p)

    p = sub.add_parser("repeat", help="repeatability sweep over zoom factors")
    p.add_argument("--config", type=Path)
    p.add_argument("--image", type=Path, help="low-resolution source image (default: synthetic scene)")
    _add_scene_flags(p)
    p.add_argument("--factors", type=parse_scales, default=parse_scales("1..6"))
    p.add_argument("--detectors", default="standard,adapted")
    p.add_argument("--epsilon", type=float, default=1.5)
    p.add_argument("--high-size", dest="high_size", type=int, default=192)
    p.add_argument("--theta-deg", dest="theta_deg", type=float, default=0.0)
    p.add_argument("--out", type=Path, help="CSV path")
    p.add_argument("--config-out", dest="config_out", type=Path, help="config echo path (default: <out>.config.json)")
    _add_detector_flags(p, scales=False)

    p = sub.add_parser("render", help="re-render the overlay of a saved match report")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--high", type=Path, required=True)
    p.add_argument("--low", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("synth", help="write a synthetic high/low pair with known ground truth")
    p.add_argument("--config", type=Path)
    _add_scene_flags(p)
    p.add_argument("--factor", type=float, default=5.0)
    p.add_argument("--theta-deg", dest="theta_deg", type=float, default=0.0)
    p.add_argument("--crop-u", dest="crop_u", type=float, default=None, help="crop centre (default: image centre)")
    p.add_argument("--crop-v", dest="crop_v", type=float, default=None)
    p.add_argument("--high-size", dest="high_size", type=int, default=480)
    p.add_argument("--out-high", dest="out_high", type=Path)
    p.add_argument("--out-low", dest="out_low", type=Path)
    p.add_argument("--out-truth", dest="out_truth", type=Path)
    return parser


# --- config plumbing -------------------------------------------------------

def _path(x):
    return None if x is None else str(x)


def _flatten_config(cfg: dict) -> dict:
    """Turn an echoed (nested) config into argparse destination names."""
    if not isinstance(cfg, dict):
        raise SchemaError("", "config must be a JSON object")
    if "config" in cfg and isinstance(cfg["config"], dict):
        cfg = cfg["config"]  # a full match report
    flat = {}
    for key, value in cfg.items():
        if key in ("detector", "matcher", "paths", "scene") and isinstance(value, dict):
            flat.update(value)
        elif key != "command":
            flat[key] = value
    if "scales" in flat:
        try:
            flat["scales"] = _scale_list(flat["scales"])
        except argparse.ArgumentTypeError as exc:
            raise SchemaError("/scales", str(exc)) from None
    if "factors" in flat:
        try:
            flat["factors"] = _scale_list(flat["factors"])
        except argparse.ArgumentTypeError as exc:
            raise SchemaError("/factors", str(exc)) from None
    if isinstance(flat.get("detectors"), list):
        flat["detectors"] = ",".join(flat["detectors"])
    return flat


def _load_json(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"{path}: invalid JSON: {exc}") from exc


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is not None:
        flat = _flatten_config(_load_json(args.config))
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(flat) - known)
        if unknown:
            raise SchemaError(f"/{unknown[0]}", "unknown config field")
        sub.set_defaults(**flat)
        args = parser.parse_args(argv)
    return args


def _detector(args) -> DetectorParams:
    return DetectorParams(**{k: getattr(args, k) for k in DETECTOR_KEYS})


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def _require_args(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"scalematch {args.command}: error: missing required option(s): {', '.join('--' + n.replace('_', '-') for n in missing)}")


# --- commands --------------------------------------------------------------

def cmd_detect(args) -> int:
    _require_args(args, "image", "out")
    params = _detector(args)
    img = read_image(args.image)
    config = {
        "command": "detect",
        "paths": {"image": _path(args.image), "out": _path(args.out), "annotate": _path(args.annotate)},
        "detector": params.to_dict(),
        "scales": list(args.scales),
        "descriptors": bool(args.descriptors),
    }
    sets = []
    for s in args.scales:
        if args.descriptors:
            prep = prepare(img, params, s)
            for p, d in zip(prep.points, prep.descriptors):
                p.descriptor = d
            sets.append(prep.points)
        else:
            sets.append(detect(img, params, s))
    _write_json(args.out, {"point_sets": [ps.to_dict() for ps in sets], "config": config})
    if args.annotate is not None:
        write_png(args.annotate, render_detections(img, sets))
    return EXIT_OK


def cmd_match(args) -> int:
    _require_args(args, "high", "low", "out")
    if args.seed is None:
        raise UsageError("scalematch match: error: --seed is required (no hidden entropy)")
    params = _detector(args)
    mcfg = MatchConfig(seed=args.seed, **{k: getattr(args, k) for k in MATCHER_KEYS})
    high = read_image(args.high)
    low = read_image(args.low)
    config = {
        "command": "match",
        "paths": {"high": _path(args.high), "low": _path(args.low), "out": _path(args.out), "overlay": _path(args.overlay)},
        "detector": params.to_dict(),
        "matcher": {k: v for k, v in mcfg.to_dict().items() if k != "seed"},
        "scales": list(args.scales),
        "seed": args.seed,
    }
    result = match_one_to_many(high, low, args.scales, params, mcfg)
    report = build_report(result, config, args.seed)
    _write_json(args.out, report)
    if args.overlay is not None:
        # render from the serialised report so `render` reproduces it exactly
        parsed = json.loads(args.out.read_text())
        write_png(args.overlay, render_overlay(parsed, high, low))
    for row in report["scales"]:
        f = row["estimated_factor"]
        print(
            f"s={row['s']:g} points={row['n_points']} initial={row['n_initial']} inliers={row['n_inliers']} "
            f"factor={'-' if f is None else f'{f:.3f}'} {row['diagnostic'] or ''}".rstrip()
        )
    if not result.matched:
        print("no scale reached consensus", file=sys.stderr)
        return EXIT_NO_MATCH
    print(f"best scale {result.best_scale:g}: factor {result.factor:.4f}, theta {math.degrees(result.theta):.2f} deg")
    return EXIT_OK


def cmd_repeat(args) -> int:
    _require_args(args, "out")
    params = _detector(args)
    detectors = tuple(d.strip() for d in args.detectors.split(",") if d.strip())
    scene = None
    if args.image is not None:
        source = read_image(args.image)
    else:
        scene = SyntheticScene(args.scene, args.size, args.scene_seed, args.square, args.psf)
        source = scene
    rows = sweep_repeatability(
        source, args.factors, detectors, params, args.epsilon, args.high_size, math.radians(args.theta_deg)
    )
    args.out.write_text(sweep_to_csv(rows))
    config = {
        "command": "repeat",
        "paths": {"image": _path(args.image), "out": _path(args.out)},
        "detector": params.to_dict(),
        "factors": list(args.factors),
        "detectors": list(detectors),
        "epsilon": args.epsilon,
        "high_size": args.high_size,
        "theta_deg": args.theta_deg,
    }
    if scene is not None:
        config["scene"] = {"scene": scene.kind, "size": scene.size, "scene_seed": scene.seed, "square": scene.square, "psf": scene.psf}
    config_out = args.config_out or args.out.with_name(args.out.name + ".config.json")
    _write_json(config_out, config)
    return EXIT_OK


def cmd_render(args) -> int:
    doc = _load_json(args.report)
    validate_report(doc)
    high = read_image(args.high)
    low = read_image(args.low)
    write_png(args.out, render_overlay(doc, high, low))
    return EXIT_OK


def cmd_synth(args) -> int:
    _require_args(args, "out_high", "out_low")
    scene = SyntheticScene(args.scene, args.size, args.scene_seed, args.square, args.psf)
    c = (args.size - 1) / 2.0
    crop = CropRegion(c if args.crop_u is None else args.crop_u, c if args.crop_v is None else args.crop_v, args.high_size, args.high_size)
    high, low, truth = make_pair(scene, args.factor, math.radians(args.theta_deg), crop)
    write_png(args.out_high, high)
    write_png(args.out_low, low)
    if args.out_truth is not None:
        _write_json(args.out_truth, {
            "high_to_low": {"h": truth.h, "theta_deg": math.degrees(truth.theta), "a": truth.a, "b": truth.b},
            "factor": args.factor,
            "config": {
                "command": "synth",
                "scene": {"scene": scene.kind, "size": scene.size, "scene_seed": scene.seed, "square": scene.square, "psf": scene.psf},
                "factor": args.factor, "theta_deg": args.theta_deg, "crop_u": crop.cu, "crop_v": crop.cv,
                "high_size": args.high_size,
                "paths": {"out_high": _path(args.out_high), "out_low": _path(args.out_low), "out_truth": _path(args.out_truth)},
            },
        })
    return EXIT_OK


COMMANDS = {"detect": cmd_detect, "match": cmd_match, "repeat": cmd_repeat, "render": cmd_render, "synth": cmd_synth}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DecodeError) as exc:
        print(f"scalematch: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SchemaError, ScaleMatchError, ValueError) as exc:
        print(f"scalematch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
