"""JSON match reports and overlay rendering.

The overlay is always drawn from a parsed report, so re-rendering a saved
report reproduces the image written at match time byte for byte.
"""

from __future__ import annotations

import math
import numbers

import numpy as np
from PIL import Image, ImageDraw

from scalematch.errors import SchemaError
from scalematch.imagecore import GrayImage, sample_bilinear
from scalematch.matchengine import MatchResult
from scalematch.transforms import MINIMAL_MATCHES, TransformModel

REPORT_VERSION = 1


def _num(x):
    return None if x is None else float(x)


def transform_to_dict(model: TransformModel) -> dict:
    sim = model.similarity()
    return {
        "kind": model.kind,
        "h": sim.h,
        "theta_deg": math.degrees(sim.theta),
        "a": sim.a,
        "b": sim.b,
        "matrix": [[float(x) for x in row] for row in model.matrix],
    }


def build_report(result: MatchResult, config: dict, seed: int) -> dict:
    """Report dictionary following the documented match-report schema."""
    doc = {
        "version": REPORT_VERSION,
        "status": "match" if result.matched else "no-match",
        "scales": [
            {
                "s": r.scale,
                "estimated_factor": _num(r.estimated_factor),
                "n_points": r.n_points,
                "n_initial": r.n_initial,
                "n_inliers": r.n_inliers,
                "outlier_fraction": _num(r.outlier_fraction),
                "theta_deg": None if r.theta is None else math.degrees(r.theta),
                "diagnostic": r.diagnostic,
            }
            for r in result.reports
        ],
        "best_scale": result.best_scale,
        "total_factor": result.factor,
        "transform": None,
        "inliers": [],
        "seed": seed,
        "config": config,
    }
    if result.matched:
        doc["transform"] = transform_to_dict(result.model)
        hp = result.high_points.coords()
        lp = result.low_points.coords()
        doc["inliers"] = [
            {"high": [float(hp[m.index_high][0]), float(hp[m.index_high][1])],
             "low": [float(lp[m.index_low][0]), float(lp[m.index_low][1])]}
            for m in result.inliers
        ]
    return doc


def _require(cond: bool, pointer: str, msg: str) -> None:
    if not cond:
        raise SchemaError(pointer, msg)


def _is_num(x) -> bool:
    return isinstance(x, numbers.Real) and not isinstance(x, bool) and math.isfinite(x)


def validate_report(doc) -> None:
    """Raise :class:`SchemaError` pointing at the first malformed field."""
    _require(isinstance(doc, dict), "", "report must be a JSON object")
    _require("scales" in doc, "/scales", "missing field")
    _require(isinstance(doc["scales"], list), "/scales", "must be an array")
    for i, row in enumerate(doc["scales"]):
        base = f"/scales/{i}"
        _require(isinstance(row, dict), base, "must be an object")
        for key in ("s", "n_points", "n_initial", "n_inliers"):
            _require(key in row, f"{base}/{key}", "missing field")
            _require(_is_num(row[key]), f"{base}/{key}", "must be a number")
        for key in ("estimated_factor", "outlier_fraction"):
            _require(key in row, f"{base}/{key}", "missing field")
            _require(row[key] is None or _is_num(row[key]), f"{base}/{key}", "must be a number or null")
    _require("best_scale" in doc, "/best_scale", "missing field")
    _require(doc["best_scale"] is None or _is_num(doc["best_scale"]), "/best_scale", "must be a number or null")
    _require("seed" in doc, "/seed", "missing field")
    _require(isinstance(doc["seed"], int) and not isinstance(doc["seed"], bool), "/seed", "must be an integer")
    _require("transform" in doc, "/transform", "missing field")
    t = doc["transform"]
    if t is not None:
        _require(isinstance(t, dict), "/transform", "must be an object or null")
        _require(t.get("kind") in MINIMAL_MATCHES, "/transform/kind", f"must be one of {sorted(MINIMAL_MATCHES)}")
        _require("matrix" in t, "/transform/matrix", "missing field")
        m = t["matrix"]
        _require(isinstance(m, list) and len(m) == 3, "/transform/matrix", "must be a 3x3 array")
        for r, row in enumerate(m):
            _require(isinstance(row, list) and len(row) == 3, f"/transform/matrix/{r}", "must have 3 entries")
            for c, x in enumerate(row):
                _require(_is_num(x), f"/transform/matrix/{r}/{c}", "must be a finite number")
        for key in ("h", "theta_deg", "a", "b"):
            if key in t:
                _require(_is_num(t[key]), f"/transform/{key}", "must be a finite number")
    inliers = doc.get("inliers", [])
    _require(isinstance(inliers, list), "/inliers", "must be an array")
    for i, m in enumerate(inliers):
        _require(isinstance(m, dict), f"/inliers/{i}", "must be an object")
        for key in ("high", "low"):
            pt = m.get(key)
            _require(
                isinstance(pt, list) and len(pt) == 2 and all(_is_num(x) for x in pt),
                f"/inliers/{i}/{key}",
                "must be a [u, v] pair of numbers",
            )


def model_from_report(doc) -> TransformModel | None:
    t = doc["transform"]
    if t is None:
        return None
    try:
        return TransformModel(t["kind"], np.array(t["matrix"], dtype=np.float64))
    except ValueError as exc:
        raise SchemaError("/transform/matrix", str(exc)) from exc


def warp_model(img: GrayImage, model: TransformModel, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear resampling of ``img`` onto a grid related by ``x_out = model(x_img)``."""
    vv, uu = np.mgrid[0:height, 0:width].astype(np.float64)
    src = model.inverse().apply_points(np.column_stack([uu.ravel(), vv.ravel()]))
    vals, valid = sample_bilinear(img.data, src[:, 0], src[:, 1])
    return vals.reshape(height, width), valid.reshape(height, width)


def _cross(draw: ImageDraw.ImageDraw, u: float, v: float, r: float, colour) -> None:
    draw.line([(u - r, v), (u + r, v)], fill=colour)
    draw.line([(u, v - r), (u, v + r)], fill=colour)


def render_overlay(doc: dict, high: GrayImage, low: GrayImage) -> np.ndarray:
    """RGB uint8 overlay: the high image mapped onto the low one at 50 % opacity, inliers marked."""
    validate_report(doc)
    base = np.clip(low.data, 0.0, 1.0)
    rgb = np.stack([base, base, base], axis=-1)
    model = model_from_report(doc)
    if model is not None:
        warped, valid = warp_model(high, model, low.width, low.height)
        warped = np.clip(warped, 0.0, 1.0)
        tint = np.stack([warped, warped * 0.6, warped * 0.6], axis=-1)
        rgb[valid] = 0.5 * rgb[valid] + 0.5 * tint[valid]
    out = Image.fromarray(np.round(rgb * 255.0).astype(np.uint8))
    draw = ImageDraw.Draw(out)
    for m in doc.get("inliers", []):
        lu, lv = m["low"]
        _cross(draw, lu, lv, 3, (0, 255, 0))
        if model is not None:
            pu, pv = model.apply_points([m["high"]])[0]
            draw.point((float(pu), float(pv)), fill=(255, 255, 0))
    return np.array(out)


def render_detections(img: GrayImage, point_sets) -> np.ndarray:
    """RGB uint8 image with a cross per detected point, arm length proportional to scale."""
    base = np.clip(img.data, 0.0, 1.0)
    out = Image.fromarray(np.round(np.stack([base] * 3, axis=-1) * 255.0).astype(np.uint8))
    draw = ImageDraw.Draw(out)
    palette = [(255, 0, 0), (0, 200, 0), (0, 128, 255), (255, 200, 0), (255, 0, 255), (0, 255, 255), (255, 128, 0), (128, 0, 255)]
    for k, ps in enumerate(point_sets):
        colour = palette[k % len(palette)]
        for p in ps:
            _cross(draw, p.u, p.v, 2.0 * ps.scale, colour)
    return np.array(out)
