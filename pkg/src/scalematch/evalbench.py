"""Synthetic scenes with exact ground truth, and detector repeatability sweeps.

A scene is a continuous intensity function on the plane, in units of base
pixels. Rendering samples it through a camera with a Gaussian point spread
function, so a scene rendered at two resolutions behaves like two genuine
photographs rather than one image and its interpolated copy. Noise and blob
scenes are sums of Gaussians, which lets the camera blur be applied in closed
form; the checkerboard is box-filtered with 4x4 supersampling.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from scalematch.errors import ParameterError
from scalematch.imagecore import GrayImage, smooth
from scalematch.scaledetect import DetectorParams, detect
from scalematch.transforms import SimilarityTransform

SCENE_KINDS = ("checkerboard", "random-blobs", "textured-noise")

# textured-noise octaves: lattice spacing in base pixels, coarse to fine
NOISE_SPACINGS = tuple(16.0 / 2**k for k in range(8))
NOISE_WIDTH = 0.6  # blob width as a fraction of the lattice spacing
NOISE_EXPONENT = 0.75  # octave amplitude ~ spacing**NOISE_EXPONENT
NOISE_CUTOFF = 0.05  # octaves attenuated below this factor by the camera are dropped


@dataclass(frozen=True)
class SyntheticScene:
    kind: str = "textured-noise"
    size: int = 256
    seed: int = 0
    square: int = 8
    psf: float = 0.5  # camera blur, in pixels of the rendered image

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ParameterError(f"unknown scene kind {self.kind!r}")
        if self.size < 64:
            raise ParameterError(f"scene size must be >= 64, got {self.size}")
        if self.square < 1:
            raise ParameterError(f"checkerboard square must be >= 1, got {self.square}")

    @property
    def ground_truth_corners(self) -> np.ndarray | None:
        """Interior checkerboard corners (N x 2, u v) in base pixel coordinates."""
        if self.kind != "checkerboard":
            return None
        n = self.size // self.square
        k = np.arange(1, n) * self.square - 0.5
        # corners must have a square on every side
        k = k[k < self.size - 1]
        uu, vv = np.meshgrid(k, k)
        return np.column_stack([uu.ravel(), vv.ravel()])


def _checker(x, y, square):
    return ((np.floor((x + 0.5) / square) + np.floor((y + 0.5) / square)) % 2).astype(np.float64)


def _render_checker(scene, to_scene, u, v):
    acc = np.zeros_like(u)
    offs = (np.arange(4) + 0.5) / 4 - 0.5
    for dy in offs:
        for dx in offs:
            x, y = to_scene.apply(u + dx, v + dy)
            acc += _checker(x, y, scene.square)
    return acc / 16.0


@lru_cache(maxsize=32)
def _noise_lattice(seed: int, size: int, octave: int):
    spacing = NOISE_SPACINGS[octave]
    rng = np.random.default_rng([seed, octave, size])
    origin = -rng.uniform(0, spacing) - 8 * spacing - 16
    n = int(math.ceil((size + 2 * (8 * spacing + 16)) / spacing)) + 2
    weights = rng.standard_normal((n, n))
    weights.setflags(write=False)
    return origin, weights


def _octave_direct(x, y, origin, weights, spacing, width, amp):
    """Sum of lattice Gaussians of std ``width`` evaluated at scattered (x, y)."""
    gx = (x - origin) / spacing
    gy = (y - origin) / spacing
    ix = np.floor(gx).astype(np.intp)
    iy = np.floor(gy).astype(np.intp)
    reach = int(math.ceil(3.0 * width / spacing))
    n = weights.shape[0]
    out = np.zeros_like(x)
    wl = width / spacing
    kx = [np.exp(-((gx - (ix + d)) ** 2) / (2 * wl * wl)) for d in range(-reach, reach + 2)]
    ky = [np.exp(-((gy - (iy + d)) ** 2) / (2 * wl * wl)) for d in range(-reach, reach + 2)]
    for a, dy in enumerate(range(-reach, reach + 2)):
        jy = np.clip(iy + dy, 0, n - 1)
        for b, dx in enumerate(range(-reach, reach + 2)):
            jx = np.clip(ix + dx, 0, n - 1)
            out += weights[jy, jx] * (kx[b] * ky[a])
    return out * amp


def _octave_gridded(x, y, origin, weights, spacing, width, amp):
    """Same sum via a filtered lattice; used once the blur spans several lattice cells."""
    gx = (x - origin) / spacing
    gy = (y - origin) / spacing
    wl = width / spacing
    pad = int(math.ceil(4 * wl)) + 3
    n = weights.shape[0]
    x0 = max(int(np.floor(gx.min())) - pad, 0)
    x1 = min(int(np.ceil(gx.max())) + pad + 1, n)
    y0 = max(int(np.floor(gy.min())) - pad, 0)
    y1 = min(int(np.ceil(gy.max())) + pad + 1, n)
    sub = weights[y0:y1, x0:x1]
    k = np.arange(-int(4 * wl) - 1, int(4 * wl) + 2)
    norm = np.exp(-(k * k) / (2 * wl * wl)).sum() ** 2
    grid = gaussian_filter(sub, wl, mode="constant", truncate=4.0) * norm
    vals = map_coordinates(grid, [gy - y0, gx - x0], order=3, mode="nearest")
    return vals * amp


def _noise_scale() -> float:
    var = sum((sp**NOISE_EXPONENT) ** 2 * math.pi * NOISE_WIDTH**2 for sp in NOISE_SPACINGS)
    return 0.18 / math.sqrt(var)


def _render_noise(scene, to_scene, u, v, psf_scene):
    x, y = to_scene.apply(u, v)
    out = np.full_like(x, 0.5)
    base = _noise_scale()
    for o, spacing in enumerate(NOISE_SPACINGS):
        w = NOISE_WIDTH * spacing
        weff = math.sqrt(w * w + psf_scene * psf_scene)
        att = (w / weff) ** 2
        if att < NOISE_CUTOFF:
            continue
        origin, weights = _noise_lattice(scene.seed, scene.size, o)
        amp = base * spacing**NOISE_EXPONENT * att
        if weff > 2.0 * spacing:
            out += _octave_gridded(x, y, origin, weights, spacing, weff, amp)
        else:
            out += _octave_direct(x, y, origin, weights, spacing, weff, amp)
    return out


@lru_cache(maxsize=32)
def _blobs(seed: int, size: int):
    rng = np.random.default_rng([seed, 7, size])
    n = max(1, size * size // 40)
    pos = rng.uniform(-8, size + 8, (n, 2))
    width = np.exp(rng.uniform(np.log(1.0), np.log(6.0), n))
    amp = rng.choice([-1.0, 1.0], n) * rng.uniform(0.1, 0.3, n)
    return pos, width, amp


def _render_blobs(scene, to_scene, u, v, psf_scene):
    x, y = to_scene.apply(u, v)
    out = np.full_like(x, 0.5)
    pos, width, amp = _blobs(scene.seed, scene.size)
    weff = np.sqrt(width**2 + psf_scene**2)
    att = (width / weff) ** 2
    flat = out.ravel()
    xf, yf = x.ravel(), y.ravel()
    # bucket samples on a coarse grid so each blob touches only nearby samples
    cell = 16.0
    cx = np.floor(xf / cell).astype(np.intp)
    cy = np.floor(yf / cell).astype(np.intp)
    key = cy * 100003 + cx
    order = np.argsort(key, kind="stable")
    skey = key[order]
    for k in range(len(pos)):
        reach = 3.0 * weff[k]
        bx0 = int(math.floor((pos[k, 0] - reach) / cell))
        bx1 = int(math.floor((pos[k, 0] + reach) / cell))
        by0 = int(math.floor((pos[k, 1] - reach) / cell))
        by1 = int(math.floor((pos[k, 1] + reach) / cell))
        for by in range(by0, by1 + 1):
            lo = np.searchsorted(skey, by * 100003 + bx0, side="left")
            hi = np.searchsorted(skey, by * 100003 + bx1, side="right")
            if hi <= lo:
                continue
            idx = order[lo:hi]
            d2 = (xf[idx] - pos[k, 0]) ** 2 + (yf[idx] - pos[k, 1]) ** 2
            flat[idx] += amp[k] * att[k] * np.exp(-d2 / (2 * weff[k] ** 2))
    return flat.reshape(x.shape)


def render(
    scene: SyntheticScene,
    to_scene: SimilarityTransform,
    width: int,
    height: int,
    psf: float | None = None,
) -> GrayImage:
    """Render ``scene`` on a ``width`` x ``height`` grid whose pixel (u, v) sees scene point ``to_scene(u, v)``.

    ``psf`` is the camera blur in scene units; by default it is ``scene.psf``
    output pixels.
    """
    psf_scene = scene.psf * to_scene.h if psf is None else float(psf)
    vv, uu = np.mgrid[0:height, 0:width].astype(np.float64)
    if scene.kind == "checkerboard":
        data = _render_checker(scene, to_scene, uu, vv)
    elif scene.kind == "textured-noise":
        data = _render_noise(scene, to_scene, uu, vv, psf_scene)
    else:
        data = _render_blobs(scene, to_scene, uu, vv, psf_scene)
    return GrayImage(data)


def generate(scene: SyntheticScene) -> GrayImage:
    return render(scene, SimilarityTransform.identity(), scene.size, scene.size)


@dataclass(frozen=True)
class CropRegion:
    """Centre (in low-resolution pixels) and size (in high-resolution pixels) of the zoomed view."""

    cu: float
    cv: float
    width: int
    height: int


def pair_truth(factor: float, theta: float, crop: CropRegion) -> SimilarityTransform:
    """Map from high-resolution pixels to low-resolution pixels for a view centred on the crop."""
    rot = SimilarityTransform(1.0 / factor, theta, 0.0, 0.0)
    # high-image centre lands on the crop centre
    hc = ((crop.width - 1) / 2.0, (crop.height - 1) / 2.0)
    ou, ov = rot.apply(hc[0], hc[1])
    return SimilarityTransform(1.0 / factor, theta, crop.cu - float(ou), crop.cv - float(ov))


def make_pair(source, factor: float, theta: float, crop: CropRegion):
    """Build (high, low, truth) where ``truth`` maps high-image pixels to low-image pixels.

    ``source`` is a :class:`SyntheticScene`, re-rendered at the finer sampling so
    the high image holds genuine detail, or a :class:`GrayImage`, in which case
    the view is resampled from it with a cubic spline (anti-aliased when
    ``factor < 1``).
    """
    if not factor > 0:
        raise ParameterError(f"zoom factor must be > 0, got {factor}")
    truth = pair_truth(factor, theta, crop)
    low = generate(source) if isinstance(source, SyntheticScene) else source
    corners = np.array([[0, 0], [crop.width - 1, 0], [0, crop.height - 1], [crop.width - 1, crop.height - 1]], float)
    mapped = truth.apply_points(corners)
    if (mapped.min() < 0) or (mapped[:, 0].max() > low.width - 1) or (mapped[:, 1].max() > low.height - 1):
        raise ParameterError("crop region falls outside the low-resolution image")
    if isinstance(source, SyntheticScene):
        high = render(source, truth, crop.width, crop.height)
    else:
        high = _resample(source, truth, crop.width, crop.height)
    return high, low, truth


def _resample(img: GrayImage, to_src: SimilarityTransform, width: int, height: int) -> GrayImage:
    src = img
    if to_src.h > 1:
        # shrinking: prefilter to the output sampling rate
        src = smooth(img, 0.5 * math.sqrt(to_src.h**2 - 1))
    vv, uu = np.mgrid[0:height, 0:width].astype(np.float64)
    x, y = to_src.apply(uu, vv)
    vals = map_coordinates(src.data, [y, x], order=3, mode="mirror")
    return GrayImage(vals)


@dataclass(frozen=True)
class RepeatabilityResult:
    scale_factor: float
    n_ref: int
    n_test: int
    n_repeated: int
    rate: float | None

    @property
    def defined(self) -> bool:
        return self.rate is not None


def _inside(pts: np.ndarray, shape) -> np.ndarray:
    if shape is None:
        return np.ones(len(pts), dtype=bool)
    h, w = shape
    return (pts[:, 0] >= 0) & (pts[:, 0] <= w - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1)


def _coords(points) -> np.ndarray:
    if hasattr(points, "coords"):
        return points.coords()
    if len(points) and hasattr(points[0], "u"):
        return np.array([[p.u, p.v] for p in points], dtype=np.float64)
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


def repeatability(
    ref_points,
    test_points,
    truth: SimilarityTransform,
    epsilon: float = 1.5,
    ref_shape=None,
    test_shape=None,
) -> RepeatabilityResult:
    """Fraction of points re-detected under ``truth`` (ref -> test), with tolerance in test pixels.

    Only points whose image under the map falls inside the other image count.
    Repeated points are paired one-to-one, greedily by increasing distance.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    ref = _coords(ref_points)
    test = _coords(test_points)
    ref_m = truth.apply_points(ref)
    test_m = truth.inverse().apply_points(test)
    keep_r = _inside(ref_m, test_shape)
    keep_t = _inside(test_m, ref_shape)
    ref_m = ref_m[keep_r]
    test_c = test[keep_t]
    n_ref, n_test = len(ref_m), len(test_c)
    factor = 1.0 / truth.h
    if min(n_ref, n_test) == 0:
        return RepeatabilityResult(factor, n_ref, n_test, 0, None)
    d = np.sqrt(((ref_m[:, None, :] - test_c[None, :, :]) ** 2).sum(-1))
    ii, jj = np.nonzero(d <= epsilon)
    order = np.lexsort((jj, ii, d[ii, jj]))
    used_r: set[int] = set()
    used_t: set[int] = set()
    for k in order:
        i, j = int(ii[k]), int(jj[k])
        if i in used_r or j in used_t:
            continue
        used_r.add(i)
        used_t.add(j)
    rep = len(used_r)
    return RepeatabilityResult(factor, n_ref, n_test, rep, rep / min(n_ref, n_test))


@dataclass(frozen=True)
class SweepRow:
    factor: float
    detector: str
    n_ref: int
    n_test: int
    repeated: int
    rate: float | None


def sweep_repeatability(
    source,
    factors,
    detectors=("standard", "adapted"),
    params: DetectorParams | None = None,
    epsilon: float = 1.5,
    high_size: int = 192,
    theta: float = 0.0,
) -> list[SweepRow]:
    """Repeatability of the standard and scale-adapted detectors across zoom factors.

    For each factor a high-resolution view of the scene centre is rendered. The
    standard detector runs at s=1 on both images; the adapted one runs at
    s=factor on the high image. Points of the high image are the reference and
    the tolerance is ``epsilon`` pixels of the high image at its detection
    scale, i.e. ``epsilon * s / factor`` low-image pixels.
    """
    params = params or DetectorParams()
    factors = [float(f) for f in factors]
    for f in factors:
        if not 1.0 <= f <= 8.0:
            raise ParameterError(f"zoom factors must lie in [1, 8], got {f}")
    for name in detectors:
        if name not in ("standard", "adapted"):
            raise ParameterError(f"unknown detector {name!r}")
    low = generate(source) if isinstance(source, SyntheticScene) else source
    low_pts = detect(low, params, 1.0)
    c = ((low.width - 1) / 2.0, (low.height - 1) / 2.0)
    rows = []
    for f in factors:
        crop = CropRegion(c[0], c[1], high_size, high_size)
        high, _, truth = make_pair(source, f, theta, crop)
        for name in detectors:
            s = f if name == "adapted" else 1.0
            high_pts = detect(high, params, s)
            res = repeatability(high_pts, low_pts, truth, epsilon * s / f, high.shape, low.shape)
            rows.append(SweepRow(f, name, res.n_ref, res.n_test, res.n_repeated, res.rate))
    return rows


def sweep_to_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["factor", "detector", "n_ref", "n_test", "repeated", "rate"])
    for r in rows:
        w.writerow([f"{r.factor:g}", r.detector, r.n_ref, r.n_test, r.repeated, "" if r.rate is None else f"{r.rate:.6f}"])
    return buf.getvalue()
