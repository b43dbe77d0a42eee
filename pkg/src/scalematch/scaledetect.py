"""Scale-adapted Harris interest points.

At detection scale ``s`` the gradients are taken at ``s*sigma``, their outer
products are integrated with a Gaussian of ``s*sigma_tilde`` and the matrix is
weighted by ``s**2``. Detected cornerness values carry an extra ``s**4`` so
that values are comparable between scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter

from scalematch.errors import ParameterError
from scalematch.imagecore import (
    GrayImage,
    gaussian_derivative_taps,
    convolve_separable,
    gradients,
    kernel_radius,
)


@dataclass(frozen=True)
class DetectorParams:
    sigma: float = 1.0
    sigma_tilde: float = 2.0
    alpha: float = 0.04
    rel_threshold: float = 0.01
    nms_radius: float = 3.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if not self.sigma_tilde > 0:
            raise ParameterError(f"sigma_tilde must be > 0, got {self.sigma_tilde}")
        if not 0 < self.alpha < 0.25:
            raise ParameterError(f"alpha must lie in (0, 0.25), got {self.alpha}")
        if not 0 < self.rel_threshold < 1:
            raise ParameterError(f"rel_threshold must lie in (0, 1), got {self.rel_threshold}")
        if not self.nms_radius > 0:
            raise ParameterError(f"nms_radius must be > 0, got {self.nms_radius}")

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "sigma_tilde": self.sigma_tilde,
            "alpha": self.alpha,
            "rel_threshold": self.rel_threshold,
            "nms_radius": self.nms_radius,
        }


@dataclass(frozen=True)
class AutoCorrField:
    """Entries of the symmetric 2x2 matrix [[a, b], [b, c]] at every pixel."""

    a: GrayImage
    b: GrayImage
    c: GrayImage
    scale: float


@dataclass
class InterestPoint:
    u: float
    v: float
    scale: float
    cornerness: float
    descriptor: np.ndarray | None = None

    def to_dict(self) -> dict:
        d = {"u": float(self.u), "v": float(self.v), "cornerness": float(self.cornerness)}
        if self.descriptor is not None:
            d["descriptor"] = [float(x) for x in self.descriptor]
        return d


@dataclass
class PointSet:
    """Points detected at one scale. ``diagnostic`` explains an empty result."""

    scale: float
    points: list[InterestPoint] = field(default_factory=list)
    diagnostic: str | None = None

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def coords(self) -> np.ndarray:
        return np.array([[p.u, p.v] for p in self.points], dtype=np.float64).reshape(-1, 2)

    def to_dict(self) -> dict:
        d = {"scale": self.scale, "points": [p.to_dict() for p in self.points]}
        if self.diagnostic:
            d["diagnostic"] = self.diagnostic
        return d


def autocorrelation_matrix(img: GrayImage, sigma: float, sigma_tilde: float, weight: float = 1.0) -> AutoCorrField:
    """weight * G(sigma_tilde) * [grad grad^T] with gradients at ``sigma``."""
    r = kernel_radius(sigma_tilde)
    if r >= min(img.shape) or kernel_radius(sigma) >= min(img.shape):
        raise ParameterError(
            f"integration kernel radius {r} does not fit a {img.width}x{img.height} image"
        )
    g = gradients(img, sigma)
    iu, iv = g.iu.data, g.iv.data
    w = gaussian_derivative_taps(sigma_tilde, 0)
    a = convolve_separable(GrayImage(iu * iu), w, w).data * weight
    b = convolve_separable(GrayImage(iu * iv), w, w).data * weight
    c = convolve_separable(GrayImage(iv * iv), w, w).data * weight
    return AutoCorrField(GrayImage(a), GrayImage(b), GrayImage(c), 1.0)


def autocorrelation(img: GrayImage, params: DetectorParams, s: float) -> AutoCorrField:
    if s < 1:
        raise ParameterError(f"scale must be >= 1, got {s}")
    f = autocorrelation_matrix(img, s * params.sigma, s * params.sigma_tilde, weight=s * s)
    return AutoCorrField(f.a, f.b, f.c, s)


def cornerness(field: AutoCorrField, alpha: float) -> GrayImage:
    """det(M) - alpha * trace(M)**2, without any scale factor."""
    a, b, c = field.a.data, field.b.data, field.c.data
    tr = a + c
    return GrayImage(a * c - b * b - alpha * tr * tr)


def _disk(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    return (x * x + y * y) <= radius * radius + 1e-9


def _refine(cmap: np.ndarray, v: int, u: int) -> tuple[float, float]:
    """Sub-pixel peak from a least-squares quadratic over the 3x3 neighbourhood."""
    patch = cmap[v - 1 : v + 2, u - 1 : u + 2]
    if patch.shape != (3, 3):
        return float(u), float(v)
    ys, xs = np.mgrid[-1:2, -1:2]
    x, y, f = xs.ravel(), ys.ravel(), patch.ravel()
    design = np.column_stack([np.ones(9), x, y, x * x, x * y, y * y])
    c, *_ = np.linalg.lstsq(design, f, rcond=None)
    hess = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    du = dv = 0.0
    if np.linalg.det(hess) > 0 and hess[0, 0] < 0:
        du, dv = np.linalg.solve(hess, -c[1:3])
    if not (abs(du) <= 1 and abs(dv) <= 1):
        # fall back to independent 1-D parabolas
        du = dv = 0.0
        den_u = patch[1, 0] - 2 * patch[1, 1] + patch[1, 2]
        den_v = patch[0, 1] - 2 * patch[1, 1] + patch[2, 1]
        if den_u < 0:
            du = 0.5 * (patch[1, 0] - patch[1, 2]) / den_u
        if den_v < 0:
            dv = 0.5 * (patch[0, 1] - patch[2, 1]) / den_v
    du = float(np.clip(du, -0.5, 0.5))
    dv = float(np.clip(dv, -0.5, 0.5))
    return u + du, v + dv


def border_margin(params: DetectorParams, s: float) -> int:
    return int(math.ceil(3 * s * params.sigma_tilde))


def scaled_cornerness(img: GrayImage, params: DetectorParams, s: float) -> np.ndarray:
    """s**4 * C_s at every pixel."""
    return cornerness(autocorrelation(img, params, s), params.alpha).data * s**4


def detect(img: GrayImage, params: DetectorParams | None = None, s: float = 1.0) -> PointSet:
    params = params or DetectorParams()
    if s < 1:
        raise ParameterError(f"scale must be >= 1, got {s}")
    margin = border_margin(params, s)
    if img.width <= 2 * margin or img.height <= 2 * margin:
        return PointSet(s, [], f"image {img.width}x{img.height} smaller than twice the border margin {margin}")

    cmap = scaled_cornerness(img, params, s)
    inner = np.zeros(cmap.shape, dtype=bool)
    inner[margin : img.height - margin, margin : img.width - margin] = True
    peak = float(cmap[inner].max())
    if not peak > 0:
        return PointSet(s, [], "no positive cornerness")
    t = params.rel_threshold * peak

    radius = params.nms_radius * s
    local_max = cmap == maximum_filter(cmap, footprint=_disk(radius), mode="nearest")
    cand = np.nonzero(local_max & inner & (cmap > t))
    order = np.lexsort((cand[1], cand[0], -cmap[cand]))
    taken: list[tuple[int, int]] = []
    r2 = radius * radius
    for k in order:
        v, u = int(cand[0][k]), int(cand[1][k])
        # equal-valued neighbours on a plateau: keep only the first in raster order
        if any((u - tu) ** 2 + (v - tv) ** 2 <= r2 for tu, tv in taken):
            continue
        taken.append((u, v))

    points = []
    for u, v in taken:
        ru, rv = _refine(cmap, v, u)
        points.append(InterestPoint(ru, rv, s, float(cmap[v, u])))
    return PointSet(s, points)


def detect_scale_space(img: GrayImage, params: DetectorParams | None = None, scales=range(1, 9)) -> list[PointSet]:
    scales = list(scales)
    if not scales:
        raise ParameterError("at least one scale is required")
    return [detect(img, params, s) for s in scales]
