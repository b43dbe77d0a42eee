"""Grey-level images, Gaussian kernels, separable convolution and resampling.

Coordinates follow the array layout: ``u`` is the column index, ``v`` the row
index, and pixel centres sit on integer coordinates. Every image operation
returns a new :class:`GrayImage`; inputs are never modified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.ndimage import convolve1d

from scalematch.errors import DegenerateImageError, ParameterError

if TYPE_CHECKING:
    from scalematch.transforms import SimilarityTransform

KERNEL_TRUNCATE = 3.0


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable 2-D intensity grid, row-major, stored as float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ParameterError(f"image data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ParameterError(f"image must be at least 1x1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("image contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.shape, self.data.tobytes()))

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


@dataclass(frozen=True)
class KernelSpec:
    sigma: float
    kind: str = "smooth"  # smooth | derivative-u | derivative-v
    radius: int | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.kind not in ("smooth", "derivative-u", "derivative-v"):
            raise ParameterError(f"unknown kernel kind {self.kind!r}")
        if self.radius is not None and self.radius < 0:
            raise ParameterError(f"radius must be >= 0, got {self.radius}")


def kernel_radius(sigma: float) -> int:
    return int(math.ceil(KERNEL_TRUNCATE * sigma))


def gaussian_derivative_taps(sigma: float, order: int = 0, radius: int | None = None) -> np.ndarray:
    """1-D sampled Gaussian derivative of the given order (0 to 3).

    Taps are meant for true convolution. They are corrected so that the discrete
    operator is exact on polynomials up to degree ``order``: smoothing preserves
    constants, and the order-n kernel maps ``x**n / n!`` to 1 and every lower
    degree monomial to 0.
    """
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    if order not in (0, 1, 2, 3):
        raise ParameterError(f"derivative order must be 0..3, got {order}")
    # an order-n kernel needs (n + 1) // 2 taps per side to meet its moment conditions
    min_r = (order + 1) // 2
    r = max(kernel_radius(sigma), min_r) if radius is None else int(radius)
    if r < min_r:
        raise ParameterError(f"radius {r} too small for a derivative of order {order}")
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    if order == 0:
        return g / g.sum()
    s2 = sigma * sigma
    if order == 1:
        k = -x / s2 * g
        k -= k.mean()
        # convolving f(x)=x gives -sum(j * k_j)
        return k / -(x * k).sum()
    if order == 2:
        k = (x * x - s2) / (s2 * s2) * g
        k -= g * (k.sum() / g.sum())
        return k / ((x * x * k).sum() / 2.0)
    k = (3.0 * s2 * x - x**3) / (s2**3) * g
    # remove the first moment with the odd companion x*g, keeping symmetry
    xg = x * g
    k -= xg * ((x * k).sum() / (x * xg).sum())
    k -= k.mean()
    return k / (-(x**3 * k).sum() / 6.0)


def gaussian_kernel(spec: KernelSpec) -> np.ndarray:
    """Taps for a smoothing or first-derivative Gaussian kernel."""
    order = 0 if spec.kind == "smooth" else 1
    return gaussian_derivative_taps(spec.sigma, order, spec.radius)


def _as_array(img) -> np.ndarray:
    return img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)


def convolve_separable(img: GrayImage, horizontal, vertical) -> GrayImage:
    """Convolve rows with ``horizontal`` and columns with ``vertical``.

    Borders are mirrored without repeating the edge sample (``c b | a b c``).
    """
    arr = _as_array(img)
    h = np.asarray(horizontal, dtype=np.float64)
    v = np.asarray(vertical, dtype=np.float64)
    for taps, n, axis_name in ((h, arr.shape[1], "horizontal"), (v, arr.shape[0], "vertical")):
        if taps.ndim != 1 or taps.size % 2 != 1:
            raise ParameterError(f"{axis_name} kernel must be 1-D with odd length")
        if taps.size // 2 >= n:
            raise ParameterError(
                f"{axis_name} kernel radius {taps.size // 2} does not fit image dimension {n}"
            )
    out = convolve1d(arr, h, axis=1, mode="mirror")
    out = convolve1d(out, v, axis=0, mode="mirror")
    return GrayImage(out)


def smooth(img: GrayImage, sigma: float) -> GrayImage:
    g = gaussian_derivative_taps(sigma, 0)
    return convolve_separable(img, g, g)


def derivative(img: GrayImage, sigma: float, order_u: int, order_v: int) -> GrayImage:
    """Gaussian derivative d^(order_u+order_v) I / du^order_u dv^order_v at scale ``sigma``."""
    return convolve_separable(
        img,
        gaussian_derivative_taps(sigma, order_u),
        gaussian_derivative_taps(sigma, order_v),
    )


@dataclass(frozen=True)
class GradientPair:
    iu: GrayImage
    iv: GrayImage
    sigma: float


def gradients(img: GrayImage, sigma: float) -> GradientPair:
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    g = gaussian_derivative_taps(sigma, 0)
    d = gaussian_derivative_taps(sigma, 1)
    return GradientPair(convolve_separable(img, d, g), convolve_separable(img, g, d), sigma)


def normalize_photometric(img: GrayImage, mean: float = 0.5, std: float = 0.2, clamp: bool = True) -> GrayImage:
    """Affinely remap intensities to the target mean and standard deviation."""
    arr = _as_array(img)
    sd = float(arr.std())
    if sd < 1e-12:
        raise DegenerateImageError("image has zero intensity variance")
    out = mean + std * (arr - arr.mean()) / sd
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return GrayImage(out)


def sample_bilinear(arr: np.ndarray, u, v, fill: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear samples of ``arr`` at (u, v) plus a mask of in-bounds locations."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    hgt, wid = arr.shape
    valid = (u >= 0) & (u <= wid - 1) & (v >= 0) & (v <= hgt - 1)
    uc = np.clip(u, 0, wid - 1)
    vc = np.clip(v, 0, hgt - 1)
    u0 = np.minimum(np.floor(uc).astype(np.intp), max(wid - 2, 0))
    v0 = np.minimum(np.floor(vc).astype(np.intp), max(hgt - 2, 0))
    u1 = np.minimum(u0 + 1, wid - 1)
    v1 = np.minimum(v0 + 1, hgt - 1)
    fu = uc - u0
    fv = vc - v0
    top = arr[v0, u0] * (1 - fu) + arr[v0, u1] * fu
    bot = arr[v1, u0] * (1 - fu) + arr[v1, u1] * fu
    out = top * (1 - fv) + bot * fv
    return np.where(valid, out, fill), valid


def warp_similarity(
    img: GrayImage, t: SimilarityTransform, out_width: int, out_height: int
) -> tuple[GrayImage, np.ndarray]:
    """Resample ``img`` onto an output grid related to it by ``x_out = t(x_src)``.

    Returns the warped image (0 outside the source) and a boolean validity mask.
    """
    if not t.h > 0:
        raise ParameterError(f"similarity scale must be > 0, got {t.h}")
    vv, uu = np.mgrid[0:out_height, 0:out_width].astype(np.float64)
    su, sv = t.inverse().apply(uu.ravel(), vv.ravel())
    vals, valid = sample_bilinear(_as_array(img), su, sv)
    return GrayImage(vals.reshape(out_height, out_width)), valid.reshape(out_height, out_width)
