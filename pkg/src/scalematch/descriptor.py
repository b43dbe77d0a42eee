"""Local jets, rotation invariant differential descriptors and the Mahalanobis distance."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from scalematch.errors import BorderError, EstimationError, ParameterError
from scalematch.imagecore import GrayImage, gaussian_derivative_taps, kernel_radius

GRADIENT_EPS = 1e-6
VARIANCE_FLOOR = 1e-8
DESCRIPTOR_SIZE = 7

# (order_u, order_v) for each jet entry, in storage order
JET_ORDERS = (
    (0, 0),
    (1, 0), (0, 1),
    (2, 0), (1, 1), (0, 2),
    (3, 0), (2, 1), (1, 2), (0, 3),
)


@dataclass(frozen=True)
class LocalJet:
    L: float
    Lu: float
    Lv: float
    Luu: float
    Luv: float
    Lvv: float
    Luuu: float
    Luuv: float
    Luvv: float
    Lvvv: float

    @classmethod
    def from_array(cls, arr) -> LocalJet:
        return cls(*(float(x) for x in arr))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    def rotated(self, theta: float) -> LocalJet:
        """Jet of the same image rotated by ``theta`` (derivatives transform as tensors)."""
        c, s = math.cos(theta), math.sin(theta)
        r = np.array([[c, -s], [s, c]])
        j = self.as_array()
        g = r @ j[1:3]
        h2 = np.array([[j[3], j[4]], [j[4], j[5]]])
        h2 = r @ h2 @ r.T
        t3 = _third_tensor(j[6:10])
        t3 = np.einsum("ia,jb,kc,abc->ijk", r, r, r, t3)
        return LocalJet(j[0], g[0], g[1], h2[0, 0], h2[0, 1], h2[1, 1],
                        t3[0, 0, 0], t3[0, 0, 1], t3[0, 1, 1], t3[1, 1, 1])


def _third_tensor(d3) -> np.ndarray:
    luuu, luuv, luvv, lvvv = d3
    t = np.empty((2, 2, 2))
    t[0, 0, 0] = luuu
    t[0, 0, 1] = t[0, 1, 0] = t[1, 0, 0] = luuv
    t[0, 1, 1] = t[1, 0, 1] = t[1, 1, 0] = luvv
    t[1, 1, 1] = lvvv
    return t


@dataclass(frozen=True, eq=False)
class InvariantVector:
    v: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        v = np.array(self.v, dtype=np.float64).ravel()
        if v.size != DESCRIPTOR_SIZE:
            raise ParameterError(f"descriptor must have {DESCRIPTOR_SIZE} entries, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ParameterError("descriptor has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    diag: np.ndarray

    def __post_init__(self):
        d = np.array(self.diag, dtype=np.float64).ravel()
        if d.size != DESCRIPTOR_SIZE or not np.all(d > 0):
            raise ParameterError("covariance diagonal must hold 7 positive variances")
        d.setflags(write=False)
        object.__setattr__(self, "diag", d)

    @classmethod
    def identity(cls) -> CovarianceModel:
        return cls(np.ones(DESCRIPTOR_SIZE))


def jets_at(img: GrayImage, pts, s: float = 1.0, sigma: float = 1.0) -> np.ndarray:
    """Scale-normalised jets (N x 10) at sub-pixel points ``pts`` (N x 2, columns u, v)."""
    arr = img.data
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    scale = s * sigma
    r = kernel_radius(scale)
    hgt, wid = arr.shape
    u, v = pts[:, 0], pts[:, 1]
    bad = (u < r) | (u > wid - 1 - r) | (v < r) | (v > hgt - 1 - r)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise BorderError(f"point ({u[k]:.2f}, {v[k]:.2f}) closer than {r} px to the border")
    if len(pts) == 0:
        return np.zeros((0, len(JET_ORDERS)))
    if wid < 2 * r + 2 or hgt < 2 * r + 2:
        raise BorderError(f"image too small for jet kernels of radius {r}")

    u0 = np.minimum(np.floor(u).astype(np.intp), wid - 2 - r)
    v0 = np.minimum(np.floor(v).astype(np.intp), hgt - 2 - r)
    fu = (u - u0)[:, None]
    fv = (v - v0)[:, None]
    size = 2 * r + 2
    off = np.arange(-r, r + 2)
    rows = (v0[:, None] + off)[:, :, None]
    cols = (u0[:, None] + off)[:, None, :]
    patches = arr[rows, cols]  # N x size x size

    # flipped taps turn convolution into a dot product with the window
    taps = [gaussian_derivative_taps(scale, n, r)[::-1] for n in range(4)]
    along_u = {}
    for n in range(4):
        a0 = patches[:, :, 0 : size - 1] @ taps[n]
        a1 = patches[:, :, 1:size] @ taps[n]
        along_u[n] = (a0, a1)  # each N x size
    out = np.empty((len(pts), len(JET_ORDERS)))
    for col, (ou, ov) in enumerate(JET_ORDERS):
        a0, a1 = along_u[ou]
        kv = taps[ov]
        c00 = a0[:, 0 : size - 1] @ kv
        c10 = a1[:, 0 : size - 1] @ kv
        c01 = a0[:, 1:size] @ kv
        c11 = a1[:, 1:size] @ kv
        val = (c00 * (1 - fu[:, 0]) + c10 * fu[:, 0]) * (1 - fv[:, 0]) + (c01 * (1 - fu[:, 0]) + c11 * fu[:, 0]) * fv[:, 0]
        out[:, col] = val * scale ** (ou + ov)
    return out


def local_jet(img: GrayImage, p, s: float = 1.0, sigma: float = 1.0) -> LocalJet:
    return LocalJet.from_array(jets_at(img, [p], s, sigma)[0])


def invariants_array(jets: np.ndarray, eps: float = GRADIENT_EPS) -> np.ndarray:
    """Descriptor rows (N x 7) from jet rows (N x 10)."""
    j = np.atleast_2d(np.asarray(jets, dtype=np.float64))
    energy = j[:, 1] ** 2 + j[:, 2] ** 2
    g = np.maximum(np.sqrt(energy), eps)
    n = j[:, 1:] / g[:, None]
    nu, nv, nuu, nuv, nvv, nuuu, nuuv, nuvv, nvvv = n.T
    tu = nuuu * nu * nu + 2 * nuuv * nu * nv + nuvv * nv * nv
    tv = nuuv * nu * nu + 2 * nuvv * nu * nv + nvvv * nv * nv
    out = np.column_stack([
        np.log(np.maximum(energy, eps)),
        nuu * nu * nu + 2 * nuv * nu * nv + nvv * nv * nv,
        nuu + nvv,
        nuu * nuu + 2 * nuv * nuv + nvv * nvv,
        nu * tv - nv * tu,
        (nuuu + nuvv) * nu + (nuuv + nvvv) * nv,
        nuuu * nu**3 + 3 * nuuv * nu * nu * nv + 3 * nuvv * nu * nv * nv + nvvv * nv**3,
    ])
    return out


def invariants(jet: LocalJet, scale: float = 1.0) -> InvariantVector:
    return InvariantVector(invariants_array(jet.as_array())[0], scale)


def describe(img: GrayImage, pts, s: float = 1.0, sigma: float = 1.0) -> np.ndarray:
    """Invariant descriptors (N x 7) at the given points."""
    return invariants_array(jets_at(img, pts, s, sigma)) if len(pts) else np.zeros((0, DESCRIPTOR_SIZE))


def estimate_covariance(vectors) -> CovarianceModel:
    """Diagonal population variance of the descriptors, floored at 1e-8."""
    arr = np.array([x.v if isinstance(x, InvariantVector) else x for x in vectors], dtype=np.float64)
    arr = arr.reshape(-1, DESCRIPTOR_SIZE)
    if len(arr) < 8:
        raise EstimationError(f"need at least 8 descriptors to estimate a covariance, got {len(arr)}")
    return CovarianceModel(np.maximum(arr.var(axis=0), VARIANCE_FLOOR))


def _vec(x) -> np.ndarray:
    return x.v if isinstance(x, InvariantVector) else np.asarray(x, dtype=np.float64)


def mahalanobis(v1, v2, cov: CovarianceModel) -> float:
    d = _vec(v1) - _vec(v2)
    return float(math.sqrt(float(np.sum(d * d / cov.diag))))


def mahalanobis_matrix(a: np.ndarray, b: np.ndarray, cov: CovarianceModel) -> np.ndarray:
    """Pairwise distances between descriptor rows of ``a`` (N x 7) and ``b`` (M x 7)."""
    w = 1.0 / np.sqrt(cov.diag)
    aw = np.asarray(a, dtype=np.float64).reshape(-1, DESCRIPTOR_SIZE) * w
    bw = np.asarray(b, dtype=np.float64).reshape(-1, DESCRIPTOR_SIZE) * w
    diff = aw[:, None, :] - bw[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
