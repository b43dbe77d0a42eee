"""Planar transforms (similarity, affine, homography) and their least-squares estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from scalematch.errors import DegenerateConfigurationError, ParameterError

MINIMAL_MATCHES = {"similarity": 2, "affine": 3, "homography": 4}


@dataclass(frozen=True)
class SimilarityTransform:
    """x' = h R(theta) x + (a, b)."""

    h: float
    theta: float
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.h) and self.h > 0):
            raise ParameterError(f"similarity scale must be finite and > 0, got {self.h}")

    @classmethod
    def identity(cls) -> SimilarityTransform:
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_linear(cls, p: float, q: float, a: float, b: float) -> SimilarityTransform:
        """Build from the linear parametrisation p = h cos(theta), q = h sin(theta)."""
        return cls(math.hypot(p, q), math.atan2(q, p), a, b)

    @property
    def p(self) -> float:
        return self.h * math.cos(self.theta)

    @property
    def q(self) -> float:
        return self.h * math.sin(self.theta)

    @property
    def matrix(self) -> np.ndarray:
        p, q = self.p, self.q
        return np.array([[p, -q, self.a], [q, p, self.b], [0.0, 0.0, 1.0]])

    def apply(self, u, v) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        p, q = self.p, self.q
        return p * u - q * v + self.a, q * u + p * v + self.b

    def apply_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        u, v = self.apply(pts[:, 0], pts[:, 1])
        return np.column_stack([u, v])

    def inverse(self) -> SimilarityTransform:
        hi = 1.0 / self.h
        c, s = math.cos(-self.theta), math.sin(-self.theta)
        # t' = -(1/h) R^T t
        a = -hi * (c * self.a - s * self.b)
        b = -hi * (s * self.a + c * self.b)
        return SimilarityTransform(hi, -self.theta, a, b)

    def compose(self, other: SimilarityTransform) -> SimilarityTransform:
        """self o other: apply ``other`` first."""
        m = self.matrix @ other.matrix
        return SimilarityTransform.from_linear(m[0, 0], m[1, 0], m[0, 2], m[1, 2])

    def to_model(self) -> TransformModel:
        return TransformModel("similarity", self.matrix)


@dataclass(frozen=True, eq=False)
class TransformModel:
    """A similarity, affine map or homography stored as a 3x3 matrix (H[2,2] = 1)."""

    kind: str
    matrix: np.ndarray

    def __post_init__(self):
        if self.kind not in MINIMAL_MATCHES:
            raise ParameterError(f"unknown model kind {self.kind!r}")
        m = np.array(self.matrix, dtype=np.float64).reshape(3, 3)
        if abs(m[2, 2]) < 1e-300:
            raise DegenerateConfigurationError("model matrix has zero H[2,2]")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise DegenerateConfigurationError("model matrix is rank deficient")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def minimal_matches(self) -> int:
        return MINIMAL_MATCHES[self.kind]

    @property
    def parameters(self) -> np.ndarray:
        m = self.matrix
        if self.kind == "similarity":
            return np.array([m[0, 0], m[1, 0], m[0, 2], m[1, 2]])
        if self.kind == "affine":
            return m[:2].ravel().copy()
        return m.ravel()[:8].copy()

    def apply_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        hom = np.column_stack([pts, np.ones(len(pts))]) @ self.matrix.T
        with np.errstate(divide="ignore", invalid="ignore"):
            return hom[:, :2] / hom[:, 2:3]

    def scale(self) -> float:
        """Mean linear scale factor of the model (sqrt |det| of the linear part)."""
        return math.sqrt(abs(np.linalg.det(self.matrix[:2, :2])))

    def rotation(self) -> float:
        """Rotation angle in radians of the closest similarity to the linear part."""
        m = self.matrix[:2, :2]
        return math.atan2(m[1, 0] - m[0, 1], m[0, 0] + m[1, 1])

    def similarity(self) -> SimilarityTransform:
        if self.kind == "similarity":
            m = self.matrix
            return SimilarityTransform.from_linear(m[0, 0], m[1, 0], m[0, 2], m[1, 2])
        return SimilarityTransform(self.scale(), self.rotation(), self.matrix[0, 2], self.matrix[1, 2])

    def inverse(self) -> TransformModel:
        return TransformModel(self.kind, np.linalg.inv(self.matrix))

    def __eq__(self, other):
        if not isinstance(other, TransformModel):
            return NotImplemented
        return self.kind == other.kind and bool(np.array_equal(self.matrix, other.matrix))

    def __repr__(self):
        return f"TransformModel({self.kind!r}, {self.matrix.tolist()!r})"


def _pairs(src, dst) -> tuple[np.ndarray, np.ndarray]:
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ParameterError(f"source and target point counts differ: {len(src)} vs {len(dst)}")
    return src, dst


def estimate_similarity(src, dst) -> SimilarityTransform:
    """Least-squares similarity in the linear unknowns (p, q, a, b)."""
    src, dst = _pairs(src, dst)
    if len(src) < 2:
        raise DegenerateConfigurationError("a similarity needs at least 2 correspondences")
    # centring decouples translation and keeps the system well conditioned
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    x = src - cs
    y = dst - cd
    denom = float((x * x).sum())
    if denom <= 1e-18 * max(1.0, float(np.abs(src).max()) ** 2):
        raise DegenerateConfigurationError("source points are coincident")
    p = float((x[:, 0] * y[:, 0] + x[:, 1] * y[:, 1]).sum()) / denom
    q = float((x[:, 0] * y[:, 1] - x[:, 1] * y[:, 0]).sum()) / denom
    if p == 0.0 and q == 0.0:
        raise DegenerateConfigurationError("target points are coincident")
    a = cd[0] - (p * cs[0] - q * cs[1])
    b = cd[1] - (q * cs[0] + p * cs[1])
    return SimilarityTransform.from_linear(p, q, a, b)


def estimate_affine(src, dst) -> TransformModel:
    src, dst = _pairs(src, dst)
    if len(src) < 3:
        raise DegenerateConfigurationError("an affine map needs at least 3 correspondences")
    cs = src.mean(axis=0)
    x = src - cs
    sv = np.linalg.svd(x, compute_uv=False)
    if sv[-1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateConfigurationError("source points are collinear")
    design = np.column_stack([src, np.ones(len(src))])
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    m = np.eye(3)
    m[:2] = sol.T
    return TransformModel("affine", m)


def _hartley(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d <= 1e-300:
        raise DegenerateConfigurationError("points are coincident")
    s = math.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _collinear(pts: np.ndarray, tol: float = 1e-9) -> bool:
    x = pts - pts.mean(axis=0)
    sv = np.linalg.svd(x, compute_uv=False)
    return sv[-1] <= tol * max(sv[0], 1e-300)


def estimate_homography(src, dst) -> TransformModel:
    """Normalised direct linear transform with isotropic point conditioning."""
    src, dst = _pairs(src, dst)
    if len(src) < 4:
        raise DegenerateConfigurationError("a homography needs at least 4 correspondences")
    if _collinear(src) or _collinear(dst):
        raise DegenerateConfigurationError("points are collinear")
    ts, td = _hartley(src), _hartley(dst)
    xs = np.column_stack([src, np.ones(len(src))]) @ ts.T
    xd = np.column_stack([dst, np.ones(len(dst))]) @ td.T
    n = len(src)
    a = np.zeros((2 * n, 9))
    x, y = xs[:, 0], xs[:, 1]
    u, v = xd[:, 0], xd[:, 1]
    one = np.ones(n)
    zero = np.zeros(n)
    a[0::2] = np.column_stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u])
    a[1::2] = np.column_stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v])
    _, sv, vt = np.linalg.svd(a)
    if n == 4 and sv[7] <= 1e-10 * sv[0]:
        raise DegenerateConfigurationError("correspondences do not determine a homography")
    hn = vt[-1].reshape(3, 3)
    hm = np.linalg.inv(td) @ hn @ ts
    if abs(hm[2, 2]) < 1e-12 * np.abs(hm).max():
        raise DegenerateConfigurationError("homography maps the origin to infinity")
    return TransformModel("homography", hm / hm[2, 2])


def estimate_model(src, dst, kind: str = "similarity") -> TransformModel:
    if kind == "similarity":
        return estimate_similarity(src, dst).to_model()
    if kind == "affine":
        return estimate_affine(src, dst)
    if kind == "homography":
        return estimate_homography(src, dst)
    raise ParameterError(f"unknown model kind {kind!r}")
