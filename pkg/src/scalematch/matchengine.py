"""One-to-many matching of a high-resolution image against a low-resolution one.

Per detector scale ``s`` the pipeline is: Harris points of the high image at
``s`` and of the low image at 1, nearest-neighbour candidates under the
Mahalanobis distance, local-collection filtering, RANSAC, and a final
SSD check. The scale with the most surviving matches wins.

Point coordinates always stay in the pixel grid of their own image, so the
fitted model maps high-image pixels straight to low-image pixels and its
scale is the inverse of the resolution ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from scalematch.descriptor import (
    CovarianceModel,
    describe,
    estimate_covariance,
    mahalanobis_matrix,
)
from scalematch.errors import (
    BorderError,
    DegenerateConfigurationError,
    DegenerateImageError,
    NoConsensusError,
    ParameterError,
)
from scalematch.imagecore import GrayImage, normalize_photometric, sample_bilinear, smooth
from scalematch.scaledetect import DetectorParams, InterestPoint, PointSet, detect
from scalematch.transforms import MINIMAL_MATCHES, SimilarityTransform, TransformModel, estimate_model

CANDIDATE = "candidate"
SUPPORTED = "locally-supported"
INLIER = "inlier"
OUTLIER = "outlier"


@dataclass
class Match:
    index_high: int
    index_low: int
    distance: float
    status: str = CANDIDATE

    @property
    def key(self) -> tuple[int, int]:
        return (self.index_high, self.index_low)


@dataclass(frozen=True)
class MatchConfig:
    d_max: float = 3.0
    support_radius: float = 40.0
    min_support: int = 2
    consistency_tol: float = 3.0
    model: str = "similarity"
    inlier_tol: float = 2.0
    confidence: float = 0.999
    max_iterations: int = 10_000
    ssd_cutoff: float = 0.02
    ssd_half_window: int = 7
    descriptor_sigma: float = 2.0
    photometric: str = "joint"
    seed: int = 0

    def __post_init__(self):
        if self.model not in MINIMAL_MATCHES:
            raise ParameterError(f"unknown model kind {self.model!r}")
        if self.photometric not in ("joint", "independent"):
            raise ParameterError(f"photometric must be 'joint' or 'independent', got {self.photometric!r}")
        if not self.descriptor_sigma > 0:
            raise ParameterError("descriptor_sigma must be > 0")
        if not 0 < self.confidence < 1:
            raise ParameterError(f"confidence must lie in (0, 1), got {self.confidence}")
        for name in ("d_max", "support_radius", "consistency_tol", "inlier_tol", "ssd_cutoff"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _coords(points) -> np.ndarray:
    if isinstance(points, PointSet):
        return points.coords()
    if len(points) and isinstance(points[0], InterestPoint):
        return np.array([[p.u, p.v] for p in points], dtype=np.float64)
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


def candidate_matches(high_desc, low_desc, cov: CovarianceModel, d_max: float = 3.0) -> list[Match]:
    """Nearest low-image descriptor for every high-image descriptor, if within ``d_max``."""
    high_desc = np.asarray(high_desc, dtype=np.float64).reshape(-1, 7)
    low_desc = np.asarray(low_desc, dtype=np.float64).reshape(-1, 7)
    if len(high_desc) == 0 or len(low_desc) == 0:
        return []
    d = mahalanobis_matrix(high_desc, low_desc, cov)
    best = np.argmin(d, axis=1)  # first minimum, i.e. lowest low index on ties
    out = []
    for i, j in enumerate(best):
        if d[i, j] <= d_max:
            out.append(Match(i, int(j), float(d[i, j])))
    return out


def _residuals(model: TransformModel, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return np.sqrt(((model.apply_points(src) - dst) ** 2).sum(axis=1))


def local_support(
    matches: list[Match],
    high,
    low,
    radius_high: float,
    radius_low: float,
    min_support: int = 2,
    tol: float = 3.0,
) -> list[Match]:
    """Keep matches backed by a locally consistent collection of neighbouring matches.

    For a central match, neighbour matches lie within ``radius_high`` of its
    high point and ``radius_low`` of its low point. Pairing the centre with one
    neighbour fixes a similarity; the match is kept as soon as some pairing
    agrees (residual <= ``tol`` low pixels) with ``min_support`` other
    neighbours. Neighbourhoods too sparse to ever reach that support keep their
    match unchanged, since there is nothing to judge it by.
    """
    hp = _coords(high)
    lp = _coords(low)
    if not matches:
        return []
    src = np.array([hp[m.index_high] for m in matches])
    dst = np.array([lp[m.index_low] for m in matches])
    out = []
    for c, m in enumerate(matches):
        near = np.nonzero(
            (np.hypot(*(src - src[c]).T) <= radius_high)
            & (np.hypot(*(dst - dst[c]).T) <= radius_low)
        )[0]
        near = [int(k) for k in near if k != c and not np.array_equal(src[k], src[c])]
        if len(near) < min_support + 1:
            out.append(replace(m))
            continue
        supported = False
        # depth-first over the second match of the pair, stopping at the first success
        for k in near:
            try:
                sim = estimate_model(src[[c, k]], dst[[c, k]], "similarity")
            except DegenerateConfigurationError:
                continue
            others = [j for j in near if j != k]
            res = _residuals(sim, src[others], dst[others])
            if int((res <= tol).sum()) >= min_support:
                supported = True
                break
        if supported:
            out.append(replace(m, status=SUPPORTED))
    return out


def ssd_verify(
    high_img: GrayImage,
    low_img: GrayImage,
    t: SimilarityTransform,
    point_low,
    half_window: int = 7,
) -> float:
    """Mean squared intensity difference over a window centred on a low-image point.

    The window is a (2k+1)^2 grid of unit shifts in the low image; the high
    image is sampled at the preimages under ``t`` (high -> low).
    """
    k = int(half_window)
    cu, cv = float(point_low[0]), float(point_low[1])
    dv, du = np.mgrid[-k : k + 1, -k : k + 1].astype(np.float64)
    lu, lv = cu + du.ravel(), cv + dv.ravel()
    low_vals, ok_low = sample_bilinear(low_img.data, lu, lv)
    hu, hv = t.inverse().apply(lu, lv)
    high_vals, ok_high = sample_bilinear(high_img.data, hu, hv)
    if not (ok_low.all() and ok_high.all()):
        raise BorderError("SSD window leaves the image")
    diff = high_vals - low_vals
    return float(np.mean(diff * diff))


def _iterations_needed(inlier_ratio: float, sample_size: int, confidence: float, cap: int) -> int:
    good = inlier_ratio**sample_size
    if good >= 1.0:
        return 1
    if good <= 0.0:
        return cap
    return min(cap, int(math.ceil(math.log(1 - confidence) / math.log(1 - good))))


def ransac(
    matches: list[Match],
    high,
    low,
    kind: str = "similarity",
    inlier_tol: float = 2.0,
    confidence: float = 0.999,
    rng: np.random.Generator | int | None = 0,
    max_iterations: int = 10_000,
) -> tuple[TransformModel, list[Match]]:
    """Hypothesise-and-verify estimation of a high -> low model.

    A match is an inlier when its low-image residual is at most
    ``inlier_tol * max(1, model scale)``. Returns the least-squares refit on
    the inliers and the matches re-labelled inlier/outlier.
    """
    n_min = MINIMAL_MATCHES[kind]
    if len(matches) < n_min:
        raise NoConsensusError(f"{len(matches)} matches, need at least {n_min}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    hp = _coords(high)
    lp = _coords(low)
    src = np.array([hp[m.index_high] for m in matches])
    dst = np.array([lp[m.index_low] for m in matches])
    low_idx = np.array([m.index_low for m in matches])
    n = len(matches)

    def score(model):
        """Inlier mask, one match per low point (the closest)."""
        tol = inlier_tol * max(1.0, model.scale())
        res = _residuals(model, src, dst)
        mask = res <= tol
        cand = np.nonzero(mask)[0]
        if len(np.unique(low_idx[cand])) < len(cand):
            mask[:] = False
            order = cand[np.lexsort((cand, res[cand]))]
            _, first = np.unique(low_idx[order], return_index=True)
            mask[order[first]] = True
        return mask

    best_mask = None
    best_count = 0
    best_err = math.inf
    needed = max_iterations
    it = 0
    while it < min(needed, max_iterations):
        it += 1
        idx = rng.choice(n, size=n_min, replace=False)
        try:
            model = estimate_model(src[idx], dst[idx], kind)
        except DegenerateConfigurationError:
            continue
        mask = score(model)
        count = int(mask.sum())
        if count < best_count:
            continue
        err = float(_residuals(model, src[mask], dst[mask]).sum()) if count else math.inf
        if count > best_count or err < best_err:
            best_mask, best_count, best_err = mask, count, err
            needed = _iterations_needed(count / n, n_min, confidence, max_iterations)

    if best_mask is None or best_count < n_min + 1:
        raise NoConsensusError(f"best consensus {best_count} below {n_min + 1} matches")

    # refit on the consensus set, then let the refit relabel once more
    model = estimate_model(src[best_mask], dst[best_mask], kind)
    mask = score(model)
    if int(mask.sum()) >= n_min + 1 and not np.array_equal(mask, best_mask):
        try:
            model = estimate_model(src[mask], dst[mask], kind)
        except DegenerateConfigurationError:
            mask = best_mask
    else:
        mask = best_mask
    labelled = [replace(m, status=INLIER if mask[i] else OUTLIER) for i, m in enumerate(matches)]
    return model, labelled


@dataclass
class ScaleReport:
    scale: float
    estimated_factor: float | None
    n_points: int
    n_initial: int
    n_inliers: int
    outlier_fraction: float | None
    n_supported: int = 0
    theta: float | None = None
    mean_ssd: float | None = None
    diagnostic: str | None = None

    def to_dict(self) -> dict:
        return {
            "s": self.scale,
            "estimated_factor": self.estimated_factor,
            "n_points": self.n_points,
            "n_initial": self.n_initial,
            "n_inliers": self.n_inliers,
            "outlier_fraction": self.outlier_fraction,
        }


@dataclass
class ScaleResult:
    report: ScaleReport
    model: TransformModel | None
    inliers: list[Match]
    candidates: list[Match]
    supported: list[Match]
    high_points: PointSet


@dataclass
class PreparedImage:
    """Photometrically normalised image with its points and descriptors at one scale."""

    image: GrayImage
    points: PointSet
    descriptors: np.ndarray


def _describable(img: GrayImage, pts: PointSet, s: float, sigma: float) -> PointSet:
    r = math.ceil(3 * s * sigma)
    keep = [
        p for p in pts
        if r <= p.u <= img.width - 1 - r and r <= p.v <= img.height - 1 - r
    ]
    return PointSet(pts.scale, keep, pts.diagnostic)


def prepare(
    img: GrayImage,
    params: DetectorParams,
    s: float,
    normalized: bool = False,
    descriptor_sigma: float | None = None,
) -> PreparedImage:
    """Detect at scale ``s`` and attach descriptors computed at ``s * descriptor_sigma``."""
    dsig = params.sigma_tilde if descriptor_sigma is None else descriptor_sigma
    norm = img if normalized else normalize_photometric(img)
    pts = _describable(norm, detect(norm, params, s), s, dsig)
    desc = describe(norm, pts.coords(), s, dsig)
    for p, d in zip(pts, desc):
        p.descriptor = d
    return PreparedImage(norm, pts, desc)


def _failed(s, n_points, n_initial, n_supported, why) -> ScaleReport:
    outl = 1.0 if n_initial > 0 else None
    return ScaleReport(s, None, n_points, n_initial, 0, outl, n_supported, diagnostic=why)


def match_at_scale(
    high: GrayImage | PreparedImage,
    low: PreparedImage,
    s: float,
    params: DetectorParams,
    cov: CovarianceModel,
    config: MatchConfig,
) -> ScaleResult:
    """Run the whole matching chain between the high image at scale ``s`` and the low image."""
    hi = high if isinstance(high, PreparedImage) else prepare(high, params, s, descriptor_sigma=config.descriptor_sigma)
    n_points = len(hi.points)
    cands = candidate_matches(hi.descriptors, low.descriptors, cov, config.d_max)
    sup = local_support(
        cands,
        hi.points,
        low.points,
        radius_high=config.support_radius * s,
        radius_low=config.support_radius,
        min_support=config.min_support,
        tol=config.consistency_tol,
    )
    result = ScaleResult(_failed(s, n_points, len(cands), len(sup), None), None, [], cands, sup, hi.points)
    n_min = MINIMAL_MATCHES[config.model]
    try:
        model, labelled = ransac(
            sup, hi.points, low.points, config.model, config.inlier_tol,
            config.confidence, np.random.default_rng([config.seed, int(round(s * 1000))]),
            config.max_iterations,
        )
    except NoConsensusError as exc:
        result.report.diagnostic = str(exc)
        return result

    # final photometric check on the scale-space images
    high_s = smooth(hi.image, s * params.sigma)
    low_s = smooth(low.image, params.sigma)
    lp = low.points.coords()
    inliers = [m for m in labelled if m.status == INLIER]
    scores = {}
    for _ in range(3):
        sim = model.similarity()
        kept = []
        for m in inliers:
            sc = None
            # near the high-image border, shrink the window until it fits
            for k in range(config.ssd_half_window, 1, -1):
                try:
                    sc = ssd_verify(high_s, low_s, sim, lp[m.index_low], k)
                    break
                except BorderError:
                    continue
            scores[m.key] = sc
            if sc is None or sc <= config.ssd_cutoff:
                kept.append(m)
        if len(kept) == len(inliers):
            break
        inliers = kept
        if len(inliers) < n_min + 1:
            break
        hp = hi.points.coords()
        model = estimate_model(
            np.array([hp[m.index_high] for m in inliers]), np.array([lp[m.index_low] for m in inliers]), config.model
        )
    if len(inliers) < n_min + 1:
        result.report.diagnostic = "too few matches pass the SSD check"
        return result

    valid = [scores[m.key] for m in inliers if scores.get(m.key) is not None]
    scale = model.scale()
    report = ScaleReport(
        scale=s,
        estimated_factor=1.0 / scale,
        n_points=n_points,
        n_initial=len(cands),
        n_inliers=len(inliers),
        outlier_fraction=1.0 - len(inliers) / len(cands),
        n_supported=len(sup),
        theta=model.rotation(),
        mean_ssd=float(np.mean(valid)) if valid else None,
    )
    return ScaleResult(report, model, inliers, cands, sup, hi.points)


@dataclass
class MatchResult:
    reports: list[ScaleReport]
    best_scale: float | None
    model: TransformModel | None
    inliers: list[Match] = field(default_factory=list)
    high_points: PointSet | None = None
    low_points: PointSet | None = None

    @property
    def matched(self) -> bool:
        return self.model is not None

    @property
    def factor(self) -> float | None:
        return None if self.model is None else 1.0 / self.model.scale()

    @property
    def theta(self) -> float | None:
        return None if self.model is None else self.model.rotation()


def normalize_pair(low: GrayImage, high: GrayImage, mode: str = "joint") -> tuple[GrayImage, GrayImage]:
    """Photometric normalisation of both images.

    ``joint`` applies the remap fitted on the low image to both, which keeps
    a shared camera response intact; ``independent`` normalises each image
    on its own statistics.
    """
    if mode == "independent":
        return normalize_photometric(low), normalize_photometric(high)
    ld = low.data
    sd = float(ld.std())
    if sd < 1e-12:
        raise DegenerateImageError("low-resolution image has zero intensity variance")
    mu = float(ld.mean())

    def remap(a):
        return GrayImage(np.clip(0.5 + 0.2 * (a - mu) / sd, 0.0, 1.0))

    return remap(ld), remap(high.data)


def _rank(r: ScaleReport):
    return (-r.n_inliers, r.outlier_fraction, r.mean_ssd if r.mean_ssd is not None else math.inf)


def match_one_to_many(
    high: GrayImage,
    low: GrayImage,
    scales=range(1, 9),
    params: DetectorParams | None = None,
    config: MatchConfig | None = None,
) -> MatchResult:
    """Match ``low`` against every scale-space level of ``high`` and keep the best level."""
    params = params or DetectorParams()
    config = config or MatchConfig()
    scales = [float(s) for s in scales]
    if not scales:
        raise ParameterError("at least one scale is required")
    low_norm, high_norm = normalize_pair(low, high, config.photometric)
    lo = prepare(low_norm, params, 1.0, normalized=True, descriptor_sigma=config.descriptor_sigma)
    if len(lo.descriptors) < 8:
        reports = [_failed(s, 0, 0, 0, "too few low-resolution points") for s in scales]
        return MatchResult(reports, None, None, low_points=lo.points)
    cov = estimate_covariance(lo.descriptors)
    results = [
        match_at_scale(
            prepare(high_norm, params, s, normalized=True, descriptor_sigma=config.descriptor_sigma),
            lo, s, params, cov, config,
        )
        for s in scales
    ]
    good = [r for r in results if r.model is not None]
    if not good:
        return MatchResult([r.report for r in results], None, None, low_points=lo.points)
    best = min(good, key=lambda r: _rank(r.report))
    return MatchResult(
        [r.report for r in results], best.report.scale, best.model, best.inliers, best.high_points, lo.points
    )
