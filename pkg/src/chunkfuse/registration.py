"""Static-aware overlap abstraction and confidence-weighted registration.

The closed-form weighted solvers here (similarity and rigid) are also
reused by the dynamic fusion stage and the trajectory metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chunking import OverlapView
from .errors import DegenerateConfiguration, NotEnoughPoints
from .model import PipelineConfig, SimilarityTransform

RANK_TOL = 1e-12


@dataclass(frozen=True)
class OverlapAbstraction:
    """Static anchors and dynamic supports of one overlap.

    Static anchors pass the confidence test (mean over the overlap above
    gamma_c in both chunks) and the rigidity test (max pairwise temporal
    displacement below the rigidity threshold, evaluated in each chunk's
    own gauge against that chunk's own scale). Dynamic supports pass
    confidence but fail rigidity. Pixels failing confidence belong to
    neither set. ``scene_scale`` and ``gamma_stat`` refer to chunk i, whose
    gauge is the pair's working frame.
    """

    static_mask: np.ndarray
    dynamic_mask: np.ndarray
    mean_conf_i: np.ndarray
    mean_conf_j: np.ndarray
    gamma_stat: float
    scene_scale: float
    gamma_stat_j: float = 0.0
    scene_scale_j: float = 0.0

    def __post_init__(self):
        if (self.static_mask & self.dynamic_mask).any():
            raise ValueError("static and dynamic sets must be disjoint")
        if self.gamma_stat_j == 0.0:
            object.__setattr__(self, "gamma_stat_j", self.gamma_stat)
        if self.scene_scale_j == 0.0:
            object.__setattr__(self, "scene_scale_j", self.scene_scale)

    @property
    def num_static(self) -> int:
        return int(self.static_mask.sum())

    @property
    def num_dynamic(self) -> int:
        return int(self.dynamic_mask.sum())


def _median_distance(points: np.ndarray, confidence: np.ndarray, centers: np.ndarray) -> float:
    d = np.linalg.norm(points - centers[:, None, None, :], axis=-1)
    kept = d[confidence > 0]
    if kept.size == 0:
        kept = d.ravel()
    kept = kept[np.isfinite(kept)]
    return float(np.median(kept)) if kept.size else 1.0


def chunk_scene_scale(chunk, frames) -> float:
    """Median camera-to-point distance of one chunk over the given frames,
    in that chunk's own gauge."""
    preds = [chunk.frame(f) for f in frames]
    pts = np.stack([p.points for p in preds])
    cnf = np.stack([p.confidence for p in preds])
    centers = np.stack([p.pose.center for p in preds])
    return _median_distance(pts, cnf, centers)


def pair_scene_scale(overlap: OverlapView) -> float:
    """Median camera-to-point distance of chunk i over the overlap; chunk
    i's gauge is the pair's working frame."""
    pts_i, cnf_i, _, _ = overlap.stacked()
    c_i, _ = overlap.centers()
    return _median_distance(pts_i, cnf_i, c_i)


def _max_pairwise_displacement(points: np.ndarray) -> np.ndarray:
    """Exact max over frame pairs of per-pixel displacement, (H, W).

    O(T^2) over overlap frames; exact for the small overlaps this pipeline
    uses (T <= 8 by default).
    """
    T = points.shape[0]
    out = np.zeros(points.shape[1:3])
    for a in range(T):
        for b in range(a + 1, T):
            d = np.linalg.norm(points[a] - points[b], axis=-1)
            np.maximum(out, d, out=out)
    return out


def resolve_gamma_stat(cfg: PipelineConfig, scene_scale: float) -> float:
    if cfg.gamma_stat is not None:
        return cfg.gamma_stat
    return cfg.gamma_stat_frac * scene_scale


def select_anchors(overlap: OverlapView, cfg: PipelineConfig) -> OverlapAbstraction:
    """Split overlap pixels into static anchors and dynamic supports."""
    if len(overlap) < 2:
        raise ValueError("anchor selection needs an overlap of at least 2 frames")
    pts_i, cnf_i, pts_j, cnf_j = overlap.stacked()
    c_i, c_j = overlap.centers()
    scale_i = _median_distance(pts_i, cnf_i, c_i)
    scale_j = _median_distance(pts_j, cnf_j, c_j)
    gamma_i = resolve_gamma_stat(cfg, scale_i)
    gamma_j = resolve_gamma_stat(cfg, scale_j)

    mean_i = cnf_i.mean(axis=0)
    mean_j = cnf_j.mean(axis=0)
    confident = (mean_i > cfg.gamma_c) & (mean_j > cfg.gamma_c)

    with np.errstate(invalid="ignore"):
        disp_i = _max_pairwise_displacement(pts_i)
        disp_j = _max_pairwise_displacement(pts_j)
        rigid = (disp_i < gamma_i) & (disp_j < gamma_j)

    static_mask = confident & rigid
    dynamic_mask = confident & ~static_mask
    return OverlapAbstraction(
        static_mask=static_mask,
        dynamic_mask=dynamic_mask,
        mean_conf_i=mean_i,
        mean_conf_j=mean_j,
        gamma_stat=gamma_i,
        scene_scale=scale_i,
        gamma_stat_j=gamma_j,
        scene_scale_j=scale_j,
    )


def _weighted_moments(src, dst, weights):
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if not (len(src) == len(dst) == len(w)):
        raise ValueError("src, dst and weights must have the same length")
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    keep = w > 0
    src, dst, w = src[keep], dst[keep], w[keep]
    if len(src) < 3:
        raise NotEnoughPoints(f"need >= 3 positive-weight correspondences, got {len(src)}")
    wsum = w.sum()
    mu_src = (w[:, None] * src).sum(axis=0) / wsum
    mu_dst = (w[:, None] * dst).sum(axis=0) / wsum
    src_c = src - mu_src
    dst_c = dst - mu_dst
    cov = (dst_c * w[:, None]).T @ src_c / wsum
    var_src = float((w * (src_c**2).sum(axis=1)).sum() / wsum)
    return src_c, dst_c, w, wsum, mu_src, mu_dst, cov, var_src


def _rotation_from_cov(cov: np.ndarray, src_c: np.ndarray, w: np.ndarray, wsum: float):
    # Rank check on the weighted source covariance: collinear or coincident
    # sources leave the rotation under-determined.
    src_cov = (src_c * w[:, None]).T @ src_c / wsum
    svals = np.linalg.svd(src_cov, compute_uv=False)
    if svals[1] < RANK_TOL * max(svals[0], RANK_TOL):
        raise DegenerateConfiguration(
            "weighted source covariance has rank < 2 (collinear or coincident points)"
        )
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[-1] = -1.0
    R = (U * S) @ Vt
    return R, D, S


def solve_weighted_similarity(src, dst, weights) -> SimilarityTransform:
    """Global minimizer of sum w_i ||s R src_i + t - dst_i||^2.

    Weighted closed form: weighted centroids, weighted 3x3 cross-covariance,
    SVD with determinant correction (the smallest singular direction flips
    sign when det(U Vt) < 0), scale from the corrected singular-value trace
    over the weighted source variance, translation from the centroids.
    """
    src_c, dst_c, w, wsum, mu_src, mu_dst, cov, var_src = _weighted_moments(src, dst, weights)
    R, D, S = _rotation_from_cov(cov, src_c, w, wsum)
    scale = float((D * S).sum() / var_src)
    if scale <= 0 or not np.isfinite(scale):
        raise DegenerateConfiguration(f"non-positive recovered scale {scale}")
    t = mu_dst - scale * (R @ mu_src)
    return SimilarityTransform(scale, R, t)


def solve_weighted_rigid(src, dst, weights, scale: float = 1.0) -> SimilarityTransform:
    """Weighted Kabsch with a fixed scale: minimizes over (R, t) only."""
    src = np.asarray(src, dtype=np.float64) * scale
    src_c, dst_c, w, wsum, mu_src, mu_dst, cov, _ = _weighted_moments(src, dst, weights)
    R, _, _ = _rotation_from_cov(cov, src_c, w, wsum)
    t = mu_dst - R @ mu_src
    return SimilarityTransform(scale, R, t)


@dataclass(frozen=True)
class RegistrationReport:
    """Summary of one pairwise static registration attempt."""

    anchor_count: int
    correspondence_count: int
    residual_rms: float
    scene_scale: float

    @property
    def quality_ok(self) -> bool:
        return self.anchor_count > 0 and np.isfinite(self.residual_rms)


def registration_residual_rms(
    T: SimilarityTransform, src: np.ndarray, dst: np.ndarray, weights: np.ndarray
) -> float:
    r = np.linalg.norm(T.apply(src) - dst, axis=-1)
    wsum = weights.sum()
    if wsum <= 0:
        return float("nan")
    return float(np.sqrt((weights * r**2).sum() / wsum))


def static_correspondences(overlap: OverlapView, abstraction: OverlapAbstraction):
    """One correspondence per (overlap frame, static anchor), chunk j -> i.

    Weights are the per-sample geometric mean sqrt(c_i * c_j).
    """
    pts_i, cnf_i, pts_j, cnf_j = overlap.stacked()
    mask = abstraction.static_mask
    src = pts_j[:, mask, :].reshape(-1, 3)
    dst = pts_i[:, mask, :].reshape(-1, 3)
    w = np.sqrt(cnf_i[:, mask] * cnf_j[:, mask]).ravel()
    return src, dst, w


def register_pair(
    overlap: OverlapView, abstraction: OverlapAbstraction, cfg: PipelineConfig
) -> tuple[SimilarityTransform, RegistrationReport]:
    """Confidence-weighted similarity registration on the static anchors.

    Maps chunk j's gauge into chunk i's. Dynamic supports are excluded
    entirely, so corrupt them as you like: the result cannot change.
    Raises NotEnoughPoints / DegenerateConfiguration for the caller's
    fallback logic rather than aborting.
    """
    src, dst, w = static_correspondences(overlap, abstraction)
    T = solve_weighted_similarity(src, dst, w)
    report = RegistrationReport(
        anchor_count=abstraction.num_static,
        correspondence_count=int((w > 0).sum()),
        residual_rms=registration_residual_rms(T, src, dst, w),
        scene_scale=abstraction.scene_scale,
    )
    return T, report
